"""
Shared pytest setup: project root on sys.path, the `slow` marker and small fixtures.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add the project root to the Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale runs (minutes); select with -m slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("-m"):
        return
    skip_slow = pytest.mark.skip(reason="acceptance-scale test; run with -m slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    """Deterministic numpy generator for test inputs."""
    return np.random.default_rng(20240601)


@pytest.fixture
def cloud(rng):
    """A 64-particle standard Gaussian cloud."""
    return rng.standard_normal((64, 3))
