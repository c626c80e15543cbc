"""
Coulomb mean-field lab: regularized particle simulation and verification harness.
"""

__version__ = "0.1.0"
