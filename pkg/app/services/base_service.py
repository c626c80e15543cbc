"""
Base experiment class with the functionality shared by every experiment kind.
Provides output-directory management, result writers and the seed-parallel worker pool.
"""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from app.config import AppConfig
from app.schemas.experiment import ExperimentConfig
from app.schemas.results import DIAGNOSTICS_COLUMNS
from app.utils.logger import get_service_logger
from app.utils.persistence import append_jsonl, save_array, write_csv, write_json

# provenance record written next to the data files of every run
MANIFEST_NAME = "manifest.json"


class BaseExperiment:
    """
    Base class for experiments: owns the output directory, writers and the worker pool.
    """

    kind: str = "base"

    def __init__(self, config: ExperimentConfig, workers: Optional[int] = None):
        """
        Initialize the experiment with its validated configuration.

        Args:
            config: Validated experiment configuration
            workers: Worker processes for seed-parallel work (default SIM_DEFAULT_WORKERS)
        """
        self.config = config
        self.output_dir = config.output_path
        self.workers = max(1, workers or AppConfig.SIMULATION.DEFAULT_WORKERS)
        self.logger = logging.getLogger(self.__class__.__name__)
        self.service_logger = get_service_logger(self.kind)
        self.files: List[Path] = []

        self.logger.info(f"{self.__class__.__name__} initialized | output_dir={self.output_dir} "
                         f"workers={self.workers}")

    def previous_files(self) -> List[Path]:
        """
        Data files listed in the manifest of an earlier run in the output directory.
        Names that are not plain file names are ignored.
        """
        manifest = self.output_dir / MANIFEST_NAME
        if not manifest.is_file():
            return []
        try:
            names = json.loads(manifest.read_text(encoding="utf-8")).get("files", {})
        except (OSError, ValueError, AttributeError) as e:
            self.logger.warning(f"Ignoring unreadable manifest {manifest}: {str(e)}")
            return []
        return [self.output_dir / name for name in sorted(names) if Path(name).name == name]

    def prepare_output_dir(self):
        """
        Create the output directory and remove the data files an earlier run recorded in its
        manifest. Files the lab did not write are left alone.
        """
        self.output_dir.mkdir(parents=True, exist_ok=True)
        deleted_count = 0
        for file_path in self.previous_files():
            if not file_path.is_file():
                continue
            try:
                file_path.unlink()
                deleted_count += 1
            except OSError as e:
                self.logger.warning(f"Failed to delete stale file {file_path}: {str(e)}")
        if deleted_count > 0:
            self.logger.info(f"Output cleanup completed, deleted {deleted_count} files")

    def execute(self) -> Dict[str, Any]:
        """
        Run the experiment and return a JSON-able summary. Implemented by subclasses.
        """
        raise NotImplementedError

    def run(self) -> Dict[str, Any]:
        """
        Prepare the output directory, execute and log the operation outcome.
        """
        self.prepare_output_dir()
        with self.service_logger.operation(self.kind, name=self.config.name,
                                           seeds=len(self.config.seeds)) as outcome:
            summary = self.execute()
            outcome["files"] = len(self.files)
        return summary

    # --- worker pool ---------------------------------------------------------------------

    def map_seeds(self, fn: Callable, items: Sequence[Any]) -> List[Any]:
        """
        Apply fn to every item on a bounded process pool; results come back in item order.
        """
        items = list(items)
        if self.workers == 1 or len(items) < 2:
            return [fn(item) for item in items]
        with ProcessPoolExecutor(max_workers=min(self.workers, len(items))) as pool:
            return list(pool.map(fn, items))

    # --- writers ---------------------------------------------------------------------------

    def _track(self, path: Path) -> Path:
        if path not in self.files:
            self.files.append(path)
        return path

    def write_table(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        return self._track(write_csv(self.output_dir / name, header, rows))

    def write_diagnostics(self, name: str, rows: Iterable[Dict[str, float]]) -> Path:
        return self.write_table(name, DIAGNOSTICS_COLUMNS,
                                ([row[c] for c in DIAGNOSTICS_COLUMNS] for row in rows))

    def append_record(self, name: str, record: Dict[str, Any]) -> Path:
        path = self.output_dir / name
        # the first append of a run starts the file afresh
        if path not in self.files and path.exists():
            path.unlink()
        append_jsonl(path, record)
        return self._track(path)

    def write_document(self, name: str, payload: Dict[str, Any]) -> Path:
        return self._track(write_json(self.output_dir / name, payload))

    def save_snapshot(self, name: str, array: np.ndarray) -> Path:
        return self._track(save_array(self.output_dir / name, array))

    @staticmethod
    def tag(n: int, epsilon: float, seed: Optional[int] = None) -> str:
        """
        File-name tag for one (N, epsilon[, seed]) cell of a ladder.
        """
        base = f"N{n}_eps{epsilon:g}"
        return base if seed is None else f"{base}_seed{seed}"
