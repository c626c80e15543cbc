"""
Result-file persistence: fixed-precision CSV, crash-safe JSONL appends and file hashing.
All numeric output goes through this module so data files are byte-identical across runs.
"""

import csv
import hashlib
import io
import json
import math
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Sequence

import numpy as np

from app.utils.exceptions import PersistenceError


def format_number(value: Any) -> str:
    """
    Format a number with 17 significant digits (round-trip exact for float64).
    """
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    x = float(value)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _jsonable(value: Any) -> Any:
    """
    Convert numpy scalars/arrays and non-finite floats into JSON-safe values.
    """
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        x = float(value)
        if not math.isfinite(x):
            return None
        # repr gives the shortest round-trip representation
        return float(repr(x))
    return value


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """
    Write a numeric CSV file with a header row.

    Args:
        path: Destination file
        header: Column names
        rows: Row sequences; numbers formatted by format_number, strings written as-is

    Returns:
        The written path
    """
    path = Path(path)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([cell if isinstance(cell, str) else format_number(cell) for cell in row])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buffer.getvalue(), encoding="utf-8")
    except OSError as e:
        raise PersistenceError(f"Cannot write CSV file {path}: {str(e)}", details={"path": str(path)})
    return path


def read_csv(path: Path) -> List[Dict[str, str]]:
    """
    Read a CSV file written by write_csv into a list of row dicts (string values).
    """
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            return list(csv.DictReader(f))
    except OSError as e:
        raise PersistenceError(f"Cannot read CSV file {path}: {str(e)}", details={"path": str(path)})


def append_jsonl(path: Path, record: Dict[str, Any]) -> None:
    """
    Append one JSON record as a complete line, forcing it to disk.
    A killed run leaves every previously appended line parseable.
    """
    path = Path(path)
    line = json.dumps(_jsonable(record), sort_keys=True, allow_nan=False) + "\n"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8") as f:
            f.write(line)
            f.flush()
            os.fsync(f.fileno())
    except OSError as e:
        raise PersistenceError(f"Cannot append to {path}: {str(e)}", details={"path": str(path)})


def read_jsonl(path: Path) -> Iterator[Dict[str, Any]]:
    """
    Iterate over complete JSON lines; a truncated trailing line is skipped.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                if not line.endswith("\n"):
                    break
                line = line.strip()
                if line:
                    yield json.loads(line)
    except OSError as e:
        raise PersistenceError(f"Cannot read {path}: {str(e)}", details={"path": str(path)})


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    """
    Write a pretty-printed JSON document.
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise PersistenceError(f"Cannot write {path}: {str(e)}", details={"path": str(path)})
    return path


def save_array(path: Path, array: np.ndarray) -> Path:
    """
    Save an array as flat binary .npy.
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, np.ascontiguousarray(array), allow_pickle=False)
    except OSError as e:
        raise PersistenceError(f"Cannot write {path}: {str(e)}", details={"path": str(path)})
    return path


def sha256_file(path: Path) -> str:
    """
    Hex sha256 of a file's bytes.
    """
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_payload(payload: Dict[str, Any]) -> str:
    """
    Hex sha256 of a canonical JSON rendering (sorted keys, no whitespace).
    """
    canonical = json.dumps(_jsonable(payload), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
