"""Deterministic CSV and JSON artifacts."""
from __future__ import annotations

import json
import math
import os

import numpy as np

from .errors import IoFailure
from .grid import format_float


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def _plain(obj):
    """Convert numpy scalars and arrays to JSON types; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _write(path, text: str) -> str:
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror}") from exc
    return str(path)


def csv_text(columns, rows) -> str:
    lines = [",".join(columns)]
    lines.extend(",".join(_cell(row[c]) for c in columns) for row in rows)
    return "\n".join(lines) + "\n"


def json_text(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_csv(path, columns, rows) -> str:
    """One header line plus one line per row; floats with 17 significant digits."""
    return _write(path, csv_text(columns, rows))


def write_json(path, obj) -> str:
    """Sorted keys; floats use the shortest round-trip representation."""
    return _write(path, json_text(obj))


def emit_report(directory, stem: str, formats, table=None, summary=None) -> list:
    """Write ``stem.csv`` from ``table = (columns, rows)`` and ``stem.json`` from ``summary``."""
    written = []
    if "csv" in formats and table is not None:
        written.append(write_csv(os.path.join(directory, f"{stem}.csv"), *table))
    if "json" in formats and summary is not None:
        written.append(write_json(os.path.join(directory, f"{stem}.json"), summary))
    return written
