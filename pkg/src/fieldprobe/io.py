"""Canonical JSON and CSV output for reports."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

SIG_DIGITS = 12


def _round(x: float) -> float:
    if not np.isfinite(x):
        return float(x)
    r = float(f"{x:.{SIG_DIGITS}g}")
    return 0.0 if r == 0 else r


def canonical(obj):
    """Recursively convert to JSON-ready values with fixed significant digits."""
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return canonical(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _round(obj.real), "im": _round(obj.imag)}
    if isinstance(obj, (float, np.floating)):
        return _round(float(obj))
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "value"):  # enums
        return obj.value
    return str(obj)


def dumps(obj) -> str:
    return json.dumps(canonical(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def table_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(_round(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
