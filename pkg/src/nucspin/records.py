"""CSV and JSON plumbing shared by traces, data sets and result records."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np


class TraceFormatError(ValueError):
    """Malformed trace / data CSV. The message names the file and line."""


def read_columns(path: str | Path, required: Sequence[str], optional: Sequence[str] = ()):
    """Parse a ``# unit=...`` commented CSV; returns (columns, unit, header).

    The header row must contain the ``required`` names (``optional`` ones may
    follow). Aliases ``x,y`` and ``abscissa,value`` are interchangeable.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise TraceFormatError(f"{path}: cannot read file ({exc.strerror})") from None
    unit = None
    header = None
    rows: list[list[float]] = []
    aliases = {"x": "abscissa", "y": "value", "abscissa": "abscissa", "value": "value"}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped[1:].strip()
            if body.startswith("unit="):
                unit = body[len("unit="):].strip()
            continue
        cells = [c.strip() for c in next(csv.reader([stripped]))]
        if header is None:
            header = cells
            want = [aliases.get(r, r) for r in required]
            got = [aliases.get(c, c) for c in header]
            if got[: len(want)] != want or any(c not in [aliases.get(o, o) for o in optional] for c in got[len(want):]):
                raise TraceFormatError(
                    f"{path}:{lineno}: expected header {','.join(required)}"
                    + (f"[,{','.join(optional)}]" if optional else "")
                    + f", got {stripped!r}"
                )
            continue
        if len(cells) != len(header):
            raise TraceFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(cells)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise TraceFormatError(f"{path}:{lineno}: non-numeric field in {stripped!r}") from None
    if unit is None:
        raise TraceFormatError(f"{path}:1: missing '# unit=' comment line")
    if header is None:
        raise TraceFormatError(f"{path}:1: missing header line")
    if not rows:
        raise TraceFormatError(f"{path}:{len(text.splitlines()) or 1}: empty input, no data rows")
    arr = np.array(rows, dtype=float)
    return [arr[:, i] for i in range(arr.shape[1])], unit, header


def round_sig(value, digits: int = 12):
    """Round floats (recursively) to ``digits`` significant digits for JSON output."""
    if isinstance(value, dict):
        return {k: round_sig(v, digits) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [round_sig(v, digits) for v in value]
    if isinstance(value, np.ndarray):
        return round_sig(value.tolist(), digits)
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not math.isfinite(v):
            return None
        return float(f"{v:.{digits}g}")
    return value


def dumps(payload, digits: int = 12) -> str:
    return json.dumps(round_sig(payload, digits), sort_keys=True)
