"""Angle CSV files.

* single-record files: one line ``angle1,angle2,angle3``;
* prediction files: header ``id,angle1,angle2,angle3`` then one row per record.

Angles are written in fixed-point with 4 decimals unless told otherwise.
"""

from __future__ import annotations

import csv
import io
import math

from .geometry.cobb import CobbTriple

HEADER = ["id", "angle1", "angle2", "angle3"]


class AngleFileError(ValueError):
    pass


def format_triple(t, decimals: int = 4) -> str:
    return ",".join(f"{float(v):.{decimals}f}" for v in t)


def _floats(values, where):
    try:
        out = [float(v) for v in values]
    except ValueError:
        raise AngleFileError(f"{where}: non-numeric angle in {values!r}") from None
    if not all(math.isfinite(v) for v in out):
        raise AngleFileError(f"{where}: non-finite angle")
    return CobbTriple(*out)


def parse_triple(text: str, where: str = "angles") -> CobbTriple:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if len(lines) != 1:
        raise AngleFileError(f"{where}: expected one line of 3 angles, got {len(lines)} lines")
    parts = lines[0].split(",")
    if len(parts) != 3:
        raise AngleFileError(f"{where}: expected 3 comma-separated angles, got {len(parts)}")
    return _floats(parts, where)


def read_triple(path) -> CobbTriple:
    with open(path, encoding="utf-8") as fh:
        return parse_triple(fh.read(), str(path))


def write_triple(path, t, decimals: int = 4) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_triple(t, decimals) + "\n")


def format_predictions(rows, decimals: int = 4) -> str:
    """``rows``: iterable of ``(id, triple)``."""
    out = [",".join(HEADER)]
    out += [f"{rid},{format_triple(t, decimals)}" for rid, t in rows]
    return "\n".join(out) + "\n"


def parse_predictions(text: str, where: str = "predictions") -> dict[str, CobbTriple]:
    """Parse a prediction file into ``{id: triple}`` (insertion order kept)."""
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r and any(c.strip() for c in r)]
    if not rows or [c.strip() for c in rows[0]] != HEADER:
        raise AngleFileError(f"{where}: missing header {','.join(HEADER)}")
    out: dict[str, CobbTriple] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise AngleFileError(f"{where}:{lineno}: expected 4 columns, got {len(row)}")
        rid = row[0].strip()
        if rid in out:
            raise AngleFileError(f"{where}:{lineno}: duplicate id {rid!r}")
        out[rid] = _floats(row[1:], f"{where}:{lineno}")
    return out


def read_predictions(path) -> dict[str, CobbTriple]:
    with open(path, encoding="utf-8") as fh:
        return parse_predictions(fh.read(), str(path))


def write_predictions(path, rows, decimals: int = 4) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_predictions(rows, decimals))
