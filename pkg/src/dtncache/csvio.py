"""Small CSV helpers with locale-independent 12-significant-digit numbers."""

from __future__ import annotations

import contextlib
import csv
import io
import sys
from pathlib import Path

import numpy as np


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    return str(value)


@contextlib.contextmanager
def _open(target):
    if target is None or target == "-":
        yield sys.stdout
    elif isinstance(target, io.IOBase) or hasattr(target, "write"):
        yield target
    else:
        path = Path(target)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            yield fh


def write_csv(target, header, rows) -> None:
    """Write ``header`` then ``rows`` to a path, an open file, or stdout (``"-"``)."""
    with _open(target) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
