"""CSV output shared by the library and the command line."""

from __future__ import annotations

import csv
from typing import Iterable, Sequence


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int,)) and not isinstance(v, bool):
        return str(v)
    try:
        f = float(v)
    except (TypeError, ValueError):
        return str(v)
    if f.is_integer() and abs(f) < 1e15 and not isinstance(v, float):
        return str(int(f))
    return repr(f)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], comment: str = "") -> None:
    """Write ``rows`` under a header line, preceded by ``# comment`` when given.

    Floats are written with ``repr`` so output round-trips exactly and is
    byte-identical for identical inputs.
    """
    with open(path, "w", newline="") as fh:
        for line in comment.splitlines():
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path):
    """Return ``(comments, header, rows)`` with rows as lists of strings."""
    comments, rows = [], []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                comments.append(line[1:].strip())
            elif line.strip():
                rows.append(line.rstrip("\n"))
    r = list(csv.reader(rows))
    return comments, r[0], r[1:]
