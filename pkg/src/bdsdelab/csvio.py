"""CSV writing with a fixed number format, so reruns are byte-identical."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FLOAT_FORMAT = "%.17g"


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % float(value)
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence], trailer: Sequence[str] = ()) -> None:
    """Write ``header`` and ``rows``; each ``trailer`` line is appended as a ``# `` comment."""
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    lines += [f"# {t}" for t in trailer]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]], list[str]]:
    """Header, data rows (as strings) and comment lines without their ``# `` prefix."""
    header, rows, comments = [], [], []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if i == 0:
            header = line.split(",")
        elif line.startswith("# "):
            comments.append(line[2:])
        elif line:
            rows.append(line.split(","))
    return header, rows, comments
