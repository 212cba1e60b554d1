"""Block-structured decimal text used by the checkpoint formats."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataFormatError


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def format_blocks(header: str, dims: dict[str, int], blocks: list[tuple[str, np.ndarray]]) -> str:
    """Render named arrays; 1-D arrays take one line, 2-D arrays one line per row."""
    lines = [header, "\t".join(f"{k}={v}" for k, v in dims.items())]
    for name, arr in blocks:
        arr = np.atleast_1d(np.asarray(arr, dtype=float))
        rows = arr.reshape(1, -1) if arr.ndim == 1 else arr
        lines.append(f"{name}\t{rows.shape[0]}")
        lines += ["\t".join(fmt(x) for x in row) for row in rows]
    return "\n".join(lines) + "\n"


def parse_blocks(path: str | Path, header: str) -> tuple[dict[str, int], dict[str, np.ndarray]]:
    path = str(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().rstrip("\n").split("\n")
    if not lines or lines[0] != header:
        raise DataFormatError(f"expected header {header!r}", path, 1)
    try:
        dims = {k: int(v) for k, v in (f.split("=", 1) for f in lines[1].split("\t"))}
    except (IndexError, ValueError):
        raise DataFormatError("malformed dimension line", path, 2) from None
    blocks: dict[str, np.ndarray] = {}
    pos = 2
    while pos < len(lines):
        try:
            name, count = lines[pos].split("\t")
            n = int(count)
            rows = [[float(x) for x in lines[pos + 1 + r].split("\t")] for r in range(n)]
            blocks[name] = np.array(rows, dtype=float)
        except (IndexError, ValueError):
            raise DataFormatError("malformed block", path, pos + 1) from None
        pos += 1 + n
    return dims, blocks
