"""Binary PGM (P5) rendering of CCGRAM images."""
from __future__ import annotations

import numpy as np

MASK_GRAY = 128


def to_gray(values: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Min-max map to 0..255; cells where ``mask`` is true become mid-gray."""
    v = np.asarray(values, dtype=np.float64)
    keep = np.ones(v.shape, bool) if mask is None else ~mask
    lo, hi = (v[keep].min(), v[keep].max()) if keep.any() else (0.0, 0.0)
    span = hi - lo
    if span > 0:
        g = np.round((v - lo) / span * 255.0)
    else:
        g = np.zeros_like(v)
    g = np.clip(g, 0, 255).astype(np.uint8)
    if mask is not None:
        g[mask] = MASK_GRAY
    return g


def pgm_bytes(gray: np.ndarray, comment: str = "") -> bytes:
    gray = np.asarray(gray, dtype=np.uint8)
    rows, cols = gray.shape
    head = "P5\n"
    if comment:
        head += "".join(f"# {line}\n" for line in comment.splitlines())
    head += f"{cols} {rows}\n255\n"
    return head.encode("ascii") + gray.tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    parts = []
    pos = 0
    while len(parts) < 4:
        end = data.index(b"\n", pos)
        line = data[pos:end]
        pos = end + 1
        if line.startswith(b"#"):
            continue
        parts.extend(line.split())
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    cols, rows = int(parts[1]), int(parts[2])
    return np.frombuffer(data, dtype=np.uint8, count=rows * cols, offset=pos).reshape(rows, cols)
