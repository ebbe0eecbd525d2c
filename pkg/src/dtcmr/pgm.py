"""16-bit binary PGM export for maps and profile figures."""

from __future__ import annotations

import os

import numpy as np


def write_pgm16(arr: np.ndarray, path, vmin: float | None = None,
                vmax: float | None = None) -> None:
    """Write a 2D array as a 16-bit P5 graymap.

    Values are scaled linearly from [vmin, vmax] to [0, 65535]; nan
    pixels map to 0.  Omitted bounds default to the finite data range.
    """
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"PGM export needs a 2D array, got shape {a.shape}")
    finite = a[np.isfinite(a)]
    lo = float(finite.min()) if (vmin is None and finite.size) else (vmin or 0.0)
    hi = float(finite.max()) if (vmax is None and finite.size) else (vmax or 1.0)
    if hi <= lo:
        hi = lo + 1.0
    scaled = np.clip((a - lo) / (hi - lo), 0.0, 1.0)
    scaled = np.where(np.isfinite(a), scaled, 0.0)
    pixels = np.round(scaled * 65535.0).astype(">u2")
    h, w = a.shape
    data = f"P5\n{w} {h}\n65535\n".encode() + pixels.tobytes()
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, os.fspath(path))


def read_pgm16(path) -> np.ndarray:
    """Read back a 16-bit P5 graymap as integers (test helper)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM file")
    parts = data.split(b"\n", 3)
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    if maxval != 65535:
        raise ValueError(f"expected 16-bit PGM, maxval {maxval}")
    return np.frombuffer(parts[3], dtype=">u2").reshape(h, w).astype(np.int64)
