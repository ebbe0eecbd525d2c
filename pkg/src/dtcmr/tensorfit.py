"""Diffusion tensor estimation and tensor-level quality metrics.

The signal model is ln S = ln S0 - b g^T D g; with the tensor packed as
(dxx, dyy, dzz, dxy, dxz, dyz) each frame contributes one design row and
every pixel is an independent unweighted least-squares solve.  All
acquired averages enter the fit jointly as extra rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DiffusionMeta, FrameStack, Mask


class DesignMatrixError(ValueError):
    """The acquisition directions do not span the tensor space."""


@dataclass
class DiffusionTensor:
    """Symmetric 3x3 diffusion tensor (mm^2/s) plus the fitted S0."""

    dxx: float
    dyy: float
    dzz: float
    dxy: float
    dxz: float
    dyz: float
    s0: float = 1.0

    def as_matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.dxx, self.dxy, self.dxz],
                [self.dxy, self.dyy, self.dyz],
                [self.dxz, self.dyz, self.dzz],
            ]
        )

    @classmethod
    def from_matrix(cls, m: np.ndarray, s0: float = 1.0) -> "DiffusionTensor":
        return cls(dxx=float(m[0, 0]), dyy=float(m[1, 1]), dzz=float(m[2, 2]),
                   dxy=float(m[0, 1]), dxz=float(m[0, 2]), dyz=float(m[1, 2]),
                   s0=float(s0))


@dataclass
class TensorMap:
    """Per-pixel tensors (packed 6-vectors), fitted S0 and validity flags."""

    tensors: np.ndarray    # (H, W, 6): dxx, dyy, dzz, dxy, dxz, dyz
    s0: np.ndarray         # (H, W)
    valid: np.ndarray      # (H, W) bool

    @property
    def width(self) -> int:
        return self.tensors.shape[1]

    @property
    def height(self) -> int:
        return self.tensors.shape[0]

    def tensor_at(self, x: int, y: int) -> DiffusionTensor:
        t = self.tensors[y, x]
        return DiffusionTensor(dxx=t[0], dyy=t[1], dzz=t[2],
                               dxy=t[3], dxz=t[4], dyz=t[5],
                               s0=float(self.s0[y, x]))

    def matrices(self) -> np.ndarray:
        """All tensors as (H, W, 3, 3) symmetric matrices."""
        t = self.tensors
        m = np.empty(t.shape[:2] + (3, 3))
        m[..., 0, 0] = t[..., 0]
        m[..., 1, 1] = t[..., 1]
        m[..., 2, 2] = t[..., 2]
        m[..., 0, 1] = m[..., 1, 0] = t[..., 3]
        m[..., 0, 2] = m[..., 2, 0] = t[..., 4]
        m[..., 1, 2] = m[..., 2, 1] = t[..., 5]
        return m


@dataclass
class EigenSystem:
    """Descending eigenvalues with orthonormal (row) eigenvectors."""

    eigenvalues: np.ndarray   # (3,), descending
    eigenvectors: np.ndarray  # (3, 3), eigenvectors[i] pairs eigenvalues[i]


def design_row(meta: DiffusionMeta) -> np.ndarray:
    """Design row (1, -b gx^2, -b gy^2, -b gz^2, -2b gxgy, -2b gxgz, -2b gygz)."""
    b = meta.b_value
    gx, gy, gz = meta.direction
    return np.array([
        1.0,
        -b * gx * gx,
        -b * gy * gy,
        -b * gz * gz,
        -2.0 * b * gx * gy,
        -2.0 * b * gx * gz,
        -2.0 * b * gy * gz,
    ])


def design_matrix(metas) -> np.ndarray:
    return np.stack([design_row(m) for m in metas], axis=0)


def fit_tensor(stack: FrameStack, mask: Mask) -> TensorMap:
    """Log-linear least-squares tensor fit at every masked pixel.

    Pixels with any non-positive intensity are marked invalid and left
    untouched.  A rank-deficient design raises before any per-pixel work.
    """
    mask.check_matches(stack.width, stack.height)
    if len(stack) < 7:
        raise DesignMatrixError(
            f"tensor fit needs at least 7 frames, got {len(stack)}"
        )
    a = design_matrix(stack.metas())
    if np.linalg.matrix_rank(a) < 7:
        raise DesignMatrixError(
            "acquisition directions do not span the tensor space (rank < 7)"
        )
    data = stack.as_array().astype(np.float64)
    n, h, w = data.shape
    signals = data.reshape(n, h * w)
    valid = mask.inside.ravel() & np.all(signals > 0, axis=0)

    tensors = np.zeros((h * w, 6))
    s0 = np.zeros(h * w)
    if valid.any():
        logs = np.log(signals[:, valid])
        params, *_ = np.linalg.lstsq(a, logs, rcond=None)
        s0[valid] = np.exp(params[0])
        tensors[valid] = params[1:].T
    return TensorMap(
        tensors=tensors.reshape(h, w, 6),
        s0=s0.reshape(h, w),
        valid=valid.reshape(h, w),
    )


def eigen_decompose(t: DiffusionTensor) -> EigenSystem:
    """Descending eigen-decomposition with a fixed eigenvector sign.

    Each eigenvector is flipped so its largest-magnitude component is
    positive, making the decomposition reproducible.
    """
    evals, evecs = np.linalg.eigh(t.as_matrix())
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order].T
    for i in range(3):
        j = int(np.argmax(np.abs(evecs[i])))
        if evecs[i, j] < 0:
            evecs[i] = -evecs[i]
    return EigenSystem(eigenvalues=evals, eigenvectors=evecs)


def principal_directions(tmap: TensorMap) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized eigensystem of a map: (eigenvalues desc, e1 vectors).

    Returns ((H, W, 3) eigenvalues, (H, W, 3) primary eigenvectors);
    invalid pixels are zero.
    """
    h, w = tmap.height, tmap.width
    evals_out = np.zeros((h, w, 3))
    e1_out = np.zeros((h, w, 3))
    if tmap.valid.any():
        mats = tmap.matrices()[tmap.valid]
        evals, evecs = np.linalg.eigh(mats)
        evals_out[tmap.valid] = evals[:, ::-1]
        e1_out[tmap.valid] = evecs[:, :, 2]
    return evals_out, e1_out


def count_negative_eigenvalues(tmap: TensorMap, mask: Mask) -> tuple[int, int, int]:
    """Pixels with exactly 1, 2 and 3 negative eigenvalues in the mask."""
    mask.check_matches(tmap.width, tmap.height)
    sel = tmap.valid & mask.inside
    if not sel.any():
        return (0, 0, 0)
    evals = np.linalg.eigvalsh(tmap.matrices()[sel])
    n_neg = np.sum(evals < 0, axis=1)
    return (int(np.sum(n_neg == 1)), int(np.sum(n_neg == 2)),
            int(np.sum(n_neg == 3)))


def tensor_invariants(t: DiffusionTensor) -> tuple[float, float]:
    """(mean diffusivity, fractional anisotropy); FA of the zero tensor is 0."""
    evals = np.linalg.eigvalsh(t.as_matrix())
    md = float(evals.mean())
    norm = float(np.sqrt(np.sum(evals * evals)))
    if norm == 0:
        return md, 0.0
    fa = float(np.sqrt(1.5 * np.sum((evals - md) ** 2)) / norm)
    return md, fa


def invariant_maps(tmap: TensorMap) -> tuple[np.ndarray, np.ndarray]:
    """(MD, FA) maps; invalid pixels are zero."""
    h, w = tmap.height, tmap.width
    md = np.zeros((h, w))
    fa = np.zeros((h, w))
    if tmap.valid.any():
        evals = np.linalg.eigvalsh(tmap.matrices()[tmap.valid])
        mean = evals.mean(axis=1)
        norm = np.sqrt(np.sum(evals * evals, axis=1))
        dev = np.sqrt(1.5 * np.sum((evals - mean[:, None]) ** 2, axis=1))
        md[tmap.valid] = mean
        fa[tmap.valid] = np.where(norm > 0, dev / np.where(norm > 0, norm, 1.0), 0.0)
    return md, fa
