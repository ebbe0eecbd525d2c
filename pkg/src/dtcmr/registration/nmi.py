"""Parzen-windowed joint histograms and normalized mutual information.

Intensities in [0, 1] are mapped to continuous bin coordinates with a
margin of twice the kernel width, so the full kernel support always
falls inside the histogram and no mass is clipped.  NMI is the
Studholme form (H(F) + H(M)) / H(F, M), which lives in [1, 2].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import DimensionError, Frame
from .bspline import cubic_kernel, cubic_kernel_deriv
from .config import RegistrationConfig, _kernel_margin

# NMI ceiling returned when the joint entropy degenerates to zero
NMI_CEILING = 2.0


@dataclass
class JointHistogram:
    """bins x bins non-negative weights summing to one."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DimensionError(f"joint histogram must be square, got {w.shape}")
        if w.size and (w.min() < 0 or not np.isfinite(w).all()):
            raise ValueError("histogram weights must be finite and non-negative")
        total = float(w.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"histogram must sum to 1, got {total}")
        self.weights = w

    @property
    def bins(self) -> int:
        return self.weights.shape[0]


def _check_normalized_pair(fixed: Frame, moving: Frame):
    if (fixed.width, fixed.height) != (moving.width, moving.height):
        raise DimensionError(
            f"fixed is {fixed.width}x{fixed.height}, moving is "
            f"{moving.width}x{moving.height}"
        )
    for name, f in (("fixed", fixed), ("moving", moving)):
        hi = float(f.intensities.max())
        if hi > 1.0 + 1e-9:
            raise ValueError(
                f"{name} frame has intensities above 1 ({hi:.6f}); "
                "the histogram expects a normalized stack"
            )


def bin_coordinates(values: np.ndarray, bins: int, width: float):
    """Map intensities in [0, 1] to bin coordinates; returns (coords, scale)."""
    margin = _kernel_margin(width)
    scale = bins - 1 - 2.0 * margin
    return margin + np.clip(values, 0.0, 1.0) * scale, scale


def kernel_taps(coords: np.ndarray, bins: int, width: float):
    """Per-sample kernel support: (bin indices, weights, weight derivatives).

    Shapes are (n, 2K) with K = ceil(2 * width); derivative is w.r.t. the
    continuous bin coordinate.  The margin in bin_coordinates guarantees
    every index lands inside [0, bins).
    """
    k = max(1, math.ceil(2.0 * width))
    offsets = np.arange(-k + 1, k + 1)
    idx = np.floor(coords).astype(np.intp)[:, None] + offsets[None, :]
    u = (coords[:, None] - idx) / width
    w = cubic_kernel(u) / width
    dw = cubic_kernel_deriv(u) / (width * width)
    return idx, w, dw


def joint_histogram_hard(fixed: Frame, moving: Frame, bins: int) -> JointHistogram:
    """Nearest-bin joint histogram (the parzen_width = 0 limit)."""
    _check_normalized_pair(fixed, moving)
    tf = fixed.intensities.ravel()
    tm = moving.intensities.ravel()
    fi = np.clip((tf * bins).astype(np.intp), 0, bins - 1)
    mi = np.clip((tm * bins).astype(np.intp), 0, bins - 1)
    counts = np.bincount(fi * bins + mi, minlength=bins * bins).astype(np.float64)
    return JointHistogram(counts.reshape(bins, bins) / counts.sum())


def joint_histogram_parzen(fixed: Frame, moving: Frame,
                           cfg: RegistrationConfig) -> JointHistogram:
    """Kernel-smoothed joint histogram of a normalized frame pair.

    Each pixel pair spreads a separable cubic B-spline kernel of
    cfg.parzen_width bins around its (fixed, moving) bin coordinates.
    """
    if cfg.parzen_width == 0:
        return joint_histogram_hard(fixed, moving, cfg.bins)
    _check_normalized_pair(fixed, moving)
    bins = cfg.bins
    cf, _ = bin_coordinates(fixed.intensities.ravel(), bins, cfg.parzen_width)
    cm, _ = bin_coordinates(moving.intensities.ravel(), bins, cfg.parzen_width)
    fi, fw, _ = kernel_taps(cf, bins, cfg.parzen_width)
    mi, mw, _ = kernel_taps(cm, bins, cfg.parzen_width)
    weights = accumulate_joint(fi, fw, mi, mw, bins)
    return JointHistogram(weights / weights.sum())


def accumulate_joint(fi, fw, mi, mw, bins: int) -> np.ndarray:
    """Unnormalized joint histogram from kernel taps."""
    out = np.zeros(bins * bins)
    for a in range(fi.shape[1]):
        base = fi[:, a] * bins
        for b in range(mi.shape[1]):
            out += np.bincount(base + mi[:, b], weights=fw[:, a] * mw[:, b],
                               minlength=bins * bins)
    return out.reshape(bins, bins)


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def nmi(hist: JointHistogram) -> float:
    """Normalized mutual information (H(F) + H(M)) / H(F, M).

    A histogram with a single occupied joint bin has zero joint entropy;
    the documented ceiling 2.0 is returned instead of dividing by zero.
    """
    p = hist.weights
    h_joint = _entropy(p)
    if h_joint < 1e-12:
        return NMI_CEILING
    return (_entropy(p.sum(axis=1)) + _entropy(p.sum(axis=0))) / h_joint


def nmi_gradient(hist: JointHistogram) -> np.ndarray:
    """d(NMI)/d(p_ij) for every joint bin (zero on empty bins)."""
    p = hist.weights
    h_joint = _entropy(p)
    if h_joint < 1e-12:
        return np.zeros_like(p)
    r = p.sum(axis=1)
    c = p.sum(axis=0)
    h_marg = _entropy(r) + _entropy(c)
    nz = p > 0
    # occupied rows/columns have positive marginals wherever nz is set
    log_r = np.where(r > 0, np.log(np.where(r > 0, r, 1.0)), 0.0)
    log_c = np.where(c > 0, np.log(np.where(c > 0, c, 1.0)), 0.0)
    d_marg = -(log_r[:, None] + 1.0) - (log_c[None, :] + 1.0)
    d_joint = np.where(nz, -(np.log(np.where(nz, p, 1.0)) + 1.0), 0.0)
    grad = (d_marg * h_joint - h_marg * d_joint) / (h_joint * h_joint)
    return np.where(nz, grad, 0.0)
