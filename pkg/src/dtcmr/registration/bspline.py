"""Cubic B-spline control-point lattice over a stationary velocity field.

Control point k along one axis acts as a cubic kernel centered at pixel
(k - 1) * spacing, so the lattice extends one ring beyond each image
edge; a W-pixel axis needs ceil(W / spacing) + 3 points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import DimensionError


def cubic_kernel(t: np.ndarray) -> np.ndarray:
    """Centered cardinal cubic B-spline, support |t| < 2."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    out = np.zeros_like(t)
    near = t < 1.0
    far = (t >= 1.0) & (t < 2.0)
    tn = t[near]
    out[near] = 2.0 / 3.0 - tn * tn + 0.5 * tn ** 3
    tf = t[far]
    out[far] = (2.0 - tf) ** 3 / 6.0
    return out


def cubic_kernel_deriv(t: np.ndarray) -> np.ndarray:
    """Derivative of cubic_kernel."""
    t = np.asarray(t, dtype=np.float64)
    a = np.abs(t)
    s = np.sign(t)
    out = np.zeros_like(t)
    near = a < 1.0
    far = (a >= 1.0) & (a < 2.0)
    out[near] = s[near] * (-2.0 * a[near] + 1.5 * a[near] ** 2)
    out[far] = s[far] * (-0.5 * (2.0 - a[far]) ** 2)
    return out


def bspline_basis(u: float) -> np.ndarray:
    """The four cubic B-spline weights for a fractional offset u in [0, 1)."""
    if not (0.0 <= u < 1.0):
        raise ValueError(f"fractional offset must be in [0, 1), got {u}")
    u2 = u * u
    u3 = u2 * u
    return np.array(
        [
            (1.0 - u) ** 3 / 6.0,
            (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
            (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
            u3 / 6.0,
        ]
    )


def grid_shape(width: int, height: int, spacing: float) -> tuple[int, int]:
    """(grid_width, grid_height) covering a width x height image."""
    return (
        math.ceil(width / spacing) + 3,
        math.ceil(height / spacing) + 3,
    )


@dataclass
class ControlPointField:
    """Lattice of 2D velocity vectors, shape (grid_height, grid_width, 2)."""

    spacing: float
    velocities: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.velocities, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 2:
            raise DimensionError(
                f"control velocities must be (gh, gw, 2), got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("control velocities must be finite")
        self.velocities = v
        self.spacing = float(self.spacing)

    @property
    def grid_width(self) -> int:
        return self.velocities.shape[1]

    @property
    def grid_height(self) -> int:
        return self.velocities.shape[0]

    @classmethod
    def zeros(cls, width: int, height: int, spacing: float) -> "ControlPointField":
        gw, gh = grid_shape(width, height, spacing)
        return cls(spacing=spacing, velocities=np.zeros((gh, gw, 2)))

    def check_covers(self, width: int, height: int):
        gw, gh = grid_shape(width, height, self.spacing)
        if (self.grid_width, self.grid_height) != (gw, gh):
            raise DimensionError(
                f"grid {self.grid_width}x{self.grid_height} does not cover a "
                f"{width}x{height} image at spacing {self.spacing} "
                f"(expected {gw}x{gh})"
            )


def basis_matrix(n_pixels: int, n_grid: int, spacing: float) -> np.ndarray:
    """Dense (n_pixels, n_grid) matrix of per-pixel B-spline weights.

    Row p holds the four weights B0..B3 at columns floor(p/spacing)..+3.
    """
    mat = np.zeros((n_pixels, n_grid))
    g = np.arange(n_pixels, dtype=np.float64) / spacing
    idx = np.floor(g).astype(np.intp)
    u = g - idx
    u2 = u * u
    u3 = u2 * u
    weights = np.stack(
        [
            (1.0 - u) ** 3 / 6.0,
            (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
            (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
            u3 / 6.0,
        ],
        axis=1,
    )
    rows = np.arange(n_pixels)
    for l in range(4):
        mat[rows, idx + l] = weights[:, l]
    return mat


def interpolate_velocity(cp: ControlPointField, width: int, height: int) -> np.ndarray:
    """Dense (height, width, 2) velocity from the control lattice."""
    cp.check_covers(width, height)
    bx = basis_matrix(width, cp.grid_width, cp.spacing)
    by = basis_matrix(height, cp.grid_height, cp.spacing)
    out = np.empty((height, width, 2))
    for c in range(2):
        out[:, :, c] = by @ cp.velocities[:, :, c] @ bx.T
    return out


def scatter_to_grid(dense_grad: np.ndarray, cp: ControlPointField,
                    width: int, height: int) -> np.ndarray:
    """Adjoint of interpolate_velocity: dense cotangent -> grid cotangent."""
    bx = basis_matrix(width, cp.grid_width, cp.spacing)
    by = basis_matrix(height, cp.grid_height, cp.spacing)
    out = np.empty_like(cp.velocities)
    for c in range(2):
        out[:, :, c] = by.T @ dense_grad[:, :, c] @ bx
    return out


def _second_differences(v: np.ndarray, spacing: float):
    """(xx, yy, xy) second derivatives of a lattice, in pixel units.

    Finite differences between neighboring control points divided by
    spacing^2, the usual free-form-deformation bending measure.
    """
    s2 = spacing * spacing
    dxx = (v[:, 2:] - 2.0 * v[:, 1:-1] + v[:, :-2]) / s2
    dyy = (v[2:, :] - 2.0 * v[1:-1, :] + v[:-2, :]) / s2
    dxy = (v[1:, 1:] - v[1:, :-1] - v[:-1, 1:] + v[:-1, :-1]) / s2
    return dxx, dyy, dxy


def bending_energy(cp: ControlPointField) -> float:
    """Mean squared second derivative of the lattice, per control point.

    Sums the xx, yy and doubled xy terms of both velocity components
    and divides by the number of control points; vanishes exactly on
    affine lattices.
    """
    n = cp.grid_width * cp.grid_height
    total = 0.0
    for c in range(2):
        dxx, dyy, dxy = _second_differences(cp.velocities[:, :, c], cp.spacing)
        total += float(np.sum(dxx * dxx) + np.sum(dyy * dyy) + 2.0 * np.sum(dxy * dxy))
    return total / n


def bending_energy_gradient(cp: ControlPointField) -> np.ndarray:
    """Exact gradient of bending_energy w.r.t. the control velocities."""
    n = cp.grid_width * cp.grid_height
    s2 = cp.spacing * cp.spacing
    grad = np.zeros_like(cp.velocities)
    for c in range(2):
        v = cp.velocities[:, :, c]
        dxx, dyy, dxy = _second_differences(v, cp.spacing)
        g = np.zeros_like(v)
        g[:, 2:] += dxx
        g[:, 1:-1] += -2.0 * dxx
        g[:, :-2] += dxx
        g[2:, :] += dyy
        g[1:-1, :] += -2.0 * dyy
        g[:-2, :] += dyy
        g[1:, 1:] += 2.0 * dxy
        g[1:, :-1] -= 2.0 * dxy
        g[:-1, 1:] -= 2.0 * dxy
        g[:-1, :-1] += 2.0 * dxy
        grad[:, :, c] = 2.0 * g / (n * s2)
    return grad
