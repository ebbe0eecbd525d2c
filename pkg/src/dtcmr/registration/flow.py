"""Displacement fields: velocity integration, warping, Jacobians.

A displacement field psi maps output coordinates to sampling offsets in
the moving image (pull-back): warped(x) = moving(x + psi(x)).  The
exponential of a stationary velocity field is computed by scaling and
squaring, which stays diffeomorphic for bounded smooth velocities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import DimensionError, Frame, bilinear_map


@dataclass
class DisplacementField:
    """Per-pixel (dx, dy) vectors, shape (height, width, 2)."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 2:
            raise DimensionError(f"displacement must be (h, w, 2), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("displacement field must be finite")
        self.vectors = v

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def zeros(cls, width: int, height: int) -> "DisplacementField":
        return cls(np.zeros((height, width, 2)))


def _sample_grid(height: int, width: int):
    x = np.arange(width, dtype=np.float64)
    y = np.arange(height, dtype=np.float64)
    return np.meshgrid(x, y)


def sample_field(field: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear sample of a (h, w, 2) field at real coordinates."""
    return np.stack(
        [bilinear_map(field[:, :, c], xs, ys) for c in range(2)], axis=-1
    )


def _self_compose(phi: np.ndarray) -> np.ndarray:
    """One squaring step: phi'(x) = phi(x) + phi(x + phi(x))."""
    h, w = phi.shape[:2]
    gx, gy = _sample_grid(h, w)
    return phi + sample_field(phi, gx + phi[:, :, 0], gy + phi[:, :, 1])


def integrate_svf(velocity: np.ndarray, steps: int) -> DisplacementField:
    """Exponentiate a stationary velocity field by scaling and squaring.

    steps = 0 returns the velocity itself as a displacement.
    """
    v = np.asarray(velocity, dtype=np.float64)
    if v.ndim != 3 or v.shape[2] != 2:
        raise DimensionError(f"velocity must be (h, w, 2), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("velocity field must be finite")
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    phi = v * (2.0 ** -steps)
    for _ in range(steps):
        phi = _self_compose(phi)
    return DisplacementField(phi)


def integrate_svf_trace(velocity: np.ndarray, steps: int):
    """Like integrate_svf but also returns the pre-squaring intermediates."""
    phi = np.asarray(velocity, dtype=np.float64) * (2.0 ** -steps)
    trace = []
    for _ in range(steps):
        trace.append(phi)
        phi = _self_compose(phi)
    return phi, trace


def warp_array(img: np.ndarray, disp: np.ndarray) -> np.ndarray:
    """Pull-back warp: out(x) = img(x + disp(x)), borders clamped."""
    h, w = img.shape
    gx, gy = _sample_grid(h, w)
    return bilinear_map(img, gx + disp[:, :, 0], gy + disp[:, :, 1])


def warp_image(frame: Frame, disp: DisplacementField) -> Frame:
    """Warp one frame by a displacement field; metadata is preserved."""
    if (disp.width, disp.height) != (frame.width, frame.height):
        raise DimensionError(
            f"field is {disp.width}x{disp.height}, frame is "
            f"{frame.width}x{frame.height}"
        )
    return Frame(warp_array(frame.intensities, disp.vectors), frame.meta)


def jacobian_determinant(disp: DisplacementField) -> np.ndarray:
    """det(I + grad(disp)) per pixel; positive everywhere means no folding.

    Central differences in the interior, one-sided at the borders.
    """
    v = disp.vectors
    if v.shape[0] < 3 or v.shape[1] < 3:
        raise DimensionError("field must be at least 3x3 for the Jacobian")
    dux_dy, dux_dx = np.gradient(v[:, :, 0])
    duy_dy, duy_dx = np.gradient(v[:, :, 1])
    return (1.0 + dux_dx) * (1.0 + duy_dy) - dux_dy * duy_dx
