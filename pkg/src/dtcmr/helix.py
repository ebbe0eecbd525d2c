"""Helix-angle maps, transmural line profiles and stack-profile images.

The myocardial wall is described by a local frame per pixel: a radial
unit vector away from the cavity center, a circumferential unit vector
(radial rotated +90 degrees) and the fixed through-plane axis.  The
helix angle is the elevation of the primary eigenvector out of the
imaging plane, measured against the circumferential direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import FrameStack, Mask
from .tensorfit import TensorMap, principal_directions

_DEGENERATE_EPS = 1e-6


class TopologyError(ValueError):
    """The mask has no cavity, so no wall coordinates exist."""


@dataclass
class WallCoordinates:
    """Per-pixel wall frame and transmural depth for an annular mask."""

    circumferential: np.ndarray   # (H, W, 2) unit vectors
    radial: np.ndarray            # (H, W, 2) unit vectors
    depth: np.ndarray             # (H, W), in [0, 1] on the mask, nan outside
    center: tuple[float, float]   # (cx, cy), cavity centroid
    sector_r_endo: np.ndarray     # (n_sectors,)
    sector_r_epi: np.ndarray      # (n_sectors,)

    @property
    def n_sectors(self) -> int:
        return len(self.sector_r_endo)


@dataclass
class HAProfile:
    """One transmural helix-angle line profile with its regression."""

    samples: list[tuple[float, float]]   # (depth, HA degrees)
    slope: float
    intercept: float
    r_squared: float
    rmse: float
    included: bool


@dataclass
class HAGradientSummary:
    """Aggregate regression quality over the included profiles."""

    n_profiles: int
    n_included: int
    r2_mean: float
    r2_sd: float
    rmse_mean: float
    rmse_sd: float


def wall_coordinates(mask: Mask, n_sectors: int = 36) -> WallCoordinates:
    """Wall frame and depth for an annulus-like mask.

    The cavity (any hole in the mask) provides the center; per-sector
    minimum/maximum pixel radii give the endo/epi boundaries used to
    normalize depth.  Half a pixel is trimmed from each boundary to
    undo the pixel-center quantization bias.
    """
    inside = mask.inside
    filled = ndimage.binary_fill_holes(inside)
    hole = filled & ~inside
    if not hole.any():
        raise TopologyError("mask has no cavity; wall coordinates undefined")
    hy, hx = np.nonzero(hole)
    cx = float(hx.mean())
    cy = float(hy.mean())

    h, w = inside.shape
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    dx = gx - cx
    dy = gy - cy
    r = np.hypot(dx, dy)
    safe_r = np.where(r > 0, r, 1.0)
    radial = np.stack([dx / safe_r, dy / safe_r], axis=-1)
    radial[r == 0] = (1.0, 0.0)
    circ = np.stack([-radial[:, :, 1], radial[:, :, 0]], axis=-1)

    theta = np.arctan2(dy, dx) % (2.0 * math.pi)
    sector = np.minimum((theta / (2.0 * math.pi) * n_sectors).astype(np.intp),
                        n_sectors - 1)
    r_endo = np.full(n_sectors, np.nan)
    r_epi = np.full(n_sectors, np.nan)
    for s in range(n_sectors):
        sel = inside & (sector == s)
        if sel.any():
            r_endo[s] = r[sel].min() - 0.5
            r_epi[s] = r[sel].max() + 0.5
    # empty sectors inherit the global radii so depth stays defined
    if np.isnan(r_endo).any():
        r_endo = np.where(np.isnan(r_endo), np.nanmin(r_endo), r_endo)
        r_epi = np.where(np.isnan(r_epi), np.nanmax(r_epi), r_epi)

    depth = np.full((h, w), np.nan)
    span = np.maximum(r_epi[sector] - r_endo[sector], 1e-9)
    d = (r - r_endo[sector]) / span
    depth[inside] = np.clip(d[inside], 0.0, 1.0)

    return WallCoordinates(
        circumferential=circ,
        radial=radial,
        depth=depth,
        center=(cx, cy),
        sector_r_endo=r_endo,
        sector_r_epi=r_epi,
    )


def helix_angle(e1: np.ndarray, circumferential: np.ndarray) -> float:
    """Helix angle of a primary eigenvector at one pixel, in degrees.

    The eigenvector sign is fixed so its circumferential component is
    non-negative; the angle is atan2(through-plane, circumferential) in
    (-90, 90].  Radially aligned vectors (both components ~0) are
    degenerate and return nan.
    """
    e1 = np.asarray(e1, dtype=np.float64)
    c = float(e1[0] * circumferential[0] + e1[1] * circumferential[1])
    z = float(e1[2])
    if c < 0:
        c, z = -c, -z
    if abs(c) < _DEGENERATE_EPS and abs(z) < _DEGENERATE_EPS:
        return float("nan")
    ha = math.degrees(math.atan2(z, c))
    if ha <= -90.0:
        ha += 180.0
    return ha


def helix_angle_map(tmap: TensorMap, coords: WallCoordinates,
                    mask: Mask) -> np.ndarray:
    """Per-pixel helix angle in degrees; nan where invalid or degenerate."""
    mask.check_matches(tmap.width, tmap.height)
    _, e1 = principal_directions(tmap)
    circ = coords.circumferential
    c = e1[:, :, 0] * circ[:, :, 0] + e1[:, :, 1] * circ[:, :, 1]
    z = e1[:, :, 2].copy()
    flip = c < 0
    c = np.abs(c)
    z[flip] = -z[flip]
    ha = np.degrees(np.arctan2(z, c))
    ha[ha <= -90.0] += 180.0
    degenerate = (np.abs(c) < _DEGENERATE_EPS) & (np.abs(z) < _DEGENERATE_EPS)
    ha[degenerate] = np.nan
    ha[~(tmap.valid & mask.inside)] = np.nan
    return ha


def linear_regression(samples) -> tuple[float, float, float, float]:
    """Ordinary least squares: (slope, intercept, r_squared, rmse).

    Constant-y data gets R^2 = 1 when the residuals vanish (they do for
    OLS) and 0 otherwise, avoiding the 0/0 in the usual formula.
    """
    pts = np.asarray(samples, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValueError("regression needs at least two (x, y) samples")
    x = pts[:, 0]
    y = pts[:, 1]
    sxx = float(np.sum((x - x.mean()) ** 2))
    if sxx == 0:
        raise ValueError("regression undefined: all x values identical")
    slope = float(np.sum((x - x.mean()) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid * resid))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    rmse = math.sqrt(ss_res / len(x))
    return slope, intercept, r2, rmse


def _make_profile(samples) -> HAProfile:
    slope, intercept, r2, rmse = linear_regression(samples)
    included = (slope < 0) and (r2 > 0.3)
    return HAProfile(samples=samples, slope=slope, intercept=intercept,
                     r_squared=r2, rmse=rmse, included=included)


def ha_line_profiles(ha_map: np.ndarray, coords: WallCoordinates,
                     n_spokes: int = 72, depth_step: float = 0.1,
                     search_radius: float = 1.5) -> list[HAProfile]:
    """Transmural HA profiles along radial spokes from the cavity center.

    Each spoke walks the wall in equal depth increments; every target
    lands on the nearest pixel with a finite helix angle (within
    search_radius).  The sample keeps that pixel's own depth, so the
    regression is against true transmural position.  Profiles with
    fewer than 4 distinct samples are discarded.
    """
    if n_spokes < 1:
        raise ValueError(f"n_spokes must be >= 1, got {n_spokes}")
    h, w = ha_map.shape
    cx, cy = coords.center
    n_sectors = coords.n_sectors
    reach = int(math.ceil(search_radius))
    profiles = []
    for s in range(n_spokes):
        theta = 2.0 * math.pi * s / n_spokes
        sector = min(int(theta / (2.0 * math.pi) * n_sectors), n_sectors - 1)
        r0 = coords.sector_r_endo[sector]
        r1 = coords.sector_r_epi[sector]
        seen = set()
        samples = []
        for d in np.arange(0.0, 1.0 + 1e-9, depth_step):
            rr = r0 + d * (r1 - r0)
            px = cx + rr * math.cos(theta)
            py = cy + rr * math.sin(theta)
            best = None
            for yy in range(int(py) - reach, int(py) + reach + 2):
                for xx in range(int(px) - reach, int(px) + reach + 2):
                    if not (0 <= xx < w and 0 <= yy < h):
                        continue
                    if not np.isfinite(ha_map[yy, xx]):
                        continue
                    dist = (xx - px) ** 2 + (yy - py) ** 2
                    if dist <= search_radius ** 2 and \
                            (best is None or dist < best[0]):
                        best = (dist, xx, yy)
            if best is None:
                continue
            _, xx, yy = best
            if (xx, yy) in seen:
                continue
            seen.add((xx, yy))
            samples.append((float(coords.depth[yy, xx]),
                            float(ha_map[yy, xx])))
        if len(samples) < 4:
            continue
        try:
            profiles.append(_make_profile(samples))
        except ValueError:
            continue   # all samples at one depth: no transmural information
    return profiles


def ha_gradient_stats(profiles) -> HAGradientSummary:
    """Mean and sd of R^2 / RMSE over the included profiles.

    Inclusion follows the strict rule slope < 0 and R^2 > 0.3.  An empty
    inclusion set is reported as counts with nan statistics, not an error.
    """
    included = [p for p in profiles if p.included]
    if not included:
        return HAGradientSummary(
            n_profiles=len(profiles), n_included=0,
            r2_mean=float("nan"), r2_sd=float("nan"),
            rmse_mean=float("nan"), rmse_sd=float("nan"),
        )
    r2 = np.array([p.r_squared for p in included])
    rmse = np.array([p.rmse for p in included])
    return HAGradientSummary(
        n_profiles=len(profiles),
        n_included=len(included),
        r2_mean=float(r2.mean()),
        r2_sd=float(r2.std()),
        rmse_mean=float(rmse.mean()),
        rmse_sd=float(rmse.std()),
    )


def stack_profile(stack: FrameStack) -> tuple[np.ndarray, np.ndarray]:
    """Stacked central-line intensity profiles across all frames.

    Row i of the first image is the central row of frame i (frames x
    width); row i of the second is the central column (frames x height).
    Misregistered stacks show jagged columns in these images.
    """
    data = stack.as_array()
    horizontal = data[:, stack.height // 2, :].copy()
    vertical = data[:, :, stack.width // 2].copy()
    return horizontal, vertical
