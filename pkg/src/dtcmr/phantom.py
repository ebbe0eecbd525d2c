"""Synthetic cardiac phantom with known ground truth.

An annular "myocardium" carries a linear transmural helix-angle field;
diffusion-weighted signals are synthesized from the resulting tensor
field under the b0 + b150 + b600 multi-average design.  Synthetic
motion (random rigid translation composed with a smooth diffeomorphic
deformation) and Rician noise are applied on top, with exact
displacement bookkeeping so registration accuracy can be scored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DiffusionMeta, DimensionError, Frame, FrameStack, Mask, bilinear_map
from .registration.bspline import ControlPointField, interpolate_velocity
from .registration.flow import DisplacementField, integrate_svf, warp_array
from .tensorfit import TensorMap, design_matrix

# Electrostatically spread 9-direction set (antipodal minimal-energy
# arrangement); any well-conditioned set works, this one is frozen for
# reproducibility.  Rows are unit vectors.
DIRECTIONS_9 = np.array([
    [-0.451940276427181, 0.695932476201242, 0.558057322424257],
    [-0.373928706338953, 0.005058473627950, 0.927443655657977],
    [-0.284707223725187, 0.952201624766854, -0.110697165953151],
    [0.321145899096163, -0.484271720987407, 0.813846552948166],
    [0.393132032463524, 0.361549782887732, 0.845416441491962],
    [0.439028547406927, 0.741572237249242, -0.507271674256426],
    [0.583458134873450, 0.768788537218254, 0.261802960051662],
    [0.905406184017094, -0.259648396124439, 0.335890387378994],
    [0.946231381520728, 0.086186517856423, -0.311798102568246],
])

# control spacing of the random smooth motion field, in px
_MOTION_SPACING = 12.0


@dataclass
class PhantomConfig:
    size: int = 96
    r_endo: float = 12.0
    r_epi: float = 24.0
    ha_endo: float = 60.0
    ha_epi: float = -60.0
    eigenvalues: tuple[float, float, float] = (1.5e-3, 0.8e-3, 0.4e-3)
    s0: float = 1.0
    b_low: float = 150.0
    b_high: float = 600.0
    directions: np.ndarray = field(default_factory=lambda: DIRECTIONS_9.copy())
    n_avg_b600: int = 7
    n_avg_b150: int = 2
    noise_sigma: float = 0.0
    motion_amplitude: float = 0.0
    translation_amplitude: float | None = None   # defaults to motion_amplitude
    deform_amplitude: float | None = None        # defaults to motion_amplitude
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.r_endo < self.r_epi < self.size / 2):
            raise ValueError(
                f"need 0 < r_endo < r_epi < size/2, got "
                f"{self.r_endo}, {self.r_epi}, size {self.size}"
            )
        ev = tuple(float(v) for v in self.eigenvalues)
        if not (ev[0] >= ev[1] >= ev[2] > 0):
            raise ValueError(f"eigenvalues must be positive descending, got {ev}")
        self.eigenvalues = ev
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.motion_amplitude < 0:
            raise ValueError(
                f"motion_amplitude must be >= 0, got {self.motion_amplitude}"
            )
        self.directions = np.asarray(self.directions, dtype=np.float64)
        if self.directions.ndim != 2 or self.directions.shape[1] != 3:
            raise ValueError("directions must be an (n, 3) array")
        norms = np.linalg.norm(self.directions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("directions must be unit vectors")
        if self.n_avg_b600 < 1 or self.n_avg_b150 < 1:
            raise ValueError("average counts must be >= 1")

    @property
    def translation(self) -> float:
        t = self.translation_amplitude
        return self.motion_amplitude if t is None else t

    @property
    def deformation(self) -> float:
        d = self.deform_amplitude
        return self.motion_amplitude if d is None else d


@dataclass
class PhantomTruth:
    """Clean stack plus every analytic map it was generated from."""

    clean_stack: FrameStack
    tensor_map: TensorMap
    ha_map: np.ndarray          # degrees, nan outside the annulus
    depth_map: np.ndarray       # [0, 1] on the annulus, nan outside
    mask: Mask
    config: PhantomConfig


@dataclass
class SyntheticMotion:
    """Moved stack with exact forward and inverse displacement fields.

    forward_fields[k] warps clean frame k into moved frame k (pull-back);
    inverse_fields[k] is its group inverse: the field a perfect
    registration of moved frame k onto the clean geometry would recover.
    """

    stack: FrameStack
    forward_fields: list[DisplacementField]
    inverse_fields: list[DisplacementField]
    fixed_index: int


def _acquisition_metas(cfg: PhantomConfig) -> list[DiffusionMeta]:
    metas = [DiffusionMeta(b_value=0.0)]
    for avg in range(cfg.n_avg_b150):
        for g in cfg.directions:
            metas.append(DiffusionMeta(b_value=cfg.b_low, direction=tuple(g),
                                       average_index=avg))
    for avg in range(cfg.n_avg_b600):
        for g in cfg.directions:
            metas.append(DiffusionMeta(b_value=cfg.b_high, direction=tuple(g),
                                       average_index=avg))
    return metas


def generate_phantom(cfg: PhantomConfig) -> PhantomTruth:
    """Build the annular phantom and synthesize its clean frames.

    Fiber direction at depth d is the circumferential vector tilted by
    HA(d) = ha_endo + (ha_epi - ha_endo) * d toward the through-plane
    axis; the tensor aligns (fiber, cross-fiber, radial) with the
    configured eigenvalues.
    """
    n = cfg.size
    c = (n - 1) / 2.0
    gx, gy = np.meshgrid(np.arange(n, dtype=np.float64),
                         np.arange(n, dtype=np.float64))
    dx = gx - c
    dy = gy - c
    r = np.hypot(dx, dy)
    inside = (r >= cfg.r_endo) & (r <= cfg.r_epi)
    mask = Mask(inside)

    depth = np.full((n, n), np.nan)
    ha = np.full((n, n), np.nan)
    depth[inside] = (r[inside] - cfg.r_endo) / (cfg.r_epi - cfg.r_endo)
    ha[inside] = cfg.ha_endo + (cfg.ha_epi - cfg.ha_endo) * depth[inside]

    safe_r = np.where(r > 0, r, 1.0)
    rx = dx / safe_r
    ry = dy / safe_r
    cxv = -ry
    cyv = rx

    ha_rad = np.radians(np.where(inside, ha, 0.0))
    cos_ha = np.cos(ha_rad)
    sin_ha = np.sin(ha_rad)
    fiber = np.stack([cos_ha * cxv, cos_ha * cyv, sin_ha], axis=-1)
    cross = np.stack([-sin_ha * cxv, -sin_ha * cyv, cos_ha], axis=-1)
    normal = np.stack([rx, ry, np.zeros_like(rx)], axis=-1)

    l1, l2, l3 = cfg.eigenvalues
    dmat = (l1 * fiber[..., :, None] * fiber[..., None, :]
            + l2 * cross[..., :, None] * cross[..., None, :]
            + l3 * normal[..., :, None] * normal[..., None, :])
    tensors = np.zeros((n, n, 6))
    tensors[..., 0] = dmat[..., 0, 0]
    tensors[..., 1] = dmat[..., 1, 1]
    tensors[..., 2] = dmat[..., 2, 2]
    tensors[..., 3] = dmat[..., 0, 1]
    tensors[..., 4] = dmat[..., 0, 2]
    tensors[..., 5] = dmat[..., 1, 2]
    tensors[~inside] = 0.0
    s0_map = np.where(inside, cfg.s0, 0.0)
    tmap = TensorMap(tensors=tensors, s0=s0_map, valid=inside.copy())

    # one design row per frame; synthesize through the same model the
    # fit inverts, so the round trip is exact to solver precision
    metas = _acquisition_metas(cfg)
    rows = design_matrix(metas)
    params = np.concatenate(
        [np.where(inside, np.log(cfg.s0), 0.0).reshape(1, -1),
         tensors.reshape(-1, 6).T], axis=0)
    signals = np.exp(rows @ params)
    signals[:, ~inside.ravel()] = 0.0
    frames = [Frame(signals[k].reshape(n, n), metas[k])
              for k in range(len(metas))]
    return PhantomTruth(
        clean_stack=FrameStack(frames),
        tensor_map=tmap,
        ha_map=ha,
        depth_map=depth,
        mask=mask,
        config=cfg,
    )


def _random_smooth_velocity(rng: np.random.Generator, width: int, height: int,
                            amplitude: float) -> np.ndarray:
    """Random B-spline velocity scaled to a max vector norm of amplitude."""
    cp = ControlPointField.zeros(width, height, _MOTION_SPACING)
    cp.velocities[:] = rng.standard_normal(cp.velocities.shape)
    dense = interpolate_velocity(cp, width, height)
    peak = float(np.max(np.hypot(dense[:, :, 0], dense[:, :, 1])))
    if peak == 0:
        return dense
    return dense * (amplitude / peak)


def apply_synthetic_motion(truth: PhantomTruth,
                           cfg: PhantomConfig | None = None) -> SyntheticMotion:
    """Move every non-fixed frame by a seeded rigid + smooth deformation.

    Each frame k draws its own generator from (seed, k), so results are
    identical however the frames are processed.  The recorded inverse
    fields use the stationary-velocity group inverse exp(-v), composed
    with the reversed translation.
    """
    cfg = cfg or truth.config
    stack = truth.clean_stack
    w, h = stack.width, stack.height
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    from .core import select_fixed_frame
    fixed_idx = select_fixed_frame(stack)

    frames = []
    fwd_fields = []
    inv_fields = []
    for k, frame in enumerate(stack):
        if k == fixed_idx or (cfg.translation == 0 and cfg.deformation == 0):
            frames.append(frame.copy())
            fwd_fields.append(DisplacementField.zeros(w, h))
            inv_fields.append(DisplacementField.zeros(w, h))
            continue
        rng = np.random.default_rng([cfg.seed, k])
        t = rng.uniform(-cfg.translation, cfg.translation, size=2)
        if cfg.deformation > 0:
            v = _random_smooth_velocity(rng, w, h, cfg.deformation)
            fwd_def = integrate_svf(v, 6).vectors
            inv_def = integrate_svf(-v, 6).vectors
        else:
            fwd_def = np.zeros((h, w, 2))
            inv_def = np.zeros((h, w, 2))
        # moved(x) = clean(x + fwd(x)) with fwd = deform then translate
        fwd = fwd_def + t[None, None, :]
        # inverse: undo the translation, then flow backwards
        inv = np.stack(
            [bilinear_map(inv_def[:, :, c], gx - t[0], gy - t[1])
             for c in range(2)], axis=-1) - t[None, None, :]
        frames.append(Frame(warp_array(frame.intensities, fwd), frame.meta))
        fwd_fields.append(DisplacementField(fwd))
        inv_fields.append(DisplacementField(inv))
    return SyntheticMotion(
        stack=FrameStack(frames, normalized=False),
        forward_fields=fwd_fields,
        inverse_fields=inv_fields,
        fixed_index=fixed_idx,
    )


def add_rician_noise(stack: FrameStack, sigma: float, seed: int) -> FrameStack:
    """Rician noise: v -> sqrt((v + n1)^2 + n2^2), n1/n2 ~ N(0, sigma)."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return FrameStack([f.copy() for f in stack], normalized=stack.normalized)
    frames = []
    for k, frame in enumerate(stack):
        rng = np.random.default_rng([seed, k])
        n1 = rng.normal(0.0, sigma, size=frame.intensities.shape)
        n2 = rng.normal(0.0, sigma, size=frame.intensities.shape)
        noisy = np.hypot(frame.intensities + n1, n2)
        frames.append(Frame(noisy, frame.meta))
    return FrameStack(frames, normalized=False)


def endpoint_error(estimated: DisplacementField, truth: DisplacementField,
                   mask: Mask) -> tuple[float, float]:
    """(mean, max) Euclidean error between two fields over the mask."""
    if (estimated.width, estimated.height) != (truth.width, truth.height):
        raise DimensionError("displacement fields differ in size")
    mask.check_matches(estimated.width, estimated.height)
    diff = estimated.vectors - truth.vectors
    err = np.hypot(diff[:, :, 0], diff[:, :, 1])[mask.inside]
    if err.size == 0:
        return (0.0, 0.0)
    return (float(err.mean()), float(err.max()))
