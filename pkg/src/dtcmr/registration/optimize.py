"""Per-pair optimization of the registration objective and stack drivers.

The control velocities are optimized directly with first-order gradient
descent using adaptive per-parameter step scaling (Adam-style moment
estimates), starting from the zero field (the identity transform) and
returning the best-loss iterate.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..core import DimensionError, Frame, FrameStack, select_fixed_frame
from .bspline import ControlPointField, interpolate_velocity
from .config import RegistrationConfig
from .flow import DisplacementField, integrate_svf, warp_image
from .nmi import joint_histogram_hard, nmi
from .objective import LossParts, loss_and_gradient

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8
_PATIENCE = 10


class OptimizationError(RuntimeError):
    """The optimizer hit a non-finite loss."""


class StackRegistrationError(RuntimeError):
    """One or more frame registrations failed; indexed by frame."""

    def __init__(self, failures: dict):
        self.failures = failures
        msgs = "; ".join(f"frame {k}: {e}" for k, e in sorted(failures.items()))
        super().__init__(f"registration failed for {len(failures)} frame(s): {msgs}")


@dataclass
class RegistrationResult:
    """Best-loss control field, its displacement, and the loss trace.

    trace rows are (iteration, nmi_term, reg_term, total) for every
    evaluated iterate; best_total is the running best, which is
    non-increasing by construction.
    """

    control_field: ControlPointField
    displacement: DisplacementField
    trace: list[tuple[int, float, float, float]]
    best_total: np.ndarray

    @property
    def final_loss(self) -> float:
        return float(self.best_total[-1])


def optimize_registration(fixed: Frame, moving: Frame,
                          cfg: RegistrationConfig) -> RegistrationResult:
    """Register one moving frame onto the fixed frame."""
    theta = ControlPointField.zeros(fixed.width, fixed.height, cfg.spacing)
    shape = theta.velocities.shape
    m1 = np.zeros(shape)
    m2 = np.zeros(shape)
    best_theta = theta.velocities.copy()
    best_loss = math.inf
    best_running = []
    trace = []

    for it in range(cfg.max_iterations):
        parts, grad = loss_and_gradient(fixed, moving, theta, cfg)
        if not math.isfinite(parts.total):
            raise OptimizationError(f"non-finite loss at iteration {it}")
        trace.append((it, parts.nmi_term, parts.reg_term, parts.total))
        if parts.total < best_loss:
            best_loss = parts.total
            best_theta = theta.velocities.copy()
        best_running.append(best_loss)
        # stop when the best loss has moved less than tol in 10 iterations
        if it >= _PATIENCE and \
                best_running[it - _PATIENCE] - best_loss < cfg.convergence_tol:
            break
        t = it + 1
        m1 = _ADAM_BETA1 * m1 + (1.0 - _ADAM_BETA1) * grad
        m2 = _ADAM_BETA2 * m2 + (1.0 - _ADAM_BETA2) * grad * grad
        m1_hat = m1 / (1.0 - _ADAM_BETA1 ** t)
        m2_hat = m2 / (1.0 - _ADAM_BETA2 ** t)
        theta = ControlPointField(
            spacing=cfg.spacing,
            velocities=theta.velocities
            - cfg.step_size * m1_hat / (np.sqrt(m2_hat) + _ADAM_EPS),
        )

    best_field = ControlPointField(spacing=cfg.spacing, velocities=best_theta)
    velocity = interpolate_velocity(best_field, fixed.width, fixed.height)
    disp = integrate_svf(velocity, cfg.integration_steps)
    return RegistrationResult(
        control_field=best_field,
        displacement=disp,
        trace=trace,
        best_total=np.asarray(best_running),
    )


@dataclass
class StackRegistrationResult:
    """Registered stack plus one displacement field (and trace) per frame."""

    stack: FrameStack
    fields: list[DisplacementField]
    fixed_index: int
    traces: dict = field(default_factory=dict)


def register_stack(stack: FrameStack, cfg: RegistrationConfig,
                   contrast_surrogate: bool = False,
                   n_jobs: int = 1) -> StackRegistrationResult:
    """Register every frame onto the brightest (fixed) frame.

    With contrast_surrogate the NMI objective sees a histogram-matched
    copy of each moving frame; the recovered warp is always applied to
    the original intensities.  Frame pairs are independent, so n_jobs
    threads change nothing but wall time.
    """
    if not stack.normalized:
        raise ValueError("register_stack expects a normalized stack")
    fixed_idx = select_fixed_frame(stack)
    fixed = stack[fixed_idx]

    def run(k: int):
        moving = stack[k]
        nmi_input = moving
        if contrast_surrogate:
            nmi_input, _ = histogram_match(moving, fixed)
        res = optimize_registration(fixed, nmi_input, cfg)
        warped = warp_image(moving, res.displacement)
        return warped, res

    indices = [k for k in range(len(stack)) if k != fixed_idx]
    results: dict[int, tuple] = {}
    failures: dict[int, Exception] = {}
    if n_jobs > 1 and len(indices) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            futs = {k: pool.submit(run, k) for k in indices}
        for k, fut in futs.items():
            try:
                results[k] = fut.result()
            except Exception as e:        # noqa: BLE001 - collected per frame
                failures[k] = e
    else:
        for k in indices:
            try:
                results[k] = run(k)
            except Exception as e:        # noqa: BLE001 - collected per frame
                failures[k] = e
    if failures:
        raise StackRegistrationError(failures)

    frames = []
    fields = []
    traces = {}
    for k in range(len(stack)):
        if k == fixed_idx:
            frames.append(stack[k].copy())
            fields.append(DisplacementField.zeros(stack.width, stack.height))
        else:
            warped, res = results[k]
            frames.append(warped)
            fields.append(res.displacement)
            traces[k] = res.trace
    out = FrameStack(frames, normalized=False)
    if abs(out.global_max() - 1.0) <= 1e-6:
        out.normalized = True
    return StackRegistrationResult(out, fields, fixed_idx, traces)


def register_rigid(fixed: Frame, moving: Frame, max_shift: int) -> tuple[int, int]:
    """Exhaustive integer-shift search maximizing hard-binned NMI.

    Returns the (dx, dy) whose pull-back warp best aligns moving onto
    fixed, scored over the overlap region only; ties resolve to the
    smallest shift norm, then lexicographically.
    """
    if (fixed.width, fixed.height) != (moving.width, moving.height):
        raise DimensionError("register_rigid needs frames of equal size")
    if max_shift < 0:
        raise ValueError(f"max_shift must be >= 0, got {max_shift}")
    w, h = fixed.width, fixed.height
    fimg = fixed.intensities
    mimg = moving.intensities
    best = None
    for dy in range(-max_shift, max_shift + 1):
        for dx in range(-max_shift, max_shift + 1):
            x_lo, x_hi = max(0, -dx), min(w, w - dx)
            y_lo, y_hi = max(0, -dy), min(h, h - dy)
            if x_hi <= x_lo or y_hi <= y_lo:
                continue
            fsub = fimg[y_lo:y_hi, x_lo:x_hi]
            msub = mimg[y_lo + dy:y_hi + dy, x_lo + dx:x_hi + dx]
            score = nmi(joint_histogram_hard(
                Frame(fsub, fixed.meta), Frame(msub, moving.meta), bins=32))
            key = (-score, dx * dx + dy * dy, dx, dy)
            if best is None or key < best[0]:
                best = (key, (dx, dy))
    return best[1]


def histogram_match(moving: Frame, fixed: Frame,
                    levels: int = 256) -> tuple[Frame, bool]:
    """Monotone remap of moving so its intensity CDF matches fixed's.

    A classical contrast surrogate for diffusion-encoding differences
    (not a learned disentanglement).  Returns (frame, matched); a
    constant moving frame comes back unchanged with matched = False.
    """
    m = moving.intensities
    f = fixed.intensities
    if float(m.max()) > 1.0 + 1e-9 or float(f.max()) > 1.0 + 1e-9:
        raise ValueError("histogram_match expects normalized frames")
    if float(m.max()) == float(m.min()):
        return moving.copy(), False
    m_lvl = np.minimum((m * levels).astype(np.intp), levels - 1)
    f_lvl = np.minimum((f * levels).astype(np.intp), levels - 1)
    cdf_m = np.cumsum(np.bincount(m_lvl.ravel(), minlength=levels)) / m.size
    cdf_f = np.cumsum(np.bincount(f_lvl.ravel(), minlength=levels)) / f.size
    # smallest fixed level whose CDF reaches each moving quantile
    mapping = np.searchsorted(cdf_f, cdf_m, side="left")
    mapping = np.minimum(mapping, levels - 1)
    matched = (mapping[m_lvl] + 0.5) / levels
    return Frame(matched, moving.meta), True
