"""Groupwise PCA denoising of a diffusion-weighted frame stack.

The stack is unfolded into a pixels x frames (Casorati) matrix, mean
centered over frames, and eigen-decomposed via the small frames x frames
covariance.  Components covering a cumulative variance fraction (default
97%) are kept; later components are rescued when their score-vs-frame
series shows structured lag autocorrelation, which distinguishes genuine
diffusion-encoding variation from noise.  Everything else is zeroed and
the stack is rebuilt.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import DiffusionMeta, Frame, FrameStack

# eigenvalues below this fraction of the largest are numerical zeros
_RANK_RTOL = 1e-10


@dataclass
class DenoiseConfig:
    variance_threshold: float = 0.97
    autocorr_threshold: float = 0.5
    autocorr_lag: int = 1

    def __post_init__(self):
        if not (0.0 < self.variance_threshold <= 1.0):
            raise ValueError(
                f"variance_threshold must be in (0, 1], got {self.variance_threshold}"
            )
        if abs(self.autocorr_threshold) > 1.0:
            raise ValueError(
                f"autocorr_threshold must be in [-1, 1], got {self.autocorr_threshold}"
            )
        if self.autocorr_lag < 1:
            raise ValueError(f"autocorr_lag must be >= 1, got {self.autocorr_lag}")


@dataclass
class PcaDecomposition:
    """Mean-centered PCA of a stack over the frame dimension.

    components[k] is a unit-norm eigen-image; scores[k, f] is its
    coefficient in frame f; variance_fraction is descending and sums
    to 1.  degenerate marks an all-identical input (zero components).
    """

    mean_frame: np.ndarray            # (H, W)
    components: np.ndarray            # (n, H, W), unit pixel vectors
    scores: np.ndarray                # (n, F)
    variance_fraction: np.ndarray     # (n,)
    degenerate: bool
    metas: list[DiffusionMeta] = field(repr=False, default_factory=list)

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def n_frames(self) -> int:
        return self.scores.shape[1] if self.scores.size else len(self.metas)


def pca_decompose(stack: FrameStack) -> PcaDecomposition:
    """Eigen-decompose the stack's pixel x frame matrix.

    Components carry a fixed sign convention (largest-magnitude pixel
    entry positive) so the decomposition is bit-reproducible.
    """
    data = stack.as_array().astype(np.float64)
    n_frames, h, w = data.shape
    casorati = data.reshape(n_frames, h * w).T          # pixels x frames
    mean = casorati.mean(axis=1)
    centered = casorati - mean[:, None]

    cov = centered.T @ centered                          # frames x frames
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]

    evals = np.clip(evals, 0.0, None)
    cutoff = evals[0] * _RANK_RTOL if evals[0] > 0 else 0.0
    total_sq = float(np.sum(centered * centered))
    if total_sq <= 0 or evals[0] <= 0:
        return PcaDecomposition(
            mean_frame=mean.reshape(h, w),
            components=np.zeros((0, h, w)),
            scores=np.zeros((0, n_frames)),
            variance_fraction=np.zeros(0),
            degenerate=True,
            metas=stack.metas(),
        )

    # mean centering caps the rank at frames - 1
    n_keep = min(int(np.sum(evals > cutoff)), n_frames - 1)
    evals = evals[:n_keep]
    evecs = evecs[:, :n_keep]

    sv = np.sqrt(evals)
    comps = (centered @ evecs) / sv[None, :]             # pixels x n, unit norm
    scores = evecs.T * sv[:, None]                       # n x frames

    # sign convention: largest-|entry| pixel of each component is positive
    for k in range(n_keep):
        j = int(np.argmax(np.abs(comps[:, k])))
        if comps[j, k] < 0:
            comps[:, k] = -comps[:, k]
            scores[k] = -scores[k]

    return PcaDecomposition(
        mean_frame=mean.reshape(h, w),
        components=comps.T.reshape(n_keep, h, w),
        scores=scores,
        variance_fraction=evals / evals.sum(),
        degenerate=False,
        metas=stack.metas(),
    )


def lag_autocorrelation(series, lag: int) -> float:
    """Pearson correlation between a series and its lag-shifted self."""
    s = np.asarray(series, dtype=np.float64)
    lag = int(lag)
    if lag < 1:
        raise ValueError(f"lag must be >= 1, got {lag}")
    if s.ndim != 1 or len(s) <= lag:
        raise ValueError(f"series of length {len(s)} is too short for lag {lag}")
    a = s[: len(s) - lag]
    b = s[lag:]
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if denom == 0:
        raise ValueError("autocorrelation is undefined for a constant series")
    return float(np.clip(np.sum(a * b) / denom, -1.0, 1.0))


def select_components(dec: PcaDecomposition, cfg: DenoiseConfig) -> np.ndarray:
    """Boolean keep-mask: variance prefix plus autocorrelation rescues.

    The smallest prefix reaching the cumulative variance threshold is
    always kept; any later component whose score series autocorrelates
    above the threshold is rescued as genuine diffusion structure.
    """
    n = dec.n_components
    keep = np.zeros(n, dtype=bool)
    if n == 0:
        return keep
    cum = np.cumsum(dec.variance_fraction)
    reached = np.nonzero(cum >= cfg.variance_threshold - 1e-12)[0]
    prefix_end = int(reached[0]) if reached.size else n - 1
    keep[: prefix_end + 1] = True
    for k in range(prefix_end + 1, n):
        try:
            r = lag_autocorrelation(dec.scores[k], cfg.autocorr_lag)
        except ValueError:
            continue
        if abs(r) >= cfg.autocorr_threshold:
            keep[k] = True
    return keep


def reconstruct_denoised(dec: PcaDecomposition, keep: np.ndarray) -> FrameStack:
    """Rebuild the stack from the mean frame plus the kept components.

    Negative reconstructed intensities are clamped to zero (magnitude MR
    data is non-negative and the log tensor fit requires positivity).
    The normalized flag is cleared: zeroing components can move the max.
    """
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (dec.n_components,):
        raise ValueError(
            f"keep mask has shape {keep.shape}, expected ({dec.n_components},)"
        )
    if dec.n_components > 0 and not keep.any():
        raise ValueError("keep mask must retain at least one component")
    n_frames = dec.n_frames
    h, w = dec.mean_frame.shape
    recon = np.repeat(dec.mean_frame.reshape(1, h * w), n_frames, axis=0)
    if keep.any():
        comps = dec.components.reshape(dec.n_components, h * w)[keep]
        recon += dec.scores[keep].T @ comps
    recon = np.clip(recon, 0.0, None).reshape(n_frames, h, w)
    frames = [Frame(recon[k], dec.metas[k]) for k in range(n_frames)]
    return FrameStack(frames, normalized=False)


def denoise_stack(stack: FrameStack, cfg: DenoiseConfig | None = None):
    """Full denoise pass; returns (denoised stack, decomposition, keep mask).

    Degenerate stacks (all frames identical) pass through unchanged.
    """
    cfg = cfg or DenoiseConfig()
    dec = pca_decompose(stack)
    keep = select_components(dec, cfg)
    if dec.degenerate:
        frames = [f.copy() for f in stack]
        return FrameStack(frames, normalized=stack.normalized), dec, keep
    return reconstruct_denoised(dec, keep), dec, keep


def write_component_csv(dec: PcaDecomposition, keep: np.ndarray, path) -> None:
    """Diagnostic dump: one row per component with its score series."""
    n_frames = dec.n_frames
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["component_index", "variance_fraction", "kept"]
            + [f"score_{f}" for f in range(n_frames)]
        )
        for k in range(dec.n_components):
            writer.writerow(
                [k, repr(float(dec.variance_fraction[k])), int(keep[k])]
                + [repr(float(v)) for v in dec.scores[k]]
            )
