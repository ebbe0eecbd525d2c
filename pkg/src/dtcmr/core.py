"""Frame-stack data model, preprocessing and resampling primitives.

A stack is an ordered list of 2D magnitude frames, each carrying the
diffusion weighting (b-value) and encoding direction it was acquired
with.  Pixel coordinates are (x, y) with x indexing columns and y
indexing rows; arrays are stored row-major as (height, width).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Image, mask or grid dimensions are inconsistent."""


@dataclass
class DiffusionMeta:
    """Acquisition metadata for a single diffusion-weighted frame.

    b_value is in s/mm^2; direction is a unit 3-vector for b > 0 and the
    zero vector for b = 0; average_index distinguishes repeated averages
    of the same encoding.
    """

    b_value: float
    direction: tuple[float, float, float] = (0.0, 0.0, 0.0)
    average_index: int = 0

    def __post_init__(self):
        self.b_value = float(self.b_value)
        if self.b_value < 0:
            raise ValueError(f"b_value must be >= 0, got {self.b_value}")
        if self.average_index < 0:
            raise ValueError(f"average_index must be >= 0, got {self.average_index}")
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (3,):
            raise ValueError("direction must be a 3-vector")
        norm = float(np.linalg.norm(d))
        if self.b_value > 0:
            if abs(norm - 1.0) > 1e-6:
                raise ValueError(
                    f"direction must be unit length for b > 0 (norm {norm:.8f})"
                )
        elif norm != 0.0:
            raise ValueError("b = 0 frames carry the zero direction")
        self.direction = (float(d[0]), float(d[1]), float(d[2]))


class Frame:
    """One 2D magnitude image plus its acquisition metadata."""

    def __init__(self, intensities: np.ndarray, meta: DiffusionMeta):
        arr = np.asarray(intensities)
        if arr.ndim != 2:
            raise DimensionError(f"frame data must be 2D, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("frame intensities must be finite")
        if arr.size and float(arr.min()) < 0:
            raise ValueError("frame intensities must be non-negative")
        self.intensities = arr
        self.meta = meta

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    def copy(self) -> "Frame":
        return Frame(self.intensities.copy(), self.meta)


class FrameStack:
    """Ordered diffusion-weighted frames sharing one image geometry."""

    def __init__(self, frames, normalized: bool = False):
        frames = list(frames)
        if len(frames) < 2:
            raise ValueError("a frame stack needs at least two frames")
        w, h = frames[0].width, frames[0].height
        for k, f in enumerate(frames[1:], start=1):
            if f.width != w or f.height != h:
                raise DimensionError(
                    f"frame {k} is {f.width}x{f.height}, expected {w}x{h}"
                )
        if normalized:
            gmax = max(float(f.intensities.max()) for f in frames)
            if abs(gmax - 1.0) > 1e-6:
                raise ValueError(
                    f"normalized stack must have global max 1, got {gmax:.8f}"
                )
        self.frames = frames
        self.normalized = bool(normalized)

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, k) -> Frame:
        return self.frames[k]

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def global_max(self) -> float:
        return max(float(f.intensities.max()) for f in self.frames)

    def as_array(self) -> np.ndarray:
        """All intensities stacked as (frames, height, width)."""
        return np.stack([f.intensities for f in self.frames], axis=0)

    def metas(self) -> list[DiffusionMeta]:
        return [f.meta for f in self.frames]

    @classmethod
    def from_array(cls, data: np.ndarray, metas, normalized: bool = False) -> "FrameStack":
        data = np.asarray(data)
        if data.ndim != 3:
            raise DimensionError(f"stack data must be 3D, got shape {data.shape}")
        if len(metas) != data.shape[0]:
            raise ValueError("one DiffusionMeta is required per frame")
        frames = [Frame(data[k], metas[k]) for k in range(data.shape[0])]
        return cls(frames, normalized=normalized)


@dataclass
class Mask:
    """Boolean region-of-interest aligned with a stack's geometry."""

    inside: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.inside)
        if arr.ndim != 2:
            raise DimensionError(f"mask must be 2D, got shape {arr.shape}")
        self.inside = arr.astype(bool)

    @property
    def width(self) -> int:
        return self.inside.shape[1]

    @property
    def height(self) -> int:
        return self.inside.shape[0]

    def check_matches(self, width: int, height: int):
        if self.width != width or self.height != height:
            raise DimensionError(
                f"mask is {self.width}x{self.height}, expected {width}x{height}"
            )


def center_crop(stack: FrameStack, size: int) -> FrameStack:
    """Crop every frame to the centered size x size window.

    For an odd leftover margin the extra row/column is dropped from the
    bottom/right edge, keeping index 0 anchored.
    """
    size = int(size)
    if size <= 0:
        raise DimensionError(f"crop size must be positive, got {size}")
    if size > stack.width or size > stack.height:
        raise DimensionError(
            f"crop size {size} exceeds stack dimensions {stack.width}x{stack.height}"
        )
    top = (stack.height - size) // 2
    left = (stack.width - size) // 2
    frames = [
        Frame(f.intensities[top:top + size, left:left + size].copy(), f.meta)
        for f in stack
    ]
    # cropping can drop the pixel that carried the global max
    out = FrameStack(frames, normalized=False)
    if stack.normalized and abs(out.global_max() - 1.0) <= 1e-6:
        out.normalized = True
    return out


def normalize_stack(stack: FrameStack) -> FrameStack:
    """Scale all frames by the global maximum so the brightest pixel is 1."""
    gmax = stack.global_max()
    if gmax <= 0:
        raise ValueError("cannot normalize an all-zero stack")
    frames = [Frame(f.intensities / gmax, f.meta) for f in stack]
    return FrameStack(frames, normalized=True)


def select_fixed_frame(stack: FrameStack) -> int:
    """Index of the frame with the highest mean intensity (ties: lowest index)."""
    means = np.array([float(f.intensities.mean()) for f in stack])
    return int(np.argmax(means))


def bilinear_map(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of img at (xs, ys), clamping to the borders."""
    h, w = img.shape
    xc = np.clip(xs, 0.0, float(w - 1))
    yc = np.clip(ys, 0.0, float(h - 1))
    x0 = np.clip(np.floor(xc).astype(np.intp), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(yc).astype(np.intp), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = xc - x0
    wy = yc - y0
    top = (1.0 - wx) * img[y0, x0] + wx * img[y0, x1]
    bot = (1.0 - wx) * img[y1, x0] + wx * img[y1, x1]
    return (1.0 - wy) * top + wy * bot


def bilinear_sample(frame: Frame, x: float, y: float) -> float:
    """Sample one frame at a real-valued pixel coordinate."""
    if not (np.isfinite(x) and np.isfinite(y)):
        raise ValueError(f"sample coordinates must be finite, got ({x}, {y})")
    return float(bilinear_map(frame.intensities, np.asarray(x, dtype=float),
                              np.asarray(y, dtype=float)))
