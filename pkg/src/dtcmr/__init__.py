"""Post-processing toolkit for diffusion-tensor cardiac MR frame stacks.

Pipeline stages: crop -> normalize -> PCA denoise -> deformable
B-spline/NMI registration -> log-linear tensor fit -> helix-angle and
negative-eigenvalue quality metrics, validated against a synthetic
annular phantom with analytic ground truth.
"""

__version__ = "0.1.0"

from .core import (
    DiffusionMeta,
    DimensionError,
    Frame,
    FrameStack,
    Mask,
    bilinear_sample,
    center_crop,
    normalize_stack,
    select_fixed_frame,
)

__all__ = [
    "DiffusionMeta",
    "DimensionError",
    "Frame",
    "FrameStack",
    "Mask",
    "__version__",
    "bilinear_sample",
    "center_crop",
    "normalize_stack",
    "select_fixed_frame",
]
