"""Deformable registration: B-spline velocity fields optimized under
a Parzen-windowed NMI objective with bending-energy regularization."""

from .bspline import (
    ControlPointField,
    bending_energy,
    bending_energy_gradient,
    bspline_basis,
    grid_shape,
    interpolate_velocity,
)
from .config import RegistrationConfig
from .flow import (
    DisplacementField,
    integrate_svf,
    jacobian_determinant,
    warp_array,
    warp_image,
)
from .nmi import (
    JointHistogram,
    joint_histogram_hard,
    joint_histogram_parzen,
    nmi,
)
from .objective import LossParts, loss_gradient, registration_loss
from .optimize import (
    OptimizationError,
    RegistrationResult,
    StackRegistrationError,
    StackRegistrationResult,
    histogram_match,
    optimize_registration,
    register_rigid,
    register_stack,
)

__all__ = [
    "ControlPointField",
    "DisplacementField",
    "JointHistogram",
    "LossParts",
    "OptimizationError",
    "RegistrationConfig",
    "RegistrationResult",
    "StackRegistrationError",
    "StackRegistrationResult",
    "bending_energy",
    "bending_energy_gradient",
    "bspline_basis",
    "grid_shape",
    "histogram_match",
    "integrate_svf",
    "interpolate_velocity",
    "jacobian_determinant",
    "joint_histogram_hard",
    "joint_histogram_parzen",
    "loss_gradient",
    "nmi",
    "optimize_registration",
    "register_rigid",
    "register_stack",
    "registration_loss",
    "warp_array",
    "warp_image",
]
