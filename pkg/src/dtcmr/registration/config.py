"""Registration hyperparameters."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class RegistrationConfig:
    """Settings for the deformable registration objective and optimizer.

    lambda_reg weights the bending-energy regularizer against the
    negative-NMI similarity term; spacing is the control-point spacing
    in pixels; parzen_width is the histogram kernel width in bin units
    (0 selects hard binning, which is not differentiable).
    """

    lambda_reg: float = 0.1
    spacing: float = 4.0
    bins: int = 32
    parzen_width: float = 1.0
    integration_steps: int = 6
    max_iterations: int = 300
    step_size: float = 0.25
    convergence_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.lambda_reg < 0:
            raise ValueError(f"lambda_reg must be >= 0, got {self.lambda_reg}")
        if self.spacing < 1:
            raise ValueError(f"spacing must be >= 1, got {self.spacing}")
        if self.bins < 8:
            raise ValueError(f"bins must be >= 8, got {self.bins}")
        if self.parzen_width < 0:
            raise ValueError(f"parzen_width must be >= 0, got {self.parzen_width}")
        if self.integration_steps < 0:
            raise ValueError(
                f"integration_steps must be >= 0, got {self.integration_steps}"
            )
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.step_size <= 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.bins - 1 - 2 * _kernel_margin(self.parzen_width) < 2:
            raise ValueError(
                f"bins={self.bins} too small for parzen_width={self.parzen_width}"
            )


def _kernel_margin(width: float) -> float:
    """Bin-coordinate margin keeping the kernel support inside the range."""
    return 2.0 * width if width > 0 else 0.0
