"""
Error types raised by deepfpc.

Every failure the library reports derives from DeepFpcError so callers
(and the CLI) can catch the whole family in one place.
"""

from typing import Optional


class DeepFpcError(Exception):
    """Base class for deepfpc errors."""
    pass


class InvalidArgument(DeepFpcError, ValueError):
    """An argument is out of range or has inconsistent dimensions."""
    pass


class InvalidState(DeepFpcError, RuntimeError):
    """An object lacks data required by the requested operation."""
    pass


class FormatError(DeepFpcError, ValueError):
    """A data, model or config file is malformed."""
    pass


class UsageError(DeepFpcError):
    """Command-line usage error."""
    pass


class ShrinkageCollapse(DeepFpcError):
    """Soft-thresholding zeroed the whole iterate, so it cannot be renormalized."""

    def __init__(self, iteration: int, nu: float):
        self.iteration = iteration
        self.nu = nu
        super().__init__(
            f"shrinkage-collapse at iteration {iteration}: all entries zeroed "
            f"by soft-thresholding (nu={nu:g} is too large)"
        )


class ZeroOutput(DeepFpcError):
    """The final layer produced a zero vector, so normalization is undefined."""

    def __init__(self, column: Optional[int] = None):
        self.column = column
        where = "" if column is None else f" in column {column}"
        super().__init__(f"zero-output{where}: final estimate has zero norm")


class Divergence(DeepFpcError):
    """Training broke down: a non-finite loss, or an estimate collapsed to zero."""

    def __init__(self, step: int, effective_lr: float, reason: str = "non-finite loss"):
        self.step = step
        self.effective_lr = effective_lr
        self.reason = reason
        super().__init__(
            f"divergence at step {step}: {reason} (effective lr={effective_lr:g})"
        )
