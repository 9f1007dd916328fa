"""
Elementwise operators shared by the solvers and the unfolded network.

All functions are pure and accept numpy arrays of any shape.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class Threshold:
    """Shrinkage amount nu = tau / lambda of the soft-thresholding operator."""

    nu: float

    def __post_init__(self) -> None:
        if not self.nu >= 0:
            raise InvalidArgument(f"threshold must be nonnegative, got nu={self.nu}")

    @classmethod
    def from_step(cls, tau: float, lam: float) -> "Threshold":
        """Build the threshold implied by step size tau and penalty weight lam."""
        if tau <= 0 or lam <= 0:
            raise InvalidArgument(f"tau and lambda must be positive, got {tau}, {lam}")
        return cls(nu=tau / lam)


def sign(z: np.ndarray) -> np.ndarray:
    """Elementwise sign with the convention sign(0) = +1."""
    return np.where(np.asarray(z) >= 0, 1.0, -1.0)


def relu(z: np.ndarray) -> np.ndarray:
    """Elementwise max(z, 0)."""
    return np.maximum(z, 0.0)


def soft_threshold(z: np.ndarray, nu: Union[float, Threshold]) -> np.ndarray:
    """
    Soft-thresholding S_nu(z) = sign(z) * max(|z| - nu, 0).

    Args:
        z: Input array
        nu: Shrinkage amount (float or Threshold)

    Returns:
        Array of the same shape as z

    Raises:
        InvalidArgument: If nu is negative
    """
    if isinstance(nu, Threshold):
        nu = nu.nu
    if not nu >= 0:
        raise InvalidArgument(f"threshold must be nonnegative, got nu={nu}")
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.maximum(np.abs(z) - nu, 0.0)


def one_sided_l1(z: np.ndarray) -> float:
    """One-sided l1 penalty: sum of |z_i| over the negative entries."""
    z = np.asarray(z, dtype=float)
    return float(np.sum(-np.minimum(z, 0.0)))


def one_sided_l2(z: np.ndarray) -> float:
    """One-sided l2 penalty: sum of z_i^2 / 2 over the negative entries."""
    z = np.asarray(z, dtype=float)
    neg = np.minimum(z, 0.0)
    return float(0.5 * np.sum(neg * neg))


def one_sided_l2_deriv(z: np.ndarray) -> np.ndarray:
    """Derivative of the one-sided l2 penalty, min(z, 0) (zero at z = 0)."""
    return np.minimum(np.asarray(z, dtype=float), 0.0)
