"""
Fixed-point continuation solvers for 1-bit compressed sensing.

FPC-l1 and FPC-l2 alternate a gradient step on the one-sided consistency
penalty, soft-thresholding, and renormalization onto the unit sphere.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np

from .errors import InvalidArgument, ShrinkageCollapse
from .operators import (
    one_sided_l1,
    one_sided_l2,
    one_sided_l2_deriv,
    sign,
    soft_threshold,
)
from .signals import nmse_db

logger = logging.getLogger(__name__)


class Variant(Enum):
    """Consistency penalty used by a solver or network."""
    L1 = "l1"
    L2 = "l2"


class X0Policy(Enum):
    """How the starting point of the iteration is chosen."""
    BACKPROJECTION = "backprojection"
    GIVEN = "given"


@dataclass
class FpcConfig:
    """
    Hyperparameters of an FPC run.

    nu = tau / lam is derived, never stored separately. With
    renormalize_each=False the iterate is only normalized when it is
    recorded, which is the truncated algorithm an untrained unfolded
    network reproduces.
    """
    variant: Variant = Variant.L2
    tau: float = 1.0
    lam: float = 1000.0
    max_iters: int = 150
    x0_policy: X0Policy = X0Policy.BACKPROJECTION
    renormalize_each: bool = True

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise InvalidArgument(f"tau must be positive, got {self.tau}")
        if not self.lam > 0:
            raise InvalidArgument(f"lambda must be positive, got {self.lam}")
        if self.max_iters < 1:
            raise InvalidArgument(f"max_iters must be positive, got {self.max_iters}")

    @property
    def nu(self) -> float:
        return self.tau / self.lam

    @classmethod
    def from_nu(cls, tau: float, nu: float, **kwargs) -> "FpcConfig":
        """Build a config from the step size and the threshold nu."""
        if not nu > 0:
            raise InvalidArgument(f"nu must be positive, got {nu}")
        return cls(tau=tau, lam=tau / nu, **kwargs)

    def to_dict(self) -> dict:
        """Convert to dictionary for serialization."""
        return {
            "variant": self.variant.value,
            "tau": self.tau,
            "lam": self.lam,
            "nu": self.nu,
            "max_iters": self.max_iters,
            "x0_policy": self.x0_policy.value,
            "renormalize_each": self.renormalize_each,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FpcConfig":
        """Create from dictionary."""
        return cls(
            variant=Variant(d["variant"]),
            tau=float(d["tau"]),
            lam=float(d["lam"]),
            max_iters=int(d["max_iters"]),
            x0_policy=X0Policy(d.get("x0_policy", "backprojection")),
            renormalize_each=bool(d.get("renormalize_each", True)),
        )


@dataclass
class FpcTrace:
    """Recorded iterates of one solver run (all unit norm)."""
    iterates: List[np.ndarray] = field(default_factory=list)
    nmse_db_per_iter: Optional[List[float]] = None
    objective_per_iter: List[float] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]

    def __len__(self) -> int:
        return len(self.iterates)


def _check_dims(phi: np.ndarray, y: np.ndarray, x: np.ndarray) -> None:
    m, n = phi.shape
    if y.shape[0] != m or x.shape[0] != n:
        raise InvalidArgument(
            f"dimension mismatch: phi is {m}x{n}, y has {y.shape[0]} rows, x has {x.shape[0]}"
        )


def gradient_l1(phi: np.ndarray, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Gradient of the one-sided l1 consistency term, Phi^T (sign(Phi x) - y)."""
    _check_dims(phi, y, x)
    return phi.T @ (sign(phi @ x) - y)


def gradient_l2(phi: np.ndarray, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """
    Gradient of the one-sided l2 consistency term, Phi^T Y f'(Y Phi x).

    Y = diag(y) is applied elementwise.
    """
    _check_dims(phi, y, x)
    return phi.T @ (y * one_sided_l2_deriv(y * (phi @ x)))


_GRADIENTS = {Variant.L1: gradient_l1, Variant.L2: gradient_l2}


def consistency_penalty(phi: np.ndarray, y: np.ndarray, x: np.ndarray, variant: Variant) -> float:
    """One-sided penalty sum f((Y Phi x)_i) of the chosen variant."""
    margins = y * (phi @ x)
    return one_sided_l1(margins) if variant is Variant.L1 else one_sided_l2(margins)


def objective(phi: np.ndarray, y: np.ndarray, x: np.ndarray, cfg: FpcConfig) -> float:
    """Regularized objective ||x||_1 + lambda * sum f((Y Phi x)_i)."""
    return float(np.sum(np.abs(x))) + cfg.lam * consistency_penalty(phi, y, x, cfg.variant)


def backprojection(phi: np.ndarray, y: np.ndarray) -> np.ndarray:
    """
    Start point Phi^T y / ||Phi^T y||, column-wise for a measurement matrix.

    Raises:
        InvalidArgument: If a back-projection is zero
    """
    u = phi.T @ y
    norms = np.linalg.norm(u, axis=0)
    if np.any(norms == 0):
        raise InvalidArgument("back-projection is zero; cannot normalize the start point")
    return u / norms


def fpc_solve(
    phi: np.ndarray,
    y: np.ndarray,
    cfg: FpcConfig,
    truth: Optional[np.ndarray] = None,
    x0: Optional[np.ndarray] = None,
) -> FpcTrace:
    """
    Run FPC-l1 or FPC-l2 for cfg.max_iters iterations.

    Each iteration computes u = S_nu(x - tau * g(x)) and x = u / ||u||.

    Args:
        phi: M x N sensing matrix
        y: +/-1 measurement vector
        cfg: Solver configuration
        truth: Optional ground truth; enables the NMSE trace
        x0: Start point, required when cfg.x0_policy is GIVEN

    Returns:
        FpcTrace with one unit-norm iterate per iteration

    Raises:
        ShrinkageCollapse: If u is zero at some iteration
    """
    y = np.asarray(y, dtype=float)
    if not np.all(np.abs(y) == 1.0):
        raise InvalidArgument("measurements must be +/-1")
    if cfg.x0_policy is X0Policy.GIVEN:
        if x0 is None:
            raise InvalidArgument("x0 policy 'given' requires an x0")
        x = np.asarray(x0, dtype=float).copy()
    else:
        x = backprojection(phi, y)
    _check_dims(phi, y, x)

    gradient = _GRADIENTS[cfg.variant]
    truth = None if truth is None else np.asarray(getattr(truth, "values", truth), dtype=float)
    trace = FpcTrace(nmse_db_per_iter=None if truth is None else [])

    for r in range(cfg.max_iters):
        u = soft_threshold(x - cfg.tau * gradient(phi, y, x), cfg.nu)
        norm = np.linalg.norm(u)
        if norm == 0.0:
            logger.error("FPC-%s collapsed at iteration %d (nu=%g)", cfg.variant.value, r, cfg.nu)
            raise ShrinkageCollapse(iteration=r, nu=cfg.nu)
        unit = u / norm
        x = unit if cfg.renormalize_each else u
        trace.iterates.append(unit)
        trace.objective_per_iter.append(objective(phi, y, unit, cfg))
        if truth is not None:
            trace.nmse_db_per_iter.append(nmse_db(unit, truth))
    return trace


def fpc_solve_batch(
    phi: np.ndarray,
    y_batch: np.ndarray,
    cfg: FpcConfig,
    truths: Optional[np.ndarray] = None,
    threads: int = 1,
) -> List[FpcTrace]:
    """
    Solve every column of a measurement matrix independently.

    Results are returned in column order regardless of the worker count.
    """
    columns = range(y_batch.shape[1])

    def solve(col: int) -> FpcTrace:
        truth = None if truths is None else truths[:, col]
        return fpc_solve(phi, y_batch[:, col], cfg, truth=truth)

    if threads <= 1:
        return [solve(col) for col in columns]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(solve, columns))


def nmse_matrix(traces: List[FpcTrace]) -> np.ndarray:
    """Stack the NMSE traces of a batch into an iterations x L matrix."""
    if any(t.nmse_db_per_iter is None for t in traces):
        raise InvalidArgument("traces were recorded without ground truth")
    return np.array([t.nmse_db_per_iter for t in traces]).T
