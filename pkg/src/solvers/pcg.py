"""
Preconditioned conjugate gradients for the reduced camera system
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Protocol, Tuple

import numpy as np

from src.core.logging import get_logger

logger = get_logger(__name__)


class CgTermination(str, Enum):
    TOLERANCE = "tolerance"
    MAX_ITERATIONS = "max_iterations"
    INDEFINITE = "indefinite"


@dataclass
class CgStats:
    iterations: int
    final_relative_residual: float
    termination_reason: CgTermination
    residual_history: List[float] = field(default_factory=list)
    # q(x) = 1/2 x^T H x - b^T x after each iteration; non-increasing while curvature stays positive
    model_history: List[float] = field(default_factory=list)


class PreconditionedSystem(Protocol):
    def multiply(self, v: np.ndarray) -> np.ndarray: ...

    def precondition(self, r: np.ndarray) -> np.ndarray: ...


def solve_pcg(system: PreconditionedSystem, rhs: np.ndarray, forcing_tolerance: float,
              max_iters: int) -> Tuple[np.ndarray, CgStats]:
    """
    Solve H x = rhs from x0 = 0 and return the pose increment -x.

    The preconditioned residual is not monotone in general. What CG does reduce
    at every iteration is the quadratic model q(x) = 1/2 x^T H x - b^T x (the
    H-norm of the error), by 1/2 alpha r^T z per step; its value after every
    iteration is kept in CgStats.model_history.

    Stops once sqrt(r^T M^-1 r) <= forcing_tolerance * sqrt(r0^T M^-1 r0), after
    max_iters iterations, or when a search direction has non-positive curvature
    (the iterate before that direction is returned).

    Args:
        system: Object with multiply(v) = H v and precondition(r) = M^-1 r
        rhs: Right-hand side b
        forcing_tolerance: Relative tolerance eta
        max_iters: Iteration cap

    Returns:
        (-x, CgStats)
    """
    x = np.zeros_like(rhs)
    r = rhs.copy()
    z = system.precondition(r)
    rz = float(r @ z)
    if not rz > 0:
        reason = CgTermination.TOLERANCE if rz == 0 else CgTermination.INDEFINITE
        return -x, CgStats(0, 0.0, reason, [0.0], [0.0])

    initial = np.sqrt(rz)
    history = [1.0]
    models = [0.0]
    p = z.copy()
    relative = 1.0
    for iteration in range(1, max_iters + 1):
        q = system.multiply(p)
        curvature = float(p @ q)
        if not curvature > 0:
            logger.debug(f"PCG: non-positive curvature {curvature} at iteration {iteration}")
            return -x, CgStats(iteration - 1, relative, CgTermination.INDEFINITE, history, models)
        alpha = rz / curvature
        x += alpha * p
        r -= alpha * q
        # H x = b - r, so q(x) = -1/2 x^T (b + r)
        models.append(-0.5 * float(x @ (rhs + r)))
        z = system.precondition(r)
        rz_new = float(r @ z)
        if rz_new < 0:
            return -x, CgStats(iteration, relative, CgTermination.INDEFINITE, history, models)
        relative = float(np.sqrt(rz_new) / initial)
        history.append(relative)
        if relative <= forcing_tolerance:
            return -x, CgStats(iteration, relative, CgTermination.TOLERANCE, history, models)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return -x, CgStats(max_iters, relative, CgTermination.MAX_ITERATIONS, history, models)


def forcing_tolerance(gradient_norm: float, initial_gradient_norm: Optional[float], mode: str = "adaptive",
                      eta_max: float = 0.1) -> float:
    """
    Relative PCG tolerance for one outer iteration.

    adaptive: min(eta_max, sqrt(|g_k| / |g_0|)); constant: eta_max.
    """
    if mode == "constant" or not initial_gradient_norm:
        return eta_max
    return float(min(eta_max, np.sqrt(gradient_norm / initial_gradient_norm)))
