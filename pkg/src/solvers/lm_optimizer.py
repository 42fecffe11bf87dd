"""
Levenberg-Marquardt driver shared by the square-root and explicit Schur
complement solvers.

The driver only sees a `LinearSolverBackend`: it asks the backend to linearize,
to propose a step for a given damping, to evaluate the true robust cost at the
trial point and to commit accepted steps. Rejected steps reuse the current
linearization; the backend decides how cheaply it can re-damp.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from src.bal.dataset import BaProblem
from src.core.config import SolverConfig
from src.core.errors import ProjectionError, RankDeficiencyError, SingularBlockError
from src.core.logging import get_logger
from src.core.memory import MemoryTracker
from src.geometry.projection import CAMERA_DIM, robust_cost
from src.evaluation.traces import ConvergenceTrace, TraceRecorder
from src.solvers.pcg import CgStats, forcing_tolerance

logger = get_logger(__name__)


class TerminationReason(str, Enum):
    FUNCTION_TOLERANCE = "function_tolerance"
    GRADIENT_TOLERANCE = "gradient_tolerance"
    MAX_ITERATIONS = "max_iterations"
    LAMBDA_LIMIT = "lambda_limit"
    ERROR = "error"


@dataclass(eq=False)
class LinearizationInfo:
    gradient_norm: float            # |g| of the column-scaled gradient
    gradient_max_norm: float        # max |g_i| of the unscaled gradient
    excluded_landmarks: int = 0


@dataclass(eq=False)
class StepProposal:
    """Candidate increment for one damping value"""

    delta: np.ndarray               # unscaled, 9 n_p pose entries then 3 n_l landmark entries
    model_decrease: float
    cg_stats: Optional[CgStats] = None
    indefinite: bool = False


@dataclass
class StepReport:
    iteration: int
    lmbda: float
    accepted: bool
    cost: float                     # cost before the step
    trial_cost: float
    model_decrease: float
    gain_ratio: float
    cg_iterations: int = 0
    cg_reason: str = ""
    reason: str = ""
    excluded_landmarks: int = 0
    gradient_converged: bool = False

    @property
    def cost_change(self) -> float:
        return self.cost - self.trial_cost


@dataclass(frozen=True)
class LmState:
    lmbda: float
    cost: float
    iteration: int = 0
    consecutive_rejections: int = 0
    nu: float = 2.0
    needs_linearization: bool = True
    gradient_norm: float = 0.0
    initial_gradient_norm: Optional[float] = None
    excluded_landmarks: int = 0


@dataclass(eq=False)
class OptimizationResult:
    problem: BaProblem
    state: LmState
    termination: TerminationReason
    reports: List[StepReport] = field(default_factory=list)
    trace: Optional[ConvergenceTrace] = None

    @property
    def cost(self) -> float:
        return self.state.cost


class LinearSolverBackend(ABC):
    """Linear solver side of one LM run"""

    @abstractmethod
    def current_cost(self) -> float:
        """True robust cost at the current iterate"""

    @abstractmethod
    def linearize(self) -> LinearizationInfo:
        """Linearize at the current iterate"""

    @abstractmethod
    def solve(self, lmbda: float, forcing_tolerance: float) -> StepProposal:
        """Damped step for the current linearization"""

    @abstractmethod
    def trial_cost(self, step: StepProposal) -> float:
        """True robust cost at the current iterate plus step"""

    @abstractmethod
    def accept(self, step: StepProposal):
        """Move the current iterate by step"""

    def release(self):
        """Drop tracked allocations"""

    @property
    def peak_memory(self) -> int:
        return 0


class ProblemBackend(LinearSolverBackend):
    """Cost bookkeeping common to the bundle adjustment backends"""

    def __init__(self, problem: BaProblem, config: SolverConfig, tracker: Optional[MemoryTracker] = None):
        self.problem = problem
        self.config = config
        self.tracker = tracker or MemoryTracker(config.memory_limit_bytes)
        self._cost = robust_cost(problem, config.huber_delta)
        self._candidate: Optional[Tuple[StepProposal, BaProblem, float]] = None

    def current_cost(self) -> float:
        return self._cost

    def _split(self, delta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        n = CAMERA_DIM * self.problem.n_cameras
        return delta[:n], delta[n:]

    def trial_cost(self, step: StepProposal) -> float:
        candidate = self.problem.with_update(*self._split(step.delta))
        cost = robust_cost(candidate, self.config.huber_delta)
        self._candidate = (step, candidate, cost)
        return cost

    def accept(self, step: StepProposal):
        if self._candidate is None or self._candidate[0] is not step:
            self.trial_cost(step)
        _, self.problem, self._cost = self._candidate
        self._candidate = None

    @property
    def peak_memory(self) -> int:
        return self.tracker.peak_bytes

    @staticmethod
    def model_decrease(delta_scaled: np.ndarray, gradient: np.ndarray, lmbda: float,
                       damping_sq: np.ndarray) -> float:
        """1/2 dx^T (lambda D^2 dx - g) in the scaled variables"""
        return 0.5 * float(delta_scaled @ (lmbda * damping_sq * delta_scaled - gradient))


def update_lambda(lmbda: float, rho: float, accepted: bool, nu: float = 2.0,
                  min_lambda: float = 1e-16, max_lambda: float = 1e16) -> Tuple[float, float]:
    """
    Damping update from the gain ratio.

    Accepted: lambda * max(1/3, 1 - (2 rho - 1)^3) and nu back to 2.
    Rejected: lambda * nu, then nu doubles.

    Returns:
        (new lambda clamped to [min_lambda, max_lambda], new nu)
    """
    if accepted:
        factor = max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
        return float(np.clip(lmbda * factor, min_lambda, max_lambda)), 2.0
    return float(np.clip(lmbda * nu, min_lambda, max_lambda)), 2.0 * nu


def terminate(state: LmState, cost_history: List[float], config: SolverConfig,
              report: Optional[StepReport] = None) -> Optional[TerminationReason]:
    """
    Stopping decision after an iteration.

    Args:
        state: State after the iteration
        cost_history: Cost after every accepted step, initial cost first
        config: Tolerances and iteration cap
        report: Report of the iteration just taken, if any

    Returns:
        The reason to stop, or None to continue
    """
    tol = config.function_tolerance
    if report is not None and report.gradient_converged:
        return TerminationReason.GRADIENT_TOLERANCE
    if report is not None and state.cost == 0.0:
        # a zero robust cost cannot decrease any further
        return TerminationReason.FUNCTION_TOLERANCE
    if report is None or report.accepted:
        if len(cost_history) >= 2 and abs(cost_history[-1] - cost_history[-2]) <= tol * cost_history[-1]:
            return TerminationReason.FUNCTION_TOLERANCE
    elif report.reason == "no_decrease_predicted" and abs(report.cost_change) <= tol * report.cost:
        # stationary: the model promises nothing and the trial confirms it
        return TerminationReason.FUNCTION_TOLERANCE
    if state.iteration >= config.max_outer_iterations:
        return TerminationReason.MAX_ITERATIONS
    if report is not None and not report.accepted and report.lmbda >= config.max_lambda:
        return TerminationReason.LAMBDA_LIMIT
    return None


def lm_step(backend: LinearSolverBackend, state: LmState, config: SolverConfig) -> Tuple[bool, LmState, StepReport]:
    """
    One outer iteration: (re)linearize if the last step was accepted, solve the
    damped system, evaluate the true cost at the trial point and accept or
    reject by the gain ratio.
    """
    if state.needs_linearization:
        info = backend.linearize()
        initial = state.initial_gradient_norm if state.initial_gradient_norm is not None else info.gradient_norm
        state = replace(state, gradient_norm=info.gradient_norm, initial_gradient_norm=initial,
                        excluded_landmarks=info.excluded_landmarks, needs_linearization=False)
        if config.gradient_tolerance > 0 and info.gradient_max_norm <= config.gradient_tolerance:
            report = StepReport(state.iteration, state.lmbda, False, state.cost, state.cost, 0.0, float("nan"),
                                reason="gradient_tolerance", gradient_converged=True,
                                excluded_landmarks=info.excluded_landmarks)
            return False, state, report

    eta = forcing_tolerance(state.gradient_norm, state.initial_gradient_norm, config.forcing_mode, config.eta_max)
    proposal = backend.solve(state.lmbda, eta)
    cg = proposal.cg_stats
    model = float(proposal.model_decrease)
    trial = float("inf")
    rho = float("nan")
    if proposal.indefinite:
        reason = "indefinite"
    elif not np.all(np.isfinite(proposal.delta)):
        reason = "non_finite_step"
    else:
        try:
            trial = backend.trial_cost(proposal)
        except ProjectionError as e:
            logger.debug(f"Trial point rejected: {e}")
        if not np.isfinite(trial):
            reason = "non_finite_cost"
        elif model <= 0:
            reason = "no_decrease_predicted"
        else:
            rho = (state.cost - trial) / model
            reason = "accepted" if rho > config.min_relative_decrease else "rejected"
    accepted = reason == "accepted"

    lmbda, nu = update_lambda(state.lmbda, rho, accepted, state.nu, config.min_lambda, config.max_lambda)
    report = StepReport(
        iteration=state.iteration + 1,
        lmbda=state.lmbda,
        accepted=accepted,
        cost=state.cost,
        trial_cost=trial,
        model_decrease=model,
        gain_ratio=rho,
        cg_iterations=cg.iterations if cg else 0,
        cg_reason=cg.termination_reason.value if cg else "",
        reason=reason,
        excluded_landmarks=state.excluded_landmarks,
    )
    if accepted:
        backend.accept(proposal)
        state = replace(state, lmbda=lmbda, nu=nu, cost=backend.current_cost(), iteration=state.iteration + 1,
                        consecutive_rejections=0, needs_linearization=True)
    else:
        if reason == "indefinite":
            logger.warning(f"Iteration {report.iteration}: indefinite reduced system, increasing damping")
        state = replace(state, lmbda=lmbda, nu=nu, iteration=state.iteration + 1,
                        consecutive_rejections=state.consecutive_rejections + 1)
    return accepted, state, report


def optimize(backend: ProblemBackend, config: SolverConfig,
             recorder: Optional[TraceRecorder] = None) -> OptimizationResult:
    """
    Run LM until a termination criterion holds, recording one trace entry per
    iteration (rejected ones included).
    """
    if recorder is None:
        recorder = TraceRecorder(config.solver_id, backend.problem.name, config.precision)
    state = LmState(lmbda=config.initial_lambda, cost=backend.current_cost())
    history = [state.cost]
    reports: List[StepReport] = []
    recorder.start(state.cost, state.lmbda, backend.peak_memory)
    logger.info(f"{config.solver_id} on '{backend.problem.name}': initial cost {state.cost:.6e}")

    termination = None
    while termination is None:
        try:
            accepted, state, report = lm_step(backend, state, config)
        except (ProjectionError, RankDeficiencyError, SingularBlockError, np.linalg.LinAlgError) as e:
            logger.error(f"{config.solver_id} on '{backend.problem.name}' failed: {e}")
            termination = TerminationReason.ERROR
            break
        reports.append(report)
        if report.gradient_converged:
            termination = terminate(state, history, config, report)
            break
        if accepted:
            history.append(state.cost)
        recorder.record(report, state.cost, backend.peak_memory)
        logger.info(
            f"it {report.iteration:3d} cost {state.cost:.6e} lambda {report.lmbda:.2e} "
            f"rho {report.gain_ratio:+.3f} cg {report.cg_iterations} {report.reason}"
        )
        termination = terminate(state, history, config, report)

    recorder.finish(termination.value)
    logger.info(f"{config.solver_id} on '{backend.problem.name}' stopped ({termination.value}), "
                f"final cost {state.cost:.6e}")
    return OptimizationResult(backend.problem, state, termination, reports, recorder.trace)


def make_backend(problem: BaProblem, config: SolverConfig,
                 tracker: Optional[MemoryTracker] = None) -> ProblemBackend:
    """Backend for config.backend"""
    config.validate()
    if config.backend == "sqrt_ba":
        from src.solvers.reduced_solver import SqrtBaBackend
        return SqrtBaBackend(problem, config, tracker)
    from src.solvers.sc_baseline import ExplicitScBackend
    return ExplicitScBackend(problem, config, tracker)
