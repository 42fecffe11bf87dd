from types import SimpleNamespace

import numpy as np
import pytest

from src.bal.dataset import perturb
from src.bal.synthetic import make_synthetic_problem
from src.core.config import SolverConfig
from src.core.errors import RankDeficiencyError
from src.solvers.lm_optimizer import (
    LinearizationInfo,
    LinearSolverBackend,
    LmState,
    StepProposal,
    StepReport,
    TerminationReason,
    make_backend,
    optimize,
    terminate,
    update_lambda,
)


class LinearBackend(LinearSolverBackend):
    """Linear least squares |A x - b|^2 / 2 solved exactly for every damping"""

    def __init__(self, A, b, x0):
        self.A, self.b, self.x = A, b, np.array(x0, dtype=float)
        self.problem = SimpleNamespace(name="linear")
        self.solves = 0

    def _cost(self, x):
        r = self.A @ x - self.b
        return 0.5 * float(r @ r)

    def current_cost(self):
        return self._cost(self.x)

    def linearize(self):
        self.g = self.A.T @ (self.A @ self.x - self.b)
        self.H = self.A.T @ self.A
        self.D2 = np.diag(self.H).copy()
        return LinearizationInfo(float(np.linalg.norm(self.g)), float(np.max(np.abs(self.g))))

    def solve(self, lmbda, forcing_tolerance):
        self.solves += 1
        delta = -np.linalg.solve(self.H + lmbda * np.diag(self.D2), self.g)
        model = 0.5 * float(delta @ (lmbda * self.D2 * delta - self.g))
        return StepProposal(delta, model)

    def trial_cost(self, step):
        return self._cost(self.x + step.delta)

    def accept(self, step):
        self.x = self.x + step.delta


class IndefiniteOnceBackend(LinearBackend):
    def solve(self, lmbda, forcing_tolerance):
        if self.solves == 0:
            self.solves += 1
            return StepProposal(np.zeros_like(self.x), 0.0, indefinite=True)
        return super().solve(lmbda, forcing_tolerance)


class NonFiniteBackend(LinearBackend):
    def solve(self, lmbda, forcing_tolerance):
        return StepProposal(np.full_like(self.x, np.nan), 1.0)


class FailingBackend(LinearBackend):
    def solve(self, lmbda, forcing_tolerance):
        raise RankDeficiencyError("singular landmark factor")


def linear_problem(seed=0, offset=0.1):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(30, 5))
    b = rng.normal(size=30)
    x_star = np.linalg.lstsq(A, b, rcond=None)[0]
    return A, b, x_star, x_star + offset * rng.normal(size=5)


def config(**kw):
    return SolverConfig(thread_count=1, **kw)


def test_update_lambda_rule():
    assert update_lambda(1.0, 1.0, True) == (pytest.approx(1.0 / 3.0), 2.0)
    assert update_lambda(1.0, 0.5, True) == (1.0, 2.0)
    lmbda, nu = update_lambda(1.0, float("nan"), False, 2.0)
    assert (lmbda, nu) == (2.0, 4.0)
    lmbda, nu = update_lambda(lmbda, float("nan"), False, nu)
    assert (lmbda, nu) == (8.0, 8.0)
    assert update_lambda(1e16, 0.0, False, 2.0)[0] == 1e16
    assert update_lambda(1e-16, 1.0, True)[0] == 1e-16


def test_terminate_rules():
    cfg = config()
    assert terminate(LmState(1e-4, 10.0, iteration=3), [12.0, 10.0, 10.0], cfg) == TerminationReason.FUNCTION_TOLERANCE
    assert terminate(LmState(1e-4, 50.0, iteration=50), [100.0, 50.0], cfg) == TerminationReason.MAX_ITERATIONS
    assert terminate(LmState(1e-4, 50.0, iteration=3), [100.0, 50.0], cfg) is None
    assert terminate(LmState(1e-4, 50.0, iteration=3), [100.0, 50.0], config(function_tolerance=0.0)) is None
    rejected = StepReport(4, 1e16, False, 50.0, 60.0, 1.0, -10.0, reason="rejected")
    assert terminate(LmState(1e16, 50.0, iteration=4), [100.0, 50.0], cfg, rejected) == TerminationReason.LAMBDA_LIMIT


def test_linear_problem_converges_in_two_accepted_steps():
    A, b, x_star, x0 = linear_problem()
    backend = LinearBackend(A, b, x0)
    result = optimize(backend, config())
    c_star = 0.5 * float((A @ x_star - b) @ (A @ x_star - b))
    accepted = [r for r in result.reports if r.accepted]
    assert len(accepted) >= 2
    assert accepted[1].trial_cost - c_star <= 1e-10 * c_star
    assert result.termination == TerminationReason.FUNCTION_TOLERANCE
    np.testing.assert_allclose(backend.x, x_star, atol=1e-7)


def test_accepted_steps_decrease_cost_and_reset_nu():
    A, b, _, x0 = linear_problem(seed=3, offset=5.0)
    result = optimize(LinearBackend(A, b, x0), config())
    for report in result.reports:
        if report.accepted:
            assert report.trial_cost < report.cost
    assert result.state.nu == 2.0
    assert result.trace.records[0].reason == "initial"
    assert len(result.trace.records) == len(result.reports) + 1


def test_indefinite_step_is_rejected_with_more_damping():
    A, b, _, x0 = linear_problem(seed=1)
    result = optimize(IndefiniteOnceBackend(A, b, x0), config())
    first, second = result.reports[:2]
    assert first.reason == "indefinite"
    assert not first.accepted
    assert second.lmbda == pytest.approx(2.0 * first.lmbda)


def test_lambda_limit():
    A, b, _, x0 = linear_problem()
    result = optimize(NonFiniteBackend(A, b, x0), config(max_outer_iterations=100))
    assert result.termination == TerminationReason.LAMBDA_LIMIT
    assert all(r.reason == "non_finite_step" for r in result.reports)
    assert result.cost == result.trace.initial_cost


def test_solver_errors_end_the_run():
    A, b, _, x0 = linear_problem()
    result = optimize(FailingBackend(A, b, x0), config())
    assert result.termination == TerminationReason.ERROR
    assert result.trace.termination == "error"


def test_gradient_tolerance():
    A, b, _, x0 = linear_problem()
    result = optimize(LinearBackend(A, b, x0), config(gradient_tolerance=1e6))
    assert result.termination == TerminationReason.GRADIENT_TOLERANCE
    assert len(result.trace.records) == 1


@pytest.mark.parametrize("backend", ["sqrt_ba", "explicit_sc"])
def test_zero_residual_problem_stops_immediately(backend):
    problem = make_synthetic_problem(3, 15, seed=4, pixel_noise=0.0)
    result = optimize(make_backend(problem, config(backend=backend)), config(backend=backend))
    assert result.termination == TerminationReason.FUNCTION_TOLERANCE
    assert len(result.reports) == 1
    assert result.cost == 0.0


def test_backends_follow_the_same_cost_sequence():
    problem = perturb(make_synthetic_problem(4, 30, seed=1), 0.05, seed=0)
    costs = {}
    for name in ("sqrt_ba", "explicit_sc"):
        cfg = config(backend=name, forcing_mode="constant", eta_max=1e-10, max_outer_iterations=5,
                     function_tolerance=0.0)
        result = optimize(make_backend(problem, cfg), cfg)
        assert result.termination == TerminationReason.MAX_ITERATIONS
        assert len(result.reports) == 5
        costs[name] = result.trace.costs
    np.testing.assert_allclose(costs["sqrt_ba"], costs["explicit_sc"], rtol=1e-8)
    assert costs["sqrt_ba"][-1] < costs["sqrt_ba"][0]


def test_single_precision_run_reports_double_costs():
    problem = perturb(make_synthetic_problem(4, 30, seed=2), 0.05, seed=1)
    cfg = config(precision="single", max_outer_iterations=5)
    result = optimize(make_backend(problem, cfg), cfg)
    assert result.termination != TerminationReason.ERROR
    assert isinstance(result.cost, float)
    assert result.cost <= result.trace.initial_cost


def test_single_precision_sqrt_ba_stays_positive_definite():
    problem = perturb(make_synthetic_problem(8, 200, seed=6), 0.02, seed=3)
    final = {}
    for precision in ("single", "double"):
        cfg = config(backend="sqrt_ba", precision=precision, max_outer_iterations=20)
        result = optimize(make_backend(problem, cfg), cfg)
        assert result.termination != TerminationReason.ERROR
        assert not any(r.reason == "indefinite" for r in result.reports)
        final[precision] = result.cost
    assert abs(final["single"] - final["double"]) <= 0.01 * final["double"]
