"""
Performance profiles over (problem, solver) convergence traces.

For a problem p, a solver s and an accuracy tau, the time to reach the
threshold f_tau = f* + tau (f0 - f*) is compared with the fastest solver on p;
the profile of s at alpha is the percentage of problems that s solved within
alpha times the fastest time.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.core.errors import MissingTraceError
from src.core.logging import get_logger
from src.evaluation.traces import ConvergenceTrace

logger = get_logger(__name__)


def alpha_grid(points: int = 64, alpha_max: float = 32.0) -> np.ndarray:
    """Log-spaced relative-runtime grid over [1, alpha_max]"""
    return np.logspace(0.0, np.log10(alpha_max), points)


def cost_threshold(f0: float, f_star: float, tau: float) -> float:
    """f* + tau (f0 - f*)"""
    return f_star + tau * (f0 - f_star)


def time_to_threshold(trace: ConvergenceTrace, f_tau: float) -> float:
    """
    Earliest time at which the best accepted cost so far is <= f_tau.

    Returns:
        Seconds since the first linearization, or inf if never reached
    """
    best = np.inf
    for record in trace.records:
        if record.accepted:
            best = min(best, record.cost)
        if best <= f_tau:
            return record.time
    return float("inf")


@dataclass
class PerformanceProfile:
    tau: float
    alphas: np.ndarray
    curves: Dict[str, np.ndarray] = field(default_factory=dict)   # solver -> % of problems per alpha
    times: Dict[str, Dict[str, float]] = field(default_factory=dict)

    @property
    def solvers(self) -> List[str]:
        return list(self.curves)

    def to_frame(self) -> pd.DataFrame:
        if not self.curves:
            return pd.DataFrame(columns=["alpha"])
        frame = pd.DataFrame({"alpha": self.alphas})
        for solver, curve in self.curves.items():
            frame[solver] = curve
        return frame


def _index(traces: Iterable[ConvergenceTrace]) -> Dict[str, Dict[str, ConvergenceTrace]]:
    table: Dict[str, Dict[str, ConvergenceTrace]] = {}
    for trace in traces:
        table.setdefault(trace.problem_id, {})[trace.solver_id] = trace
    return table


def performance_profile(traces: Sequence[ConvergenceTrace], tau: float,
                        alphas: Optional[np.ndarray] = None,
                        solvers: Optional[Sequence[str]] = None) -> PerformanceProfile:
    """
    Profile curves of every solver for accuracy tau.

    f0(p) is the initial cost (the largest over solvers if they disagree),
    f*(p) the lowest accepted cost any solver reached on p.

    Raises:
        MissingTraceError: a (problem, solver) pair has no trace
    """
    alphas = alpha_grid() if alphas is None else np.asarray(alphas, dtype=np.float64)
    table = _index(traces)
    if solvers is None:
        solvers = sorted({t.solver_id for t in traces})
    solvers = list(solvers)
    if not table or not solvers:
        return PerformanceProfile(tau, alphas)

    missing = [(p, s) for p in sorted(table) for s in solvers if s not in table[p]]
    if missing:
        raise MissingTraceError(missing)

    problems = sorted(table)
    times = {s: {} for s in solvers}
    for p in problems:
        runs = table[p]
        f0 = max(runs[s].initial_cost for s in solvers)
        f_star = min(runs[s].best_cost for s in solvers)
        f_tau = cost_threshold(f0, f_star, tau)
        for s in solvers:
            times[s][p] = time_to_threshold(runs[s], f_tau)

    curves = {}
    for s in solvers:
        solved = np.zeros(len(alphas))
        for p in problems:
            fastest = min(times[other][p] for other in solvers)
            t = times[s][p]
            if np.isfinite(t) and np.isfinite(fastest):
                solved += t <= alphas * fastest
        curves[s] = 100.0 * solved / len(problems)
    logger.info(f"Performance profile tau={tau}: {len(problems)} problems, {len(solvers)} solvers")
    return PerformanceProfile(tau, alphas, curves, times)
