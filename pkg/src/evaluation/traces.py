"""
Convergence traces: one record per LM iteration, with CSV persistence
"""
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, List, Optional

import numpy as np
import pandas as pd

from src.core.logging import get_logger

logger = get_logger(__name__)

TRACE_COLUMNS = ["iteration", "time", "cost", "lmbda", "cg_iterations", "accepted", "peak_memory", "reason"]


@dataclass
class IterationRecord:
    iteration: int
    time: float
    cost: float
    lmbda: float
    cg_iterations: int = 0
    accepted: bool = True
    peak_memory: int = 0
    reason: str = ""


@dataclass
class ConvergenceTrace:
    """Iteration history of one solver on one problem; record 0 is the initial state"""

    solver_id: str
    problem_id: str
    precision: str = "double"
    records: List[IterationRecord] = field(default_factory=list)
    termination: str = ""
    failed: bool = False

    @property
    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.records], dtype=np.float64)

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records], dtype=np.float64)

    @property
    def initial_cost(self) -> float:
        return self.records[0].cost if self.records else float("inf")

    @property
    def best_cost(self) -> float:
        """Lowest cost over accepted records (the initial state counts as accepted)"""
        accepted = [r.cost for r in self.records if r.accepted]
        return min(accepted) if accepted else float("inf")

    @property
    def peak_memory(self) -> int:
        return max((r.peak_memory for r in self.records), default=0)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([asdict(r) for r in self.records], columns=TRACE_COLUMNS)
        frame.insert(0, "problem", self.problem_id)
        frame.insert(0, "solver", self.solver_id)
        frame["precision"] = self.precision
        frame["termination"] = self.termination
        return frame


class TraceRecorder:
    """
    Builds a ConvergenceTrace while LM runs. The clock starts at `start`, i.e.
    right before the first linearization; preprocessing is not timed.
    """

    def __init__(self, solver_id: str, problem_id: str, precision: str = "double"):
        self.trace = ConvergenceTrace(solver_id, problem_id, precision)
        self._t0: Optional[float] = None

    def start(self, cost: float, lmbda: float, peak_memory: int = 0):
        self._t0 = time.perf_counter()
        self.trace.records = [IterationRecord(0, 0.0, float(cost), float(lmbda), 0, True, int(peak_memory), "initial")]

    def elapsed(self) -> float:
        if self._t0 is None:
            raise RuntimeError("TraceRecorder.start() has not been called")
        now = time.perf_counter() - self._t0
        last = self.trace.records[-1].time
        # keep time strictly increasing on coarse clocks
        return now if now > last else float(np.nextafter(last, np.inf))

    def record(self, report: Any, cost: float, peak_memory: int = 0):
        """Append the outcome of one LM iteration (a StepReport) with the cost after it"""
        self.trace.records.append(IterationRecord(
            iteration=report.iteration,
            time=self.elapsed(),
            cost=float(cost),
            lmbda=float(report.lmbda),
            cg_iterations=int(report.cg_iterations),
            accepted=bool(report.accepted),
            peak_memory=int(peak_memory),
            reason=report.reason,
        ))

    def finish(self, termination: str):
        self.trace.termination = termination


def save_trace(trace: ConvergenceTrace, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace.to_frame().to_csv(path, index=False)
    return path


def load_trace(path) -> ConvergenceTrace:
    """Read a trace written by save_trace"""
    frame = pd.read_csv(path, float_precision="round_trip", keep_default_na=False)
    if frame.empty:
        raise ValueError(f"{path}: trace has no records")
    records = [
        IterationRecord(
            iteration=int(row["iteration"]),
            time=float(row["time"]),
            cost=float(row["cost"]),
            lmbda=float(row["lmbda"]),
            cg_iterations=int(row["cg_iterations"]),
            accepted=str(row["accepted"]) == "True",
            peak_memory=int(row["peak_memory"]),
            reason=str(row["reason"]),
        )
        for row in frame[TRACE_COLUMNS].to_dict("records")
    ]
    first = frame.iloc[0]
    return ConvergenceTrace(
        solver_id=str(first["solver"]),
        problem_id=str(first["problem"]),
        precision=str(first["precision"]),
        records=records,
        termination=str(first["termination"]),
    )
