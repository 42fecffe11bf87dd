"""
Benchmark runner: every (problem, solver) cell of a manifest, one after another
"""
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from src.bal.dataset import BaProblem, load_problem, preprocess, problem_summary
from src.core.config import RunManifest, SolverConfig
from src.core.errors import MemoryBudgetExceeded
from src.core.logging import get_logger
from src.core.memory import MemoryTracker
from src.evaluation.outputs import emit_outputs
from src.evaluation.traces import ConvergenceTrace, IterationRecord
from src.geometry.projection import robust_cost
from src.solvers.lm_optimizer import make_backend, optimize

logger = get_logger(__name__)


class BenchmarkRunner:
    """Runs a manifest and writes traces plus a per-problem summary"""

    def __init__(self, manifest: RunManifest, problems: Optional[Sequence[BaProblem]] = None):
        self.manifest = manifest
        self.problems = list(problems) if problems is not None else None
        self.traces: List[ConvergenceTrace] = []
        self.failures: List[Dict[str, Any]] = []

    def load(self, path: str) -> Dict[str, Any]:
        """Load and preprocess one BAL file"""
        try:
            problem = preprocess(load_problem(path), self.manifest.preprocess)
            return {"success": True, "problem": problem, "summary": problem_summary(problem)}
        except Exception as e:
            logger.error(f"Error loading {path}: {e}")
            return {"success": False, "error": str(e), "path": path}

    def execute(self, problem: BaProblem, solver: SolverConfig) -> Dict[str, Any]:
        """
        Run one solver on one (preprocessed) problem.

        Returns:
            Dict with "success", "trace" and, on failure, "error" ("oom" set when
            the memory budget was exceeded). Failed cells still carry a trace
            holding only the initial state.
        """
        tracker = MemoryTracker(solver.memory_limit_bytes)
        backend = None
        try:
            backend = make_backend(problem, solver, tracker)
            result = optimize(backend, solver)
            return {
                "success": result.termination.value != "error",
                "trace": result.trace,
                "termination": result.termination.value,
                "final_cost": result.cost,
                "error": None if result.termination.value != "error" else "solver error",
            }
        except MemoryBudgetExceeded as e:
            logger.error(f"{solver.solver_id} on '{problem.name}': out of memory ({e})")
            return {"success": False, "oom": True, "error": str(e),
                    "trace": self._failed_trace(problem, solver, "out_of_memory", tracker)}
        except Exception as e:
            logger.error(f"{solver.solver_id} on '{problem.name}' failed: {e}")
            return {"success": False, "error": str(e),
                    "trace": self._failed_trace(problem, solver, "error", tracker)}
        finally:
            if backend is not None:
                backend.release()

    @staticmethod
    def _failed_trace(problem: BaProblem, solver: SolverConfig, termination: str,
                      tracker: MemoryTracker) -> ConvergenceTrace:
        try:
            cost = robust_cost(problem, solver.huber_delta)
        except Exception:
            cost = float("inf")
        record = IterationRecord(0, 0.0, cost, solver.initial_lambda, 0, True, tracker.peak_bytes, "initial")
        return ConvergenceTrace(solver.solver_id, problem.name, solver.precision, [record], termination, failed=True)

    def run(self) -> Dict[str, Any]:
        """
        Run every cell and write results under manifest.output_dir.

        Returns:
            Dict with "success" (all cells completed), "traces", "failures", "files"
        """
        out_dir = Path(self.manifest.output_dir)
        problems: List[BaProblem] = []
        summaries: List[Dict[str, Any]] = []
        if self.problems is not None:
            problems = self.problems
            summaries = [problem_summary(p) for p in problems]
        else:
            for path in self.manifest.problems:
                loaded = self.load(path)
                if loaded["success"]:
                    problems.append(loaded["problem"])
                    summaries.append(loaded["summary"])
                else:
                    self.failures.append({"problem": path, "solver": None, "error": loaded["error"]})

        for problem in problems:
            for solver in self.manifest.solvers:
                logger.info(f"Running {solver.solver_id} on '{problem.name}'")
                result = self.execute(problem, solver)
                self.traces.append(result["trace"])
                if not result["success"]:
                    self.failures.append({"problem": problem.name, "solver": solver.solver_id,
                                          "error": result["error"]})

        files = emit_outputs(self.traces, [], out_dir, summaries)
        summary_path = out_dir / "summary.csv"
        self.summary_frame().to_csv(summary_path, index=False)
        files.append(summary_path)
        if self.failures:
            logger.warning(f"{len(self.failures)} cell(s) failed")
        return {"success": not self.failures, "traces": self.traces, "failures": self.failures, "files": files}

    def summary_frame(self) -> pd.DataFrame:
        """One row per cell with f* (best cost over all solvers) per problem"""
        rows = [{
            "problem": t.problem_id,
            "solver": t.solver_id,
            "initial_cost": t.initial_cost,
            "final_cost": t.best_cost,
            "iterations": len(t.records) - 1,
            "termination": t.termination,
            "peak_memory": t.peak_memory,
        } for t in self.traces]
        frame = pd.DataFrame(rows, columns=["problem", "solver", "initial_cost", "final_cost", "iterations",
                                            "termination", "peak_memory"])
        frame["f_star"] = frame.groupby("problem")["final_cost"].transform("min") if rows else []
        return frame
