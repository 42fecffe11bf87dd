"""
Result files: traces, performance profiles (CSV + SVG) and the problem-size table
"""
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np
import pandas as pd

from src.bal.dataset import BaProblem
from src.core.logging import get_logger
from src.evaluation.profiles import PerformanceProfile
from src.evaluation.traces import ConvergenceTrace, save_trace
from src.solvers.landmark_block import landmark_block_bytes as _block_bytes

logger = get_logger(__name__)

SUMMARY_COLUMNS = ["problem", "#cam", "#lm", "#obs", "obs/cam", "obs/lm mean", "obs/lm std", "obs/lm max"]


def landmark_block_bytes(problem: BaProblem, itemsize: int) -> int:
    """Storage of all landmark blocks of a problem: sum_j (2k_j + 3)(9k_j + 4) * itemsize"""
    return _block_bytes(problem.observation_counts(), itemsize)


def summary_row(summary: Dict[str, Any]) -> Dict[str, Any]:
    """Problem-size row from a problem_summary() dict, rounded like the published tables"""
    return {
        "problem": summary["problem"],
        "#cam": int(summary["cameras"]),
        "#lm": int(summary["landmarks"]),
        "#obs": int(summary["observations"]),
        "obs/cam": round(float(summary["obs_per_cam"]), 1),
        "obs/lm mean": round(float(summary["obs_per_lm_mean"]), 1),
        "obs/lm std": round(float(summary["obs_per_lm_std"]), 1),
        "obs/lm max": int(summary["obs_per_lm_max"]),
    }


def summary_table(summaries: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    return pd.DataFrame([summary_row(s) for s in summaries], columns=SUMMARY_COLUMNS)


def profile_name(tau: float) -> str:
    return f"profile_tau_{tau:g}"


def plot_profile(profile: PerformanceProfile, path: Path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for solver, curve in profile.curves.items():
        ax.step(profile.alphas, curve, where="post", label=solver)
    ax.set_xscale("log", base=2)
    ax.set_xlim(1, float(profile.alphas[-1]) if len(profile.alphas) else 1)
    ax.set_ylim(0, 100)
    ax.set_xlabel("relative runtime alpha")
    ax.set_ylabel("% problems solved")
    ax.set_title(f"tau = {profile.tau:g}")
    if profile.curves:
        ax.legend(loc="lower right")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def save_profile(profile: PerformanceProfile, out_dir) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{profile_name(profile.tau)}.csv"
    svg_path = out_dir / f"{profile_name(profile.tau)}.svg"
    profile.to_frame().to_csv(csv_path, index=False)
    plot_profile(profile, svg_path)
    return [csv_path, svg_path]


def load_profile(path) -> PerformanceProfile:
    """Reload a profile CSV written by save_profile; values come back bit-exact"""
    path = Path(path)
    tau = float(path.stem.rsplit("_", 1)[-1])
    frame = pd.read_csv(path, float_precision="round_trip")
    alphas = frame["alpha"].to_numpy(dtype=np.float64) if "alpha" in frame else np.empty(0)
    curves = {c: frame[c].to_numpy(dtype=np.float64) for c in frame.columns if c != "alpha"}
    return PerformanceProfile(tau, alphas, curves)


def trace_filename(trace: ConvergenceTrace) -> str:
    return f"{trace.problem_id}__{trace.solver_id}.csv"


def emit_outputs(traces: Sequence[ConvergenceTrace], profiles: Sequence[PerformanceProfile], out_dir,
                 summaries: Optional[Sequence[Dict[str, Any]]] = None) -> List[Path]:
    """
    Write every trace, every profile (CSV and SVG) and the problem-size table.

    Returns:
        Paths of the written files
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    for trace in traces:
        written.append(save_trace(trace, out_dir / "traces" / trace_filename(trace)))
    for profile in profiles:
        written.extend(save_profile(profile, out_dir))
    sizes = out_dir / "problem_sizes.csv"
    summary_table(summaries or []).to_csv(sizes, index=False)
    written.append(sizes)
    logger.info(f"Wrote {len(written)} result files to {out_dir}")
    return written
