import numpy as np
import pandas as pd
import pytest

from src.bal.dataset import BaProblem
from src.core.errors import MissingTraceError
from src.evaluation.outputs import (
    SUMMARY_COLUMNS,
    emit_outputs,
    landmark_block_bytes,
    load_profile,
    save_profile,
    summary_row,
)
from src.evaluation.profiles import (
    PerformanceProfile,
    alpha_grid,
    cost_threshold,
    performance_profile,
    time_to_threshold,
)
from src.evaluation.traces import ConvergenceTrace, IterationRecord, TraceRecorder, load_trace, save_trace


def make_trace(solver, problem, points, initial_cost=10.0):
    """points: (time, cost) of accepted iterations after the initial state"""
    records = [IterationRecord(0, 0.0, initial_cost, 1e-4, reason="initial")]
    records += [IterationRecord(i + 1, t, c, 1e-4, 3, True, 1024, "accepted") for i, (t, c) in enumerate(points)]
    return ConvergenceTrace(solver, problem, "double", records, "function_tolerance")


def test_cost_threshold_examples():
    assert cost_threshold(100.0, 0.0, 0.1) == pytest.approx(10.0)
    assert cost_threshold(7.0, 3.0, 0.01) == pytest.approx(3.04)


def test_time_to_threshold():
    trace = ConvergenceTrace("s", "p", records=[
        IterationRecord(1, 1.0, 10.0, 1e-4),
        IterationRecord(2, 2.0, 5.0, 1e-4),
        IterationRecord(3, 3.0, 1.0, 1e-4),
    ])
    assert time_to_threshold(trace, 5.0) == 2.0
    assert time_to_threshold(trace, 0.5) == float("inf")


def test_time_to_threshold_ignores_rejected_iterations():
    trace = make_trace("s", "p", [(1.0, 8.0)])
    trace.records.append(IterationRecord(2, 2.0, 0.1, 1e-4, accepted=False, reason="rejected"))
    assert time_to_threshold(trace, 1.0) == float("inf")
    assert trace.best_cost == 8.0


def test_hand_built_profile():
    traces = [
        make_trace("A", "p1", [(1.0, 0.0)]),
        make_trace("B", "p1", [(2.0, 0.0)]),
        make_trace("A", "p2", [(4.0, 0.0)]),
        make_trace("B", "p2", [(2.0, 0.0)]),
    ]
    profile = performance_profile(traces, 0.1, alphas=[1.0, 2.0, 4.0])
    np.testing.assert_array_equal(profile.curves["A"], [50.0, 100.0, 100.0])
    np.testing.assert_array_equal(profile.curves["B"], [50.0, 100.0, 100.0])
    assert profile.times["A"] == {"p1": 1.0, "p2": 4.0}


def test_unsolved_problems_never_count():
    traces = [
        make_trace("A", "p1", [(1.0, 0.0)]),
        make_trace("B", "p1", [(1.0, 9.0)]),
    ]
    profile = performance_profile(traces, 0.1, alphas=alpha_grid(8, 32.0))
    np.testing.assert_array_equal(profile.curves["A"], 100.0)
    np.testing.assert_array_equal(profile.curves["B"], 0.0)


def test_profile_curves_are_monotone():
    rng = np.random.default_rng(0)
    traces = []
    for p in range(6):
        for s in ("A", "B", "C"):
            times = np.cumsum(rng.uniform(0.1, 2.0, size=5))
            costs = np.sort(rng.uniform(0.0, 10.0, size=5))[::-1]
            traces.append(make_trace(s, f"p{p}", list(zip(times, costs))))
    for tau in (0.1, 0.01, 0.001):
        profile = performance_profile(traces, tau)
        for curve in profile.curves.values():
            assert np.all(np.diff(curve) >= 0)
            assert np.all((curve >= 0) & (curve <= 100))


def test_missing_trace_is_an_error():
    traces = [make_trace("A", "p1", []), make_trace("B", "p1", []), make_trace("A", "p2", [])]
    with pytest.raises(MissingTraceError) as info:
        performance_profile(traces, 0.1)
    assert info.value.missing == [("p2", "B")]


def test_profile_round_trip(tmp_path):
    traces = [make_trace("A", "p1", [(0.3, 1.0)]), make_trace("B", "p1", [(0.7, 0.5)])]
    profile = performance_profile(traces, 0.01)
    csv_path, svg_path = save_profile(profile, tmp_path)
    assert csv_path.name == "profile_tau_0.01.csv"
    assert svg_path.read_text().lstrip().startswith("<?xml")
    loaded = load_profile(csv_path)
    assert loaded.tau == 0.01
    np.testing.assert_array_equal(loaded.alphas, profile.alphas)
    for solver in ("A", "B"):
        np.testing.assert_array_equal(loaded.curves[solver], profile.curves[solver])


def test_empty_outputs_have_headers_only(tmp_path):
    files = emit_outputs([], [PerformanceProfile(0.1, alpha_grid())], tmp_path)
    assert (tmp_path / "problem_sizes.csv").read_text().strip() == ",".join(SUMMARY_COLUMNS)
    assert (tmp_path / "profile_tau_0.1.csv").read_text().strip() == "alpha"
    assert len(files) == 3


def test_summary_row_rounding():
    row = summary_row({
        "problem": "ladybug49",
        "cameras": 49,
        "landmarks": 7766,
        "observations": 31812,
        "obs_per_cam": 31812 / 49,
        "obs_per_lm_mean": 31812 / 7766,
        "obs_per_lm_std": 3.3,
        "obs_per_lm_max": 29,
    })
    assert row["obs/cam"] == 649.2
    assert row["obs/lm mean"] == 4.1
    assert row["#obs"] == 31812
    assert list(row) == SUMMARY_COLUMNS


def test_landmark_block_bytes():
    cameras = np.zeros((3, 9))
    problem = BaProblem(cameras, np.zeros((2, 3)), [0, 1, 0, 1, 2], [0, 0, 1, 1, 1], np.zeros((5, 2)))
    assert landmark_block_bytes(problem, 8) == (7 * 22 + 9 * 31) * 8
    assert landmark_block_bytes(problem, 4) == (7 * 22 + 9 * 31) * 4


def test_trace_csv_round_trip(tmp_path):
    trace = make_trace("sqrt_ba-64", "p1", [(0.125, 3.0000000000000004), (0.5, 1.0 / 3.0)])
    trace.records.append(IterationRecord(3, 0.75, 1.0 / 3.0, 2e-4, 0, False, 2048, "rejected"))
    path = save_trace(trace, tmp_path / "traces" / "p1__sqrt_ba-64.csv")
    loaded = load_trace(path)
    assert loaded.solver_id == "sqrt_ba-64"
    assert loaded.problem_id == "p1"
    assert loaded.termination == "function_tolerance"
    np.testing.assert_array_equal(loaded.costs, trace.costs)
    np.testing.assert_array_equal(loaded.times, trace.times)
    assert [r.accepted for r in loaded.records] == [True, True, True, False]
    assert loaded.records[-1].reason == "rejected"
    frame = pd.read_csv(path)
    assert {"solver", "problem", "iteration", "time", "cost"} <= set(frame.columns)


def test_recorder_times_increase():
    recorder = TraceRecorder("s", "p")
    recorder.start(10.0, 1e-4)
    report = type("Report", (), dict(iteration=1, lmbda=1e-4, cg_iterations=2, accepted=True, reason="accepted"))
    for cost in (5.0, 4.0, 3.0):
        recorder.record(report, cost)
    assert np.all(np.diff(recorder.trace.times) > 0)
    assert recorder.trace.best_cost == 3.0
