import numpy as np
import pytest
import scipy.sparse as sp

from conftest import dense_jacobian, dense_schur
from src.bal.dataset import BaProblem
from src.bal.synthetic import make_synthetic_problem
from src.core.config import SolverConfig
from src.core.errors import ConfigError
from src.geometry.projection import CAMERA_DIM, POINT_DIM
from src.solvers.equivalence import relative_deviation, run_equivalence_check
from src.solvers.reduced_solver import Preconditioner, damping_diagonal
from src.solvers.sc_baseline import (
    CoVisibilityPattern,
    ExplicitScBackend,
    ReducedHessian,
    assemble_hessian,
    detect_indefinite,
    sc_back_substitute,
    scale_hessian,
    schur_reduce,
)


def test_assemble_matches_dense_normal_equations(small_problem):
    h = assemble_hessian(small_problem, 1.0)
    J, r = dense_jacobian(small_problem)
    H = J.T @ J
    b = J.T @ r
    n_pose = CAMERA_DIM * small_problem.n_cameras
    for i in range(small_problem.n_cameras):
        sl = slice(CAMERA_DIM * i, CAMERA_DIM * (i + 1))
        np.testing.assert_allclose(h.h_pp[i], H[sl, sl], rtol=1e-10, atol=1e-8)
    for j in range(small_problem.n_points):
        sl = slice(n_pose + POINT_DIM * j, n_pose + POINT_DIM * (j + 1))
        np.testing.assert_allclose(h.h_ll[j], H[sl, sl], rtol=1e-10, atol=1e-8)
    np.testing.assert_allclose(h.gradient(), b, rtol=1e-10, atol=1e-8)
    np.testing.assert_allclose(h.diagonal(), np.diag(H), rtol=1e-10)


def test_chunked_parallel_assembly(small_problem):
    whole = assemble_hessian(small_problem, 1.0)
    serial = assemble_hessian(small_problem, 1.0, chunk_size=7)
    threaded = assemble_hessian(small_problem, 1.0, n_jobs=4, chunk_size=7)
    for name in ("h_pp", "h_ll", "b_p", "b_l"):
        np.testing.assert_array_equal(getattr(threaded, name), getattr(serial, name))
        np.testing.assert_allclose(getattr(serial, name), getattr(whole, name), rtol=1e-12, atol=1e-10)
    np.testing.assert_array_equal(threaded.h_pl, whole.h_pl)


@pytest.mark.parametrize("lmbda", [1e-4, 1.0])
def test_schur_reduce_matches_dense_elimination(small_problem, lmbda):
    h = assemble_hessian(small_problem, 1.0)
    scale = scale_hessian(h)
    damping_sq = damping_diagonal(h.diagonal(), 1e-12, 1e32)
    reduced = schur_reduce(h, lmbda, damping_sq)
    J, r = dense_jacobian(small_problem)
    S, g = dense_schur(J * scale, r, CAMERA_DIM * small_problem.n_cameras, lmbda * damping_sq)
    assert relative_deviation(reduced.to_dense(), S) < 1e-9
    assert relative_deviation(reduced.rhs, g) < 1e-9
    dense = reduced.to_dense()
    np.testing.assert_allclose(dense, dense.T, atol=1e-12 * np.max(np.abs(dense)))


def test_sc_back_substitution(small_problem):
    lmbda = 1e-3
    h = assemble_hessian(small_problem, 1.0)
    scale = scale_hessian(h)
    damping_sq = damping_diagonal(h.diagonal(), 1e-12, 1e32)
    schur_reduce(h, lmbda, damping_sq)
    J, r = dense_jacobian(small_problem)
    Js = J * scale
    n_pose = CAMERA_DIM * small_problem.n_cameras
    H = Js.T @ Js + np.diag(lmbda * damping_sq)
    b = Js.T @ r
    dx_p = np.random.default_rng(0).normal(size=n_pose)
    expected = -np.linalg.solve(H[n_pose:, n_pose:], b[n_pose:] + H[n_pose:, :n_pose] @ dx_p)
    assert relative_deviation(sc_back_substitute(h, dx_p), expected) < 1e-9


def test_back_substitution_needs_reduction(small_problem):
    with pytest.raises(ValueError):
        sc_back_substitute(assemble_hessian(small_problem, 1.0), np.zeros(CAMERA_DIM * small_problem.n_cameras))


def test_covisibility_pattern():
    cameras = np.zeros((3, 9))
    cameras[:, 5] = -5.0
    cameras[:, 6] = 1.0
    problem = BaProblem(cameras, [[0, 0, 0], [1, 0, 0]], [0, 1, 1, 2], [0, 0, 1, 1], np.zeros((4, 2)))
    pattern = CoVisibilityPattern(problem)
    assert list(zip(pattern.block_rows, pattern.block_cols)) == [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)]
    upper = np.random.default_rng(0).normal(size=(pattern.n_blocks, 9, 9))
    full = pattern.to_bsr(upper).toarray()
    np.testing.assert_array_equal(full[0:9, 9:18], upper[1])
    np.testing.assert_array_equal(full[9:18, 0:9], upper[1].T)
    np.testing.assert_array_equal(full[0:9, 18:27], 0.0)


def test_detect_indefinite():
    matrix = sp.bsr_matrix(np.diag([1.0] * 8 + [-1.0]), blocksize=(9, 9))
    identity = Preconditioner(np.eye(9)[None])
    reduced = ReducedHessian(matrix, np.ones(9), matrix.toarray()[None], identity)
    assert detect_indefinite(reduced)
    positive = sp.bsr_matrix(np.diag(np.arange(1.0, 10.0)), blocksize=(9, 9))
    reduced = ReducedHessian(positive, np.ones(9), positive.toarray()[None], identity)
    assert not detect_indefinite(reduced)


def test_equivalence_check_passes_in_double():
    problem = make_synthetic_problem(5, 40, seed=11)
    report = run_equivalence_check(problem)
    assert report["passed"]
    assert report["max_deviation"] < 1e-7
    assert report["deviations"]["column_scaling"] < 1e-12
    assert report["deviations"]["reduced_hessian"] < 1e-9
    assert "joint_pose_increment" in report["deviations"]


def test_equivalence_check_single_precision_is_informational():
    report = run_equivalence_check(make_synthetic_problem(3, 15, seed=5), precision="single")
    assert report["passed"] is None
    assert np.isfinite(report["max_deviation"])


def test_equivalence_check_camera_limit():
    with pytest.raises(ConfigError):
        run_equivalence_check(make_synthetic_problem(51, 10, seed=0))


def test_sc_backend_releases_memory(small_problem):
    backend = ExplicitScBackend(small_problem, SolverConfig(backend="explicit_sc", thread_count=1))
    backend.linearize()
    step = backend.solve(1e-4, 1e-6)
    assert step.model_decrease > 0
    assert backend.peak_memory > 0
    backend.release()
    assert backend.tracker.current_bytes == 0


def test_equivalence_over_random_problems():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for seed in range(100):
        n_cameras = int(rng.integers(2, 6))
        n_landmarks = int(rng.integers(5, 31))
        problem = make_synthetic_problem(n_cameras, n_landmarks, min_obs=2, max_obs=6, seed=seed)
        report = run_equivalence_check(problem)
        assert report["passed"], f"seed {seed}: {report['deviations']}"
        worst = max(worst, report["max_deviation"])
    assert worst < 1e-8
