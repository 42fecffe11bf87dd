import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.bal.dataset import BaProblem  # noqa: E402
from src.bal.synthetic import make_synthetic_problem  # noqa: E402
from src.geometry.projection import CAMERA_DIM, POINT_DIM, evaluate_observations  # noqa: E402
from src.solvers.landmark_block import LandmarkBlock, block_shape  # noqa: E402


@pytest.fixture
def small_problem() -> BaProblem:
    return make_synthetic_problem(4, 30, seed=1)


@pytest.fixture
def tiny_problem() -> BaProblem:
    return make_synthetic_problem(3, 12, seed=2)


def dense_jacobian(problem: BaProblem, huber_delta: float = 1.0):
    """Full (2 n_r) x (9 n_p + 3 n_l) Jacobian and residual vector"""
    lin = evaluate_observations(problem, huber_delta)
    n_pose = CAMERA_DIM * problem.n_cameras
    J = np.zeros((2 * problem.n_observations, n_pose + POINT_DIM * problem.n_points))
    for o, (cam, lm) in enumerate(zip(problem.camera_indices, problem.point_indices)):
        J[2 * o:2 * o + 2, CAMERA_DIM * cam:CAMERA_DIM * (cam + 1)] = lin.jac_cam[o]
        J[2 * o:2 * o + 2, n_pose + POINT_DIM * lm:n_pose + POINT_DIM * (lm + 1)] = lin.jac_point[o]
    return J, lin.residuals.ravel()


def dense_schur(J: np.ndarray, r: np.ndarray, n_pose: int, damping: np.ndarray):
    """Reduced camera matrix and gradient of (J^T J + diag(damping)) by dense elimination"""
    H = J.T @ J + np.diag(damping)
    b = J.T @ r
    H_pp, H_pl, H_ll = H[:n_pose, :n_pose], H[:n_pose, n_pose:], H[n_pose:, n_pose:]
    H_ll_inv = np.linalg.inv(H_ll)
    return H_pp - H_pl @ H_ll_inv @ H_pl.T, b[:n_pose] - H_pl @ H_ll_inv @ b[n_pose:]


def random_block(k: int, seed: int = 0) -> LandmarkBlock:
    """Linearized block with Gaussian entries in the observation rows"""
    rng = np.random.default_rng(seed)
    rows, cols = block_shape(k)
    storage = np.zeros((rows, cols))
    lc = CAMERA_DIM * k
    for n in range(k):
        obs_rows = slice(2 * n, 2 * n + 2)
        storage[obs_rows, CAMERA_DIM * n:CAMERA_DIM * (n + 1)] = rng.standard_normal((2, CAMERA_DIM))
        storage[obs_rows, lc:] = rng.standard_normal((2, POINT_DIM + 1))
    return LandmarkBlock(0, np.arange(k), storage)
