"""
Numerical cross-check of the two landmark elimination methods on one
linearization: QR-marginalized blocks vs. the explicit Schur complement, and
both against a dense solve of the joint damped normal equations.
"""
from typing import Any, Dict

import numpy as np

from src.bal.dataset import BaProblem
from src.core.errors import ConfigError
from src.core.logging import get_logger
from src.geometry.projection import CAMERA_DIM, POINT_DIM, evaluate_observations
from src.solvers.landmark_block import BlockStore
from src.solvers.reduced_solver import build_reduced_system, compute_column_scaling, damping_diagonal
from src.solvers.sc_baseline import assemble_hessian, scale_hessian, sc_back_substitute, schur_reduce

logger = get_logger(__name__)

MAX_CHECK_CAMERAS = 50
MAX_JOINT_COLUMNS = 3000
PASS_THRESHOLD = 1e-6


def relative_deviation(a: np.ndarray, b: np.ndarray) -> float:
    """max |a - b| / max |b|"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.max(np.abs(b))) if b.size else 0.0, np.finfo(np.float64).tiny)
    return float(np.max(np.abs(a - b))) / scale if a.size else 0.0


def _joint_solution(problem: BaProblem, huber_delta: float, scaling: np.ndarray, lmbda: float,
                    damping_sq: np.ndarray) -> np.ndarray:
    """Scaled increment from the dense joint system (J^T J + lambda D^2) dx = -J^T r"""
    lin = evaluate_observations(problem, huber_delta)
    n_r = problem.n_observations
    n_pose = CAMERA_DIM * problem.n_cameras
    J = np.zeros((2 * n_r, n_pose + POINT_DIM * problem.n_points))
    rows = np.arange(n_r)
    for d in range(2):
        for c in range(CAMERA_DIM):
            J[2 * rows + d, CAMERA_DIM * problem.camera_indices + c] = lin.jac_cam[:, d, c]
        for c in range(POINT_DIM):
            J[2 * rows + d, n_pose + POINT_DIM * problem.point_indices + c] = lin.jac_point[:, d, c]
    J *= scaling
    H = J.T @ J + np.diag(lmbda * damping_sq)
    return -np.linalg.solve(H, J.T @ lin.residuals.ravel())


def run_equivalence_check(problem: BaProblem, lmbda: float = 1e-4, precision: str = "double",
                          huber_delta: float = 1.0, qr_method: str = "givens",
                          min_diagonal: float = 1e-12, max_diagonal: float = 1e32) -> Dict[str, Any]:
    """
    Compare reduced camera matrices, reduced gradients and increments of both
    methods on the first linearization of `problem`.

    Returns:
        Dict with "deviations" (name -> max relative deviation), "passed"
        (None in single precision, which is informational only) and "success"

    Raises:
        ConfigError: problem has more than MAX_CHECK_CAMERAS cameras
    """
    if problem.n_cameras > MAX_CHECK_CAMERAS:
        raise ConfigError(f"equivalence check is limited to {MAX_CHECK_CAMERAS} cameras, "
                          f"'{problem.name}' has {problem.n_cameras}")
    dtype = np.float32 if precision == "single" else np.float64
    n_pose = CAMERA_DIM * problem.n_cameras

    store = BlockStore(problem, dtype)
    store.linearize(problem, huber_delta)
    scale_qr = compute_column_scaling(store)
    damping_qr = damping_diagonal(store.scaled_column_sq, min_diagonal, max_diagonal)
    excluded = store.marginalize(qr_method)
    if lmbda > 0:
        store.apply_damping(lmbda, damping_qr[n_pose:].reshape(-1, POINT_DIM))
    reduced_qr = build_reduced_system(store, lmbda, damping_qr[:n_pose])

    hessian = assemble_hessian(problem, huber_delta, dtype)
    scale_sc = scale_hessian(hessian)
    damping_sc = damping_diagonal(hessian.diagonal().astype(np.float64), min_diagonal, max_diagonal)
    reduced_sc = schur_reduce(hessian, lmbda, damping_sc)

    H_qr = reduced_qr.to_dense().astype(np.float64)
    H_sc = reduced_sc.to_dense().astype(np.float64)
    dp_qr = -np.linalg.solve(H_qr, reduced_qr.rhs.astype(np.float64))
    dp_sc = -np.linalg.solve(H_sc, reduced_sc.rhs.astype(np.float64))
    dl_qr = store.back_substitute(dp_qr)
    dl_sc = sc_back_substitute(hessian, dp_sc)

    deviations = {
        "column_scaling": relative_deviation(scale_qr, scale_sc),
        "reduced_hessian": relative_deviation(H_qr, H_sc),
        "reduced_gradient": relative_deviation(reduced_qr.rhs, reduced_sc.rhs),
        "pose_increment": relative_deviation(dp_qr, dp_sc),
        "landmark_increment": relative_deviation(dl_qr, dl_sc),
    }
    if n_pose + POINT_DIM * problem.n_points <= MAX_JOINT_COLUMNS and not excluded:
        joint = _joint_solution(problem, huber_delta, scale_qr, lmbda, damping_qr)
        deviations["joint_pose_increment"] = relative_deviation(dp_qr, joint[:n_pose])
        deviations["joint_landmark_increment"] = relative_deviation(dl_qr, joint[n_pose:])

    worst = max(deviations.values())
    passed = None if precision == "single" else bool(worst < PASS_THRESHOLD)
    for name, value in deviations.items():
        logger.info(f"{name:26s} {value:.3e}")
    logger.info(f"Equivalence on '{problem.name}' ({precision}, lambda={lmbda:g}): max deviation {worst:.3e}")
    return {
        "success": True,
        "problem": problem.name,
        "precision": precision,
        "lambda": lmbda,
        "deviations": deviations,
        "max_deviation": worst,
        "excluded_landmarks": excluded,
        "passed": passed,
    }
