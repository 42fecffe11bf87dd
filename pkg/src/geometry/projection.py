"""
Snavely camera model used by the BAL datasets.

A camera is a 9-vector (angle-axis rotation, translation, focal length, k1, k2).
A world point X projects as

    P = R(rotation) X + translation
    p = -(P_x / P_z, P_y / P_z)
    u = focal * (1 + k1 |p|^2 + k2 |p|^4) * p

All functions here work on batches (leading axis = observation) and are pure.
"""
from dataclasses import dataclass
from typing import Optional, TYPE_CHECKING

import numpy as np

from src.core.errors import ProjectionError

if TYPE_CHECKING:
    from src.bal.dataset import BaProblem

CAMERA_DIM = 9
POINT_DIM = 3
SMALL_ANGLE = 1e-8


@dataclass(frozen=True, eq=False)
class CameraParams:
    """Pose and intrinsics of one camera"""

    rotation: np.ndarray      # angle-axis, radians
    translation: np.ndarray
    focal: float
    k1: float = 0.0
    k2: float = 0.0

    @classmethod
    def from_vector(cls, v) -> "CameraParams":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (CAMERA_DIM,):
            raise ValueError(f"camera vector must have {CAMERA_DIM} entries, got shape {v.shape}")
        return cls(v[0:3].copy(), v[3:6].copy(), float(v[6]), float(v[7]), float(v[8]))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            np.asarray(self.rotation, dtype=np.float64),
            np.asarray(self.translation, dtype=np.float64),
            [self.focal, self.k1, self.k2],
        ])


@dataclass(eq=False)
class ResidualJacobian:
    """Robustly weighted residual of one observation and its Jacobians"""

    r: np.ndarray        # (2,), scaled by sqrt(weight)
    J_cam: np.ndarray    # (2, 9)
    J_lm: np.ndarray     # (2, 3)
    weight: float


@dataclass(eq=False)
class ObservationJacobians:
    """Batched residuals and Jacobians for a set of observations"""

    raw_residuals: np.ndarray   # (n, 2), unweighted
    weights: np.ndarray         # (n,)
    residuals: np.ndarray       # (n, 2), scaled by sqrt(weight)
    jac_cam: np.ndarray         # (n, 2, 9), scaled by sqrt(weight)
    jac_point: np.ndarray       # (n, 2, 3), scaled by sqrt(weight)


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices [v]x for a batch of 3-vectors"""
    v = np.asarray(v)
    out = np.zeros(v.shape[:-1] + (3, 3), dtype=v.dtype)
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def rotation_matrices(omega: np.ndarray) -> np.ndarray:
    """
    Rodrigues' formula for a batch of angle-axis vectors.

    Below SMALL_ANGLE the Taylor series I + W + W^2/2 is used.
    """
    omega = np.atleast_2d(np.asarray(omega, dtype=np.float64))
    theta = np.linalg.norm(omega, axis=-1)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0, np.sin(safe) / safe)
    b = np.where(small, 0.5, (1.0 - np.cos(safe)) / (safe * safe))
    W = skew(omega)
    eye = np.broadcast_to(np.eye(3), W.shape)
    return eye + a[:, None, None] * W + b[:, None, None] * (W @ W)


def rotation_jacobian(omega: np.ndarray, points: np.ndarray, R: Optional[np.ndarray] = None) -> np.ndarray:
    """
    d(R(omega) X)/d omega for additive perturbations of omega.

    Uses the closed form -R [X]x (w w^T + (R^T - I)[w]x) / |w|^2, and -R [X]x
    below SMALL_ANGLE.
    """
    omega = np.atleast_2d(np.asarray(omega, dtype=np.float64))
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if R is None:
        R = rotation_matrices(omega)
    theta2 = np.einsum("ni,ni->n", omega, omega)
    small = theta2 < SMALL_ANGLE * SMALL_ANGLE
    safe = np.where(small, 1.0, theta2)
    eye = np.eye(3)
    W = skew(omega)
    M = (np.einsum("ni,nj->nij", omega, omega) + (np.swapaxes(R, -1, -2) - eye) @ W) / safe[:, None, None]
    M[small] = eye
    return -R @ skew(points) @ M


def _camera_frame(cameras: np.ndarray, points: np.ndarray):
    R = rotation_matrices(cameras[:, 0:3])
    P = np.einsum("nij,nj->ni", R, points) + cameras[:, 3:6]
    return R, P


def _check_depth(P: np.ndarray, camera_indices=None, point_indices=None):
    bad = np.flatnonzero(P[:, 2] == 0.0)
    if bad.size:
        o = int(bad[0])
        cam = int(camera_indices[o]) if camera_indices is not None else None
        lm = int(point_indices[o]) if point_indices is not None else None
        raise ProjectionError(f"{bad.size} observation(s) with zero camera-frame depth", camera=cam, landmark=lm)


def project_batch(cameras: np.ndarray, points: np.ndarray, camera_indices=None, point_indices=None) -> np.ndarray:
    """Project points[n] with cameras[n]; both given as stacked parameter arrays"""
    cameras = np.atleast_2d(np.asarray(cameras, dtype=np.float64))
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    _, P = _camera_frame(cameras, points)
    _check_depth(P, camera_indices, point_indices)
    p = -P[:, :2] / P[:, 2:3]
    n2 = np.einsum("ni,ni->n", p, p)
    d = 1.0 + cameras[:, 7] * n2 + cameras[:, 8] * n2 * n2
    return (cameras[:, 6] * d)[:, None] * p


def depths(cameras: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Distance in front of the camera (-P_z: Snavely cameras look down -z)"""
    _, P = _camera_frame(np.atleast_2d(cameras), np.atleast_2d(points))
    return -P[:, 2]


def project(cam: CameraParams, point) -> np.ndarray:
    """Pixel coordinates of one point seen by one camera"""
    return project_batch(cam.to_vector()[None], np.asarray(point, dtype=np.float64)[None])[0]


def residual(cam: CameraParams, point, obs) -> np.ndarray:
    """Reprojection residual: projection minus observed pixel"""
    return project(cam, point) - np.asarray(obs, dtype=np.float64)


def huber_weights(norms: np.ndarray, huber_delta: float) -> np.ndarray:
    """IRLS weight: 1 for inliers, delta/|r| beyond delta"""
    norms = np.asarray(norms, dtype=np.float64)
    safe = np.where(norms > huber_delta, norms, 1.0)
    return np.where(norms > huber_delta, huber_delta / safe, 1.0)


def huber_rho(sq_norms: np.ndarray, huber_delta: float) -> np.ndarray:
    """Huber loss on squared residual norms: s inside delta^2, 2 delta sqrt(s) - delta^2 outside"""
    s = np.asarray(sq_norms, dtype=np.float64)
    d2 = huber_delta * huber_delta
    return np.where(s <= d2, s, 2.0 * huber_delta * np.sqrt(np.maximum(s, d2)) - d2)


def linearize_batch(cameras: np.ndarray, points: np.ndarray, pixels: np.ndarray, huber_delta: float,
                    camera_indices=None, point_indices=None) -> ObservationJacobians:
    """
    Residuals and analytic Jacobians for stacked (camera, point, pixel) triples.

    Returned residuals and Jacobians are pre-scaled by sqrt of the IRLS weight.
    """
    cameras = np.atleast_2d(np.asarray(cameras, dtype=np.float64))
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    n = cameras.shape[0]

    R, P = _camera_frame(cameras, points)
    _check_depth(P, camera_indices, point_indices)
    inv_z = 1.0 / P[:, 2]
    p = -P[:, :2] / P[:, 2:3]
    n2 = np.einsum("ni,ni->n", p, p)
    f, k1, k2 = cameras[:, 6], cameras[:, 7], cameras[:, 8]
    d = 1.0 + k1 * n2 + k2 * n2 * n2
    raw = (f * d)[:, None] * p - pixels

    dp_dP = np.zeros((n, 2, 3))
    dp_dP[:, 0, 0] = -inv_z
    dp_dP[:, 1, 1] = -inv_z
    dp_dP[:, :, 2] = P[:, :2] * (inv_z * inv_z)[:, None]
    du_dp = (f * d)[:, None, None] * np.eye(2) \
        + (f * (2.0 * k1 + 4.0 * k2 * n2))[:, None, None] * np.einsum("ni,nj->nij", p, p)
    du_dP = du_dp @ dp_dP

    jac_cam = np.empty((n, 2, CAMERA_DIM))
    jac_cam[:, :, 0:3] = du_dP @ rotation_jacobian(cameras[:, 0:3], points, R)
    jac_cam[:, :, 3:6] = du_dP
    jac_cam[:, :, 6] = d[:, None] * p
    jac_cam[:, :, 7] = (f * n2)[:, None] * p
    jac_cam[:, :, 8] = (f * n2 * n2)[:, None] * p
    jac_point = du_dP @ R

    weights = huber_weights(np.linalg.norm(raw, axis=1), huber_delta)
    sw = np.sqrt(weights)
    return ObservationJacobians(
        raw_residuals=raw,
        weights=weights,
        residuals=raw * sw[:, None],
        jac_cam=jac_cam * sw[:, None, None],
        jac_point=jac_point * sw[:, None, None],
    )


def residual_jacobian(cam: CameraParams, point, obs, huber_delta: float) -> ResidualJacobian:
    """Weighted residual and Jacobians of a single observation"""
    lin = linearize_batch(cam.to_vector()[None], np.asarray(point)[None], np.asarray(obs)[None], huber_delta)
    return ResidualJacobian(r=lin.residuals[0], J_cam=lin.jac_cam[0], J_lm=lin.jac_point[0], weight=float(lin.weights[0]))


def evaluate_observations(problem: "BaProblem", huber_delta: float) -> ObservationJacobians:
    """Linearize every observation of a problem, in problem observation order"""
    return linearize_batch(
        problem.cameras[problem.camera_indices],
        problem.points[problem.point_indices],
        problem.pixels,
        huber_delta,
        problem.camera_indices,
        problem.point_indices,
    )


def problem_residuals(problem: "BaProblem") -> np.ndarray:
    """Unweighted residuals of all observations (n_r, 2)"""
    return project_batch(
        problem.cameras[problem.camera_indices],
        problem.points[problem.point_indices],
        problem.camera_indices,
        problem.point_indices,
    ) - problem.pixels


def robust_cost(problem: "BaProblem", huber_delta: float) -> float:
    """True robust cost 1/2 sum rho(|r|^2), accumulated in double precision"""
    r = problem_residuals(problem)
    return 0.5 * float(np.sum(huber_rho(np.einsum("ni,ni->n", r, r), huber_delta)))
