"""
Random, well-posed bundle adjustment problems for tests and equivalence checks
"""
import numpy as np
from scipy.spatial.transform import Rotation

from src.bal.dataset import BaProblem
from src.geometry.projection import project_batch


def _look_at(center: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Rotation taking world to a camera at `center` whose -z axis points at `target`"""
    forward = target - center
    forward /= np.linalg.norm(forward)
    z_axis = -forward
    x_axis = np.cross(up, z_axis)
    if np.linalg.norm(x_axis) < 1e-9:
        x_axis = np.cross((0.0, 1.0, 0.0), z_axis)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    return np.stack([x_axis, y_axis, z_axis])


def make_synthetic_problem(
    n_cameras: int = 3,
    n_landmarks: int = 20,
    min_obs: int = 2,
    max_obs: int = 6,
    seed: int = 0,
    pixel_noise: float = 0.5,
    focal: float = 500.0,
    distortion: bool = True,
    name: str = "",
) -> BaProblem:
    """
    Cameras on a ring of radius 6 looking at landmarks spread in [-1, 1]^3.

    Args:
        n_cameras: Number of cameras (>= 2)
        n_landmarks: Number of landmarks
        min_obs, max_obs: Range of k_j, clipped to the number of cameras
        seed: Seed for numpy's generator
        pixel_noise: Std of Gaussian noise added to the ideal projections
        focal: Focal length in pixels
        distortion: Draw small non-zero k1, k2 when True

    Returns:
        BaProblem whose observations are grouped by landmark
    """
    if n_cameras < 2:
        raise ValueError("need at least two cameras")
    rng = np.random.default_rng(seed)
    max_obs = min(max_obs, n_cameras)
    min_obs = min(max(2, min_obs), max_obs)

    points = rng.uniform(-1.0, 1.0, size=(n_landmarks, 3))
    cameras = np.zeros((n_cameras, 9))
    for i in range(n_cameras):
        angle = 2.0 * np.pi * i / n_cameras + rng.uniform(-0.2, 0.2)
        center = np.array([6.0 * np.cos(angle), 6.0 * np.sin(angle), rng.uniform(-1.0, 1.0)])
        R = _look_at(center, rng.normal(0.0, 0.1, size=3))
        cameras[i, 0:3] = Rotation.from_matrix(R).as_rotvec()
        cameras[i, 3:6] = -R @ center
        cameras[i, 6] = focal * rng.uniform(0.9, 1.1)
        if distortion:
            cameras[i, 7] = rng.uniform(-0.05, 0.05)
            cameras[i, 8] = rng.uniform(-0.01, 0.01)

    camera_indices, point_indices = [], []
    for j in range(n_landmarks):
        k = int(rng.integers(min_obs, max_obs + 1))
        for cam in np.sort(rng.choice(n_cameras, size=k, replace=False)):
            camera_indices.append(cam)
            point_indices.append(j)
    camera_indices = np.asarray(camera_indices, dtype=np.int64)
    point_indices = np.asarray(point_indices, dtype=np.int64)

    pixels = project_batch(cameras[camera_indices], points[point_indices])
    pixels = pixels + rng.normal(0.0, pixel_noise, size=pixels.shape)
    return BaProblem(cameras, points, camera_indices, point_indices, pixels,
                     name or f"synthetic-{n_cameras}-{n_landmarks}-{seed}")
