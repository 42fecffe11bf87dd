import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from src.core.errors import ProjectionError
from src.geometry.projection import (
    CameraParams,
    huber_rho,
    huber_weights,
    linearize_batch,
    project,
    project_batch,
    residual,
    residual_jacobian,
    robust_cost,
    rotation_matrices,
)
from src.bal.synthetic import make_synthetic_problem


def camera(f=1.0, k1=0.0, k2=0.0, rotation=(0, 0, 0), translation=(0, 0, 0)):
    return CameraParams(np.array(rotation, dtype=float), np.array(translation, dtype=float), f, k1, k2)


def test_project_hand_examples():
    np.testing.assert_allclose(project(camera(f=3.0), [0, 0, -1]), [0, 0])
    np.testing.assert_allclose(project(camera(), [1, 1, -1]), [1, 1])
    np.testing.assert_allclose(project(camera(f=2.0, k1=0.1), [0.5, 0, -1]), [1.025, 0])


def test_residual_sign():
    cam = camera(f=2.0, k1=0.1)
    point = [0.5, 0.3, -2.0]
    obs = project(cam, point) + np.array([1.0, -2.0])
    np.testing.assert_allclose(residual(cam, point, obs), [-1.0, 2.0])
    np.testing.assert_array_equal(residual(cam, point, project(cam, point)), [0.0, 0.0])


def test_zero_depth_raises():
    with pytest.raises(ProjectionError):
        project(camera(), [1.0, 1.0, 0.0])


def test_rotation_matches_scipy():
    rng = np.random.default_rng(0)
    omega = rng.normal(size=(10, 3))
    np.testing.assert_allclose(rotation_matrices(omega), Rotation.from_rotvec(omega).as_matrix(), atol=1e-12)
    tiny = np.array([[1e-10, -2e-10, 0.5e-10]])
    np.testing.assert_allclose(rotation_matrices(tiny), Rotation.from_rotvec(tiny).as_matrix(), atol=1e-15)


def test_projection_invariant_under_full_turn():
    axis = np.array([0.3, -0.5, 0.8]) / np.linalg.norm([0.3, -0.5, 0.8])
    theta = 0.7
    a = camera(f=500.0, rotation=theta * axis, translation=(0.1, 0.2, -6.0))
    b = camera(f=500.0, rotation=(theta + 2 * np.pi) * axis, translation=(0.1, 0.2, -6.0))
    point = [0.2, -0.4, 0.3]
    np.testing.assert_allclose(project(a, point), project(b, point), atol=1e-9)


def _numeric_jacobian(cam_vec, point, pixel, h=1e-6):
    def r(c, x):
        return project_batch(c[None], x[None])[0] - pixel

    J_cam = np.zeros((2, 9))
    J_pt = np.zeros((2, 3))
    for i in range(9):
        e = np.zeros(9)
        e[i] = h
        J_cam[:, i] = (r(cam_vec + e, point) - r(cam_vec - e, point)) / (2 * h)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        J_pt[:, i] = (r(cam_vec, point + e) - r(cam_vec, point - e)) / (2 * h)
    return J_cam, J_pt


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_jacobians_match_finite_differences(seed):
    problem = make_synthetic_problem(3, 5, seed=seed)
    lin = linearize_batch(problem.cameras[problem.camera_indices], problem.points[problem.point_indices],
                          problem.pixels, huber_delta=1e9)
    for o in range(problem.n_observations):
        cam_vec = problem.cameras[problem.camera_indices[o]]
        J_cam, J_pt = _numeric_jacobian(cam_vec, problem.points[problem.point_indices[o]], problem.pixels[o])
        for analytic, numeric in ((lin.jac_cam[o], J_cam), (lin.jac_point[o], J_pt)):
            assert np.max(np.abs(analytic - numeric)) <= 1e-5 * np.max(np.abs(numeric))


def test_small_angle_rotation_jacobian():
    cam_vec = np.array([0, 0, 0, 0.1, -0.2, -5.0, 400.0, 0.01, -0.001])
    point = np.array([0.3, 0.2, 0.4])
    lin = linearize_batch(cam_vec[None], point[None], np.zeros((1, 2)), huber_delta=1e9)
    J_cam, _ = _numeric_jacobian(cam_vec, point, np.zeros(2))
    np.testing.assert_allclose(lin.jac_cam[0], J_cam, rtol=1e-5, atol=1e-6)


def test_huber_weighting():
    cam = camera(f=2.0, k1=0.1)
    point = np.array([0.5, 0.3, -2.0])
    obs = project(cam, point) - np.array([2.0, 0.0])
    robust = residual_jacobian(cam, point, obs, huber_delta=1.0)
    plain = residual_jacobian(cam, point, obs, huber_delta=1e9)
    assert robust.weight == pytest.approx(0.5)
    assert plain.weight == 1.0
    np.testing.assert_allclose(robust.r, np.sqrt(0.5) * plain.r)
    np.testing.assert_allclose(robust.J_cam, np.sqrt(0.5) * plain.J_cam)
    np.testing.assert_allclose(robust.J_lm, np.sqrt(0.5) * plain.J_lm)


def test_inlier_has_unit_weight():
    cam = camera(f=2.0)
    point = [0.1, 0.1, -1.0]
    result = residual_jacobian(cam, point, project(cam, point), huber_delta=1.0)
    assert result.weight == 1.0
    np.testing.assert_array_equal(result.r, [0.0, 0.0])


def test_huber_loss_values():
    np.testing.assert_allclose(huber_rho([0.25, 4.0], 1.0), [0.25, 3.0])
    np.testing.assert_allclose(huber_weights([0.5, 2.0, 4.0], 1.0), [1.0, 0.5, 0.25])
    # the weighted residual norm sqrt(w)|r| grows like sqrt(|r|) beyond delta
    norms = np.linspace(1.0, 10.0, 20)
    weighted = np.sqrt(huber_weights(norms, 1.0)) * norms
    assert np.all(np.diff(weighted) > 0)
    np.testing.assert_allclose(weighted, np.sqrt(norms))


def test_robust_cost_of_exact_observations():
    problem = make_synthetic_problem(3, 10, seed=4, pixel_noise=0.0)
    assert robust_cost(problem, 1.0) == 0.0


def test_jacobians_match_finite_differences_on_random_configurations():
    rng = np.random.default_rng(11)
    for trial in range(1000):
        cam_vec = np.concatenate([
            rng.normal(0.0, 0.5, size=3),
            [rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-8.0, -4.0)],
            [rng.uniform(300.0, 700.0), rng.uniform(-0.05, 0.05), rng.uniform(-0.01, 0.01)],
        ])
        point = rng.uniform(-1.0, 1.0, size=3)
        lin = linearize_batch(cam_vec[None], point[None], np.zeros((1, 2)), huber_delta=1e9)
        J_cam, J_pt = _numeric_jacobian(cam_vec, point, np.zeros(2))
        for analytic, numeric in ((lin.jac_cam[0], J_cam), (lin.jac_point[0], J_pt)):
            assert np.max(np.abs(analytic - numeric)) <= 1e-5 * np.max(np.abs(numeric)), f"trial {trial}"
