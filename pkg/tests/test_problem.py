import math
import warnings

import numpy as np
import pytest

from bamg import rotation
from bamg.problem import (
    BehindCameraError,
    BundleProblem,
    Camera,
    evaluate,
    gauge_nullspace,
    gauge_point_motion,
    huber,
    loss_weight,
    project,
    residual,
)
from conftest import dense_jacobian, random_problem


def make_camera(rot=(0, 0, 0), t=(0, 0, 0), focal=1.0, k1=0.0, k2=0.0) -> Camera:
    return Camera(np.array(rot, float), np.array(t, float), focal, k1, k2)


# -- projection ----------------------------------------------------------------


def test_project_on_optical_axis():
    cam = make_camera()
    np.testing.assert_allclose(project(cam, np.array([0.0, 0.0, -1.0])), [0.0, 0.0])


def test_project_unit_offset():
    cam = make_camera()
    np.testing.assert_allclose(project(cam, np.array([1.0, 0.0, -1.0])), [1.0, 0.0])


def test_project_with_distortion():
    cam = make_camera(k1=0.1)
    np.testing.assert_allclose(
        project(cam, np.array([1.0, 0.0, -1.0])), [1.1, 0.0], atol=1e-15
    )


def test_project_scales_with_focal():
    cam = make_camera(focal=800.0)
    np.testing.assert_allclose(
        project(cam, np.array([0.5, -0.25, -1.0])), [400.0, -200.0]
    )


def test_project_point_behind_camera_raises():
    cam = make_camera()
    with pytest.raises(BehindCameraError):
        project(cam, np.array([0.0, 0.0, 1.0]))


def test_residual_zero_when_measurement_exact():
    cam = make_camera(focal=500.0, k1=-0.01)
    point = np.array([0.2, -0.3, -2.0])
    pix = project(cam, point)
    np.testing.assert_allclose(residual(cam, point, pix), [0.0, 0.0])


def test_projection_matches_scalar_reimplementation():
    # Straight-line duplicate of the projection chain, scalar arithmetic only.
    rng = np.random.default_rng(11)
    for _ in range(10):
        aa = rng.normal(size=3) * 0.5
        t = rng.normal(size=3)
        focal = 600.0 + rng.uniform(-100, 100)
        k1, k2 = rng.uniform(-0.1, 0), rng.uniform(0, 0.02)
        X = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-6, -3)])

        R = rotation.matrix(aa[None])[0]
        p_cam = R @ X + t
        if p_cam[2] >= -1e-6:
            continue
        px = -p_cam[0] / p_cam[2]
        py = -p_cam[1] / p_cam[2]
        n2 = px * px + py * py
        dist = 1.0 + k1 * n2 + k2 * n2 * n2
        want = (focal * dist * px, focal * dist * py)

        cam = make_camera(aa, t, focal, k1, k2)
        got = project(cam, X)
        assert got[0] == pytest.approx(want[0], rel=1e-12)
        assert got[1] == pytest.approx(want[1], rel=1e-12)


def test_project_invariant_under_rotation_rewrap():
    rng = np.random.default_rng(12)
    aa = rng.normal(size=3)
    aa = aa / np.linalg.norm(aa) * 2.5  # angle within (0, pi)
    rewrapped = aa * (1.0 - 2.0 * np.pi / np.linalg.norm(aa))
    # pick the world point so it lands in front of the camera by construction
    R = rotation.matrix(aa[None])[0]
    X = R.T @ np.array([0.4, 0.1, -3.0])
    cam_a = make_camera(aa, (0, 0, 0), 500.0)
    cam_b = make_camera(rewrapped, (0, 0, 0), 500.0)
    np.testing.assert_allclose(project(cam_a, X), project(cam_b, X), atol=1e-10)


def test_camera_center_round_trip():
    rng = np.random.default_rng(13)
    aa = rng.normal(size=3)
    center = rng.normal(size=3) * 5
    R = rotation.matrix(aa[None])[0]
    cam = make_camera(aa, -R @ center, 500.0)
    np.testing.assert_allclose(cam.center(), center, atol=1e-12)


# -- loss -----------------------------------------------------------------------


def test_huber_checkpoints():
    s = np.array([0.25, 1.0, 4.0])
    np.testing.assert_allclose(huber(s), [0.25, 1.0, 3.0])


def test_huber_weight_beyond_knee():
    w = loss_weight(np.array([4.0]), "huber")
    assert w[0] == pytest.approx(math.sqrt(0.5), rel=1e-15)


def test_trivial_weight_is_one():
    np.testing.assert_allclose(loss_weight(np.array([0.1, 9.0]), "trivial"), [1, 1])


# -- evaluate -------------------------------------------------------------------


def test_zero_noise_problem_has_zero_objective_and_unit_weights():
    problem = random_problem(20, pixel_noise=0.0)
    obj, jac = evaluate(problem)
    assert obj == 0.0
    np.testing.assert_allclose(jac.weight, 1.0)
    np.testing.assert_allclose(jac.residual, 0.0)


def test_single_observation_jacobian_matches_finite_differences():
    rng = np.random.default_rng(21)
    cam = np.concatenate([rng.normal(size=3) * 0.4, rng.normal(size=3),
                          [500.0, -0.02, 0.005]])
    pt = np.array([0.3, -0.2, -4.0])
    pix = project(Camera.from_array(cam), pt) + np.array([0.7, -0.4])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        problem = BundleProblem(cam[None], pt[None], [0], [0], pix[None])
    _, jac = evaluate(problem)

    eps = 1e-6

    def res_at(c, p):
        return project(Camera.from_array(c), p) - pix

    for j in range(9):
        d = np.zeros(9)
        d[j] = eps * max(1.0, abs(cam[j]))
        fd = (res_at(cam + d, pt) - res_at(cam - d, pt)) / (2 * d[j])
        scale = max(np.abs(fd).max(), 1e-3)
        np.testing.assert_allclose(jac.camera[0, :, j], fd, atol=1e-6 * scale)
    for j in range(3):
        d = np.zeros(3)
        d[j] = eps
        fd = (res_at(cam, pt + d) - res_at(cam, pt - d)) / (2 * eps)
        scale = max(np.abs(fd).max(), 1e-3)
        np.testing.assert_allclose(jac.point[0, :, j], fd, atol=1e-6 * scale)


def test_huber_jacobian_weight_applied():
    problem = random_problem(22, loss="huber", pixel_noise=3.0)
    _, jac_h = evaluate(problem)
    trivial = BundleProblem(problem.camera_params, problem.points,
                            problem.cam_index, problem.pt_index, problem.pixels)
    _, jac_t = evaluate(trivial)
    s = np.sum(jac_t.residual**2, axis=1)
    w = loss_weight(s, "huber")
    np.testing.assert_allclose(jac_h.residual, jac_t.residual * w[:, None], atol=1e-12)
    np.testing.assert_allclose(jac_h.weight, w)


def test_gradient_matches_finite_differences_of_objective():
    for loss in ("trivial", "huber"):
        problem = random_problem(23, loss=loss, pixel_noise=2.0)
        obj, jac = evaluate(problem)
        g_cam, g_pt = jac.gradient()
        rng = np.random.default_rng(24)
        d_cam = rng.normal(size=problem.camera_params.shape)
        d_pt = rng.normal(size=problem.points.shape)
        eps = 1e-6
        up, _ = evaluate(problem, problem.camera_params + eps * d_cam,
                         problem.points + eps * d_pt, with_jacobian=False)
        dn, _ = evaluate(problem, problem.camera_params - eps * d_cam,
                         problem.points - eps * d_pt, with_jacobian=False)
        fd = (up - dn) / (2 * eps)
        analytic = 2.0 * (np.sum(g_cam * d_cam) + np.sum(g_pt * d_pt))
        assert analytic == pytest.approx(fd, rel=2e-5)


def test_evaluate_reports_behind_camera_observations():
    problem = random_problem(25)
    bad = problem.points.copy()
    # Push one point far behind every camera by reflecting through the origin.
    bad[0] = -bad[0] * 50
    with pytest.raises(BehindCameraError) as err:
        evaluate(problem, problem.camera_params, bad)
    bad_obs = np.flatnonzero(problem.pt_index == 0)
    assert set(err.value.observation_indices) & set(bad_obs.tolist())


# -- gauge ----------------------------------------------------------------------


def test_gauge_translation_mode_identity_rotation():
    cam = np.array([[0.0, 0, 0, 1.0, 2.0, 3.0, 500.0, 0.0, 0.0]])
    pts = np.array([[0.0, 0, -5], [1.0, 0, -5]])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        problem = BundleProblem(
            cam, pts, [0, 0], [0, 1],
            [project(Camera.from_array(cam[0]), p) for p in pts],
        )
    K = gauge_nullspace(problem).data
    col = K[:, 0]  # world translation along x
    np.testing.assert_allclose(col[0:3], 0.0)        # rotation untouched
    np.testing.assert_allclose(col[3:6], [-1, 0, 0])  # t shifts by -R e_x
    np.testing.assert_allclose(col[6:9], 0.0)        # intrinsics untouched


def test_gauge_scale_mode_matches_translation():
    problem = random_problem(26)
    K = gauge_nullspace(problem).data.reshape(problem.n_cameras, 9, 16)
    np.testing.assert_allclose(K[:, 3:6, 6], problem.camera_params[:, 3:6])


def test_gauge_constant_intrinsic_modes():
    problem = random_problem(27)
    K = gauge_nullspace(problem).data.reshape(problem.n_cameras, 9, 16)
    for j in range(9):
        want = np.zeros(9)
        want[j] = 1.0
        np.testing.assert_allclose(
            K[:, :, 7 + j], np.tile(want, (problem.n_cameras, 1))
        )


def test_gauge_modes_are_finite_difference_invariant():
    problem = random_problem(28, pixel_noise=1.0)
    obj, jac = evaluate(problem)
    f = jac.residual.reshape(-1)
    K = gauge_nullspace(problem).data
    N_pt = gauge_point_motion(problem)
    eps = 1e-6
    for j in range(7):
        d_cam = K[:, j].reshape(-1, 9)
        d_pt = N_pt[:, j].reshape(-1, 3)
        scale = np.sqrt(np.sum(d_cam**2) + np.sum(d_pt**2))
        d_cam, d_pt = d_cam / scale, d_pt / scale
        _, jup = evaluate(problem, problem.camera_params + eps * d_cam,
                          problem.points + eps * d_pt)
        _, jdn = evaluate(problem, problem.camera_params - eps * d_cam,
                          problem.points - eps * d_pt)
        df = (jup.residual - jdn.residual).reshape(-1) / (2 * eps)
        assert np.linalg.norm(df) <= 1e-6 * np.linalg.norm(f)


def test_gauge_nullspace_annihilates_normal_matrix():
    problem = random_problem(29, pixel_noise=1.0)
    _, jac = evaluate(problem)
    J, _ = dense_jacobian(jac)
    JtJ = J.T @ J
    K = gauge_nullspace(problem).data
    N_pt = gauge_point_motion(problem)
    N = np.vstack([K[:, :7], N_pt])
    bound = 1e-6 * np.linalg.norm(JtJ) * np.linalg.norm(N)
    assert np.linalg.norm(JtJ @ N) <= bound


# -- containers -------------------------------------------------------------------


def test_problem_validates_indices():
    with pytest.raises(ValueError):
        BundleProblem(np.zeros((1, 9)), np.zeros((1, 3)), [2], [0], np.zeros((1, 2)))


def test_problem_rejects_duplicate_observation():
    with pytest.raises(ValueError):
        BundleProblem(
            np.zeros((1, 9)), np.zeros((1, 3)), [0, 0], [0, 0], np.zeros((2, 2))
        )


def test_problem_warns_on_underobserved_point():
    with pytest.warns(UserWarning):
        BundleProblem(
            np.zeros((2, 9)),
            np.array([[0.0, 0, -5], [0.5, 0, -5]]),
            [0, 0, 1],
            [0, 1, 1],
            np.zeros((3, 2)),
        )


def test_problem_equality_and_copy():
    problem = random_problem(30)
    clone = problem.copy()
    assert problem == clone
    clone.points[0, 0] += 1.0
    assert problem != clone


def test_camera_rejects_nonpositive_focal():
    with pytest.raises(ValueError):
        make_camera(focal=0.0)
