import numpy as np
import pytest

from bamg.problem import JacobianBlocks, evaluate
from bamg.schur import (
    Damping,
    back_substitute,
    build_system,
    choose_mode,
    covisibility_block_count,
    model_decrease,
    schur_explicit,
)
from bamg.solver import pcg
from bamg.precond import pbj_setup
from conftest import dense_normal, dense_schur, random_problem, relerr


def fabricate_jac(rng, cam_index, pt_index, n_cameras, n_points) -> JacobianBlocks:
    k = len(cam_index)
    return JacobianBlocks(
        camera=rng.normal(size=(k, 2, 9)),
        point=rng.normal(size=(k, 2, 3)),
        residual=rng.normal(size=(k, 2)),
        weight=np.ones(k),
        cam_index=np.asarray(cam_index),
        pt_index=np.asarray(pt_index),
        n_cameras=n_cameras,
        n_points=n_points,
    )


def problem_system(seed, radius=100.0, **kw):
    problem = random_problem(seed, **kw)
    _, jac = evaluate(problem)
    return build_system(jac, Damping.from_jacobian(jac, radius)), jac


# -- damping -------------------------------------------------------------------


def test_damping_rejects_nonpositive_radius():
    rng = np.random.default_rng(0)
    jac = fabricate_jac(rng, [0], [0], 1, 1)
    with pytest.raises(ValueError):
        Damping.from_jacobian(jac, 0.0)


def test_damping_clamps_tiny_and_huge_diagonals():
    jac = JacobianBlocks(
        camera=np.zeros((1, 2, 9)),
        point=np.full((1, 2, 3), 1e20),
        residual=np.zeros((1, 2)),
        weight=np.ones(1),
        cam_index=np.array([0]),
        pt_index=np.array([0]),
        n_cameras=1,
        n_points=1,
    )
    d = Damping.from_jacobian(jac, 1.0)
    np.testing.assert_allclose(d.cam_diag, 1e-6)   # zero clamped up
    np.testing.assert_allclose(d.pt_diag, 1e32)    # 2e40 clamped down


# -- build_system -----------------------------------------------------------------


def test_build_system_single_observation_matches_dense_partition():
    rng = np.random.default_rng(1)
    jac = fabricate_jac(rng, [0], [0], 1, 1)
    damping = Damping.from_jacobian(jac, 50.0)
    sys = build_system(jac, damping)
    H, g = dense_normal(jac, damping)
    np.testing.assert_allclose(sys.A.to_dense(), H[:9, :9], atol=1e-12)
    np.testing.assert_allclose(sys.C.to_dense(), H[9:, 9:], atol=1e-12)
    np.testing.assert_allclose(sys.W.to_dense(), H[:9, 9:], atol=1e-12)
    np.testing.assert_allclose(sys.grad_pt, -g[9:], atol=1e-12)


def test_build_system_zero_jacobian_gives_clamped_diagonals():
    jac = JacobianBlocks(
        camera=np.zeros((1, 2, 9)),
        point=np.zeros((1, 2, 3)),
        residual=np.ones((1, 2)),
        weight=np.ones(1),
        cam_index=np.array([0]),
        pt_index=np.array([0]),
        n_cameras=1,
        n_points=1,
    )
    damping = Damping.from_jacobian(jac, 2.0)
    sys = build_system(jac, damping)
    np.testing.assert_allclose(sys.A.to_dense(), np.eye(9) * 5e-7)
    np.testing.assert_allclose(sys.C.to_dense(), np.eye(3) * 5e-7)
    np.testing.assert_allclose(sys.W.blocks, 0.0)


def test_disjoint_cameras_give_block_diagonal_schur():
    rng = np.random.default_rng(2)
    jac = fabricate_jac(rng, [0, 1], [0, 1], 2, 2)
    sys = build_system(jac, Damping.from_jacobian(jac, 10.0))
    assert sys.W.n_block_entries == 2
    s = schur_explicit(sys)
    dense = s.to_dense()
    np.testing.assert_allclose(dense[0:9, 9:18], 0.0)
    np.testing.assert_allclose(dense[9:18, 0:9], 0.0)


# -- explicit Schur complement -----------------------------------------------------


def test_schur_explicit_no_coupling_equals_a():
    jac = JacobianBlocks(
        camera=np.zeros((1, 2, 9)),
        point=np.zeros((1, 2, 3)),
        residual=np.ones((1, 2)),
        weight=np.ones(1),
        cam_index=np.array([0]),
        pt_index=np.array([0]),
        n_cameras=1,
        n_points=1,
    )
    sys = build_system(jac, Damping.from_jacobian(jac, 1.0))
    np.testing.assert_allclose(
        schur_explicit(sys).to_dense(), sys.A.to_dense(), atol=1e-15
    )


def test_schur_explicit_two_cameras_shared_point_dense_oracle():
    rng = np.random.default_rng(3)
    jac = fabricate_jac(rng, [0, 1], [0, 0], 2, 1)
    damping = Damping.from_jacobian(jac, 25.0)
    sys = build_system(jac, damping)
    H, g = dense_normal(jac, damping)
    S, rhs = dense_schur(H, g, 2)
    np.testing.assert_allclose(schur_explicit(sys).to_dense(), S, atol=1e-10)
    np.testing.assert_allclose(sys.rhs_cam, rhs, atol=1e-10)


def test_schur_explicit_matches_dense_on_random_problems():
    for seed in range(4):
        sys, jac = problem_system(40 + seed, n_cameras=4, n_points=12)
        H, g = dense_normal(jac, Damping.from_jacobian(jac, 100.0))
        S, rhs = dense_schur(H, g, 4)
        assert relerr(sys.ensure_explicit().to_dense(), S) <= 1e-10
        assert relerr(sys.rhs_cam, rhs) <= 1e-10


def test_implicit_product_matches_explicit_on_ten_cameras():
    sys, _ = problem_system(5, n_cameras=10, n_points=30)
    explicit = sys.ensure_explicit()
    rng = np.random.default_rng(6)
    for _ in range(5):
        x = rng.normal(size=90)
        assert relerr(sys.implicit_matvec(x), explicit.matvec(x)) <= 1e-10


def test_implicit_matvec_zero_vector():
    sys, _ = problem_system(7)
    np.testing.assert_allclose(sys.implicit_matvec(np.zeros(45)), 0.0)


def test_implicit_matvec_no_coupling_is_a_product():
    jac = JacobianBlocks(
        camera=np.zeros((2, 2, 9)),
        point=np.zeros((2, 2, 3)),
        residual=np.ones((2, 2)),
        weight=np.ones(2),
        cam_index=np.array([0, 1]),
        pt_index=np.array([0, 1]),
        n_cameras=2,
        n_points=2,
    )
    sys = build_system(jac, Damping.from_jacobian(jac, 1.0))
    x = np.arange(18.0)
    np.testing.assert_allclose(sys.implicit_matvec(x), sys.A.matvec(x))


# -- mode choice ---------------------------------------------------------------------


def test_choose_mode_dense_covisibility_prefers_implicit():
    rng = np.random.default_rng(8)
    jac = fabricate_jac(rng, [0, 1, 2, 3, 4], [0, 0, 0, 0, 0], 5, 1)
    sys = build_system(jac, Damping.from_jacobian(jac, 1.0))
    assert covisibility_block_count(sys) == 25
    assert choose_mode(sys) == "implicit"


def test_choose_mode_diagonal_coupling_prefers_explicit():
    rng = np.random.default_rng(9)
    jac = fabricate_jac(rng, [0, 1], [0, 1], 2, 2)
    sys = build_system(jac, Damping.from_jacobian(jac, 1.0))
    assert covisibility_block_count(sys) == 2
    assert choose_mode(sys) == "explicit"


def test_choose_mode_tie_prefers_explicit():
    # 2 cameras sharing one point, 4 unobserved points: both cost formulas
    # come to 648 stored-entry flops.
    rng = np.random.default_rng(10)
    jac = fabricate_jac(rng, [0, 1], [0, 0], 2, 6)
    sys = build_system(jac, Damping.from_jacobian(jac, 1.0))
    explicit_cost = 2 * covisibility_block_count(sys) * 81
    implicit_cost = 2 * (
        sys.A.nnz_scalar() + 2 * sys.W.nnz_scalar() + sys.C.nnz_scalar()
    )
    assert explicit_cost == implicit_cost
    assert choose_mode(sys) == "explicit"


# -- back substitution ------------------------------------------------------------


def test_back_substitute_no_coupling_ignores_camera_step():
    jac = JacobianBlocks(
        camera=np.zeros((1, 2, 9)),
        point=np.zeros((1, 2, 3)),
        residual=np.ones((1, 2)),
        weight=np.ones(1),
        cam_index=np.array([0]),
        pt_index=np.array([0]),
        n_cameras=1,
        n_points=1,
    )
    sys = build_system(jac, Damping.from_jacobian(jac, 1.0))
    a = back_substitute(sys, np.zeros(9))
    b = back_substitute(sys, np.ones(9) * 7.0)
    np.testing.assert_allclose(a, b)
    np.testing.assert_allclose(a, sys.C.solve(sys.grad_pt))


def test_back_substitute_single_pair_full_space_residual():
    rng = np.random.default_rng(11)
    jac = fabricate_jac(rng, [0], [0], 1, 1)
    damping = Damping.from_jacobian(jac, 100.0)
    sys = build_system(jac, damping)
    H, g = dense_normal(jac, damping)
    dc = np.linalg.solve(sys.ensure_explicit().to_dense(), sys.rhs_cam)
    dp = back_substitute(sys, dc)
    full = np.concatenate([dc, dp])
    assert np.linalg.norm(H @ full + g) <= 1e-10 * np.linalg.norm(g)


def test_full_step_matches_dense_solve():
    for seed in (12, 13):
        sys, jac = problem_system(seed, n_cameras=4, n_points=10, radius=100.0)
        damping = Damping.from_jacobian(jac, 100.0)
        H, g = dense_normal(jac, damping)
        want = np.linalg.solve(H, -g)
        dc = np.linalg.solve(sys.ensure_explicit().to_dense(), sys.rhs_cam)
        dp = back_substitute(sys, dc)
        assert relerr(np.concatenate([dc, dp]), want) <= 1e-8


def test_model_decrease_matches_dense_quadratic():
    sys, jac = problem_system(14, n_cameras=4, n_points=10, radius=100.0)
    damping = Damping.from_jacobian(jac, 100.0)
    H, g = dense_normal(jac, damping)
    dc, _ = pcg(sys.matvec, pbj_setup(sys).apply, sys.rhs_cam,
                tau=1e-12, residual_tolerance=1e-13)
    dp = back_substitute(sys, dc)
    step = np.concatenate([dc, dp])
    dense_value = -(0.5 * step @ (H @ step) + g @ step)
    assert model_decrease(sys, dc) == pytest.approx(dense_value, rel=1e-8)


def test_spd_probes_on_schur_operator():
    sys, _ = problem_system(15, n_cameras=6, n_points=18)
    rng = np.random.default_rng(16)
    n = 54
    for _ in range(10):
        x, y = rng.normal(size=n), rng.normal(size=n)
        sx, sy = sys.matvec(x), sys.matvec(y)
        scale = np.linalg.norm(sx) * np.linalg.norm(y) + 1e-30
        assert abs(x @ sy - y @ sx) <= 1e-10 * scale
        assert x @ sx > 0
