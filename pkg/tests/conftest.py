"""Shared builders: random bundle problems and dense reference assemblies."""

import numpy as np
from scipy.spatial.transform import Rotation

from bamg.problem import BundleProblem, Camera, JacobianBlocks, project
from bamg.schur import Damping


def random_problem(seed, n_cameras=5, n_points=15, loss="trivial",
                   pixel_noise=0.5, decoupled=False) -> BundleProblem:
    """Cameras on a circle looking inward at a point cloud near the origin.

    Every point is observed by at least two cameras and every camera sees at
    least one point; pixels are exact projections plus seeded Gaussian noise.
    With ``decoupled=True`` the cameras and points split into two halves with
    no observations across the split.
    """
    rng = np.random.default_rng(seed)
    n_groups = 2 if decoupled else 1
    group_shift = np.array([60.0, 0.0, 0.0])

    cams = []
    cam_group = []
    for i in range(n_cameras):
        g = i % n_groups
        angle = 2 * np.pi * i / n_cameras + rng.uniform(-0.1, 0.1)
        center = np.array(
            [10 * np.cos(angle), 10 * np.sin(angle), rng.uniform(-1, 1)]
        ) + g * group_shift
        target = g * group_shift
        look = target - center
        look = look / np.linalg.norm(look)
        z_c = -look
        up = np.array([0.0, 0.0, 1.0])
        x_c = np.cross(up, z_c)
        x_c = x_c / np.linalg.norm(x_c)
        y_c = np.cross(z_c, x_c)
        R = np.stack([x_c, y_c, z_c])
        rotvec = Rotation.from_matrix(R).as_rotvec()
        t = -R @ center
        focal = 500.0 + rng.uniform(-50, 50)
        k1 = rng.uniform(-0.05, 0)
        k2 = rng.uniform(0, 0.01)
        cams.append(np.concatenate([rotvec, t, [focal, k1, k2]]))
        cam_group.append(g)
    cams = np.array(cams)
    cam_group = np.array(cam_group)

    pts = rng.uniform(-2, 2, (n_points, 3))
    pt_group = np.arange(n_points) % n_groups
    pts += pt_group[:, None] * group_shift

    ci, pi = [], []
    for p in range(n_points):
        pool = np.flatnonzero(cam_group == pt_group[p])
        n_seen = rng.integers(2, len(pool) + 1)
        for c in sorted(rng.choice(pool, size=n_seen, replace=False)):
            ci.append(int(c))
            pi.append(p)
    ci = np.array(ci)
    pi = np.array(pi)
    assert np.bincount(ci, minlength=n_cameras).min() >= 1, "uncovered camera"

    pixels = np.array(
        [project(Camera.from_array(cams[c]), pts[p]) for c, p in zip(ci, pi)]
    )
    if pixel_noise:
        pixels = pixels + rng.normal(0, pixel_noise, pixels.shape)
    return BundleProblem(cams, pts, ci, pi, pixels, loss=loss)


def dense_jacobian(jac: JacobianBlocks) -> tuple[np.ndarray, np.ndarray]:
    """Scatter the weighted blocks into a dense (2k, 9n+3m) matrix."""
    k = len(jac.cam_index)
    nc, npt = jac.n_cameras, jac.n_points
    J = np.zeros((2 * k, 9 * nc + 3 * npt))
    for r in range(k):
        c, p = jac.cam_index[r], jac.pt_index[r]
        J[2 * r:2 * r + 2, 9 * c:9 * c + 9] = jac.camera[r]
        J[2 * r:2 * r + 2, 9 * nc + 3 * p:9 * nc + 3 * p + 3] = jac.point[r]
    return J, jac.residual.reshape(-1)


def dense_damping(d: Damping) -> np.ndarray:
    return np.concatenate([d.cam_diag.ravel(), d.pt_diag.ravel()])


def dense_normal(jac: JacobianBlocks, damping: Damping):
    """Dense damped normal equations: H = J^T J + diag(d), g = J^T f."""
    J, f = dense_jacobian(jac)
    H = J.T @ J + np.diag(dense_damping(damping))
    return H, J.T @ f


def dense_schur(H: np.ndarray, g: np.ndarray, n_cameras: int):
    """Dense Schur complement of H and the reduced right-hand side."""
    nc9 = 9 * n_cameras
    A = H[:nc9, :nc9]
    W = H[:nc9, nc9:]
    C = H[nc9:, nc9:]
    Cinv = np.linalg.inv(C)
    S = A - W @ Cinv @ W.T
    rhs = -(g[:nc9] - W @ (Cinv @ g[nc9:]))
    return S, rhs


def relerr(got, want) -> float:
    got = np.asarray(got, dtype=float)
    want = np.asarray(want, dtype=float)
    denom = np.linalg.norm(want)
    return float(np.linalg.norm(got - want) / (denom if denom else 1.0))
