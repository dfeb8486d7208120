"""Bundle adjustment problem: camera model, residuals, Jacobians, gauge modes.

A camera is 9 parameters in the order rotation (angle-axis, 3), translation
(3), focal length, and two radial distortion coefficients.  Projection follows
the street-view dataset convention: world points are rotated into the camera
frame, perspective-divided with a sign flip (the camera looks down its
negative z axis), then radially distorted and scaled by the focal length.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import rotation
from .blockmat import DenseTall

CAMERA_SIZE = 9
POINT_SIZE = 3

# A projection with |z| below this is degenerate; anything with z >= -eps is
# reported as behind the camera (the camera looks down -z).
_MIN_DEPTH = 1e-12


class BehindCameraError(Exception):
    """One or more observations project from behind the camera plane."""

    def __init__(self, observation_indices):
        self.observation_indices = np.atleast_1d(np.asarray(observation_indices, dtype=int))
        n = len(self.observation_indices)
        head = ", ".join(str(i) for i in self.observation_indices[:8])
        more = ", ..." if n > 8 else ""
        super().__init__(f"{n} observation(s) behind camera: [{head}{more}]")


@dataclass
class Camera:
    """Single camera; see module docstring for the parameter convention."""

    rotation: np.ndarray
    translation: np.ndarray
    focal: float
    k1: float = 0.0
    k2: float = 0.0

    def __post_init__(self):
        self.rotation = rotation.canonicalize(np.asarray(self.rotation, dtype=float))[0]
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        if not self.focal > 0:
            raise ValueError(f"focal length must be positive, got {self.focal}")

    def to_array(self) -> np.ndarray:
        return np.concatenate(
            [self.rotation, self.translation, [self.focal, self.k1, self.k2]]
        )

    @staticmethod
    def from_array(a: np.ndarray) -> "Camera":
        a = np.asarray(a, dtype=float).reshape(CAMERA_SIZE)
        return Camera(a[0:3], a[3:6], a[6], a[7], a[8])

    def center(self) -> np.ndarray:
        """Camera position in world coordinates, -R^T t."""
        R = rotation.matrix(self.rotation[None])[0]
        return -R.T @ self.translation


@dataclass
class Observation:
    camera: int
    point: int
    pixel: np.ndarray

    def __post_init__(self):
        self.pixel = np.asarray(self.pixel, dtype=float).reshape(2)


class BundleProblem:
    """Cameras, points, and pixel observations, stored as stacked arrays.

    ``camera_params`` is (n_cameras, 9), ``points`` is (n_points, 3);
    observations are parallel arrays ``cam_index``, ``pt_index`` (ints) and
    ``pixels`` (k, 2), kept in input order.  Rotations are canonicalized to
    angle <= pi on ingest.
    """

    def __init__(self, camera_params, points, cam_index, pt_index, pixels,
                 loss: str = "trivial"):
        self.camera_params = np.array(camera_params, dtype=float, copy=True)
        self.points = np.array(points, dtype=float, copy=True)
        self.cam_index = np.asarray(cam_index, dtype=np.int64).copy()
        self.pt_index = np.asarray(pt_index, dtype=np.int64).copy()
        self.pixels = np.array(pixels, dtype=float, copy=True)
        if self.camera_params.ndim != 2 or self.camera_params.shape[1] != CAMERA_SIZE:
            raise ValueError(f"camera_params must be (n, 9), got {self.camera_params.shape}")
        if self.points.ndim != 2 or self.points.shape[1] != POINT_SIZE:
            raise ValueError(f"points must be (m, 3), got {self.points.shape}")
        if not (len(self.cam_index) == len(self.pt_index) == len(self.pixels)):
            raise ValueError("observation arrays disagree on length")
        if loss not in ("trivial", "huber"):
            raise ValueError(f"unknown loss {loss!r}")
        self.loss = loss
        self.camera_params[:, 0:3] = rotation.canonicalize(self.camera_params[:, 0:3])
        self._validate()

    def _validate(self):
        k = self.n_observations
        if k:
            if self.cam_index.min() < 0 or self.cam_index.max() >= self.n_cameras:
                raise ValueError("camera index out of range")
            if self.pt_index.min() < 0 or self.pt_index.max() >= self.n_points:
                raise ValueError("point index out of range")
            pair = self.cam_index * self.n_points + self.pt_index
            if len(np.unique(pair)) != k:
                raise ValueError("duplicate (camera, point) observation")
        cam_counts = np.bincount(self.cam_index, minlength=self.n_cameras)
        pt_counts = np.bincount(self.pt_index, minlength=self.n_points)
        if np.any(cam_counts < 1):
            warnings.warn(
                f"{int(np.sum(cam_counts < 1))} camera(s) observe no points",
                stacklevel=3,
            )
        if np.any(pt_counts < 2):
            warnings.warn(
                f"{int(np.sum(pt_counts < 2))} point(s) observed by fewer than 2 cameras",
                stacklevel=3,
            )

    @property
    def n_cameras(self) -> int:
        return self.camera_params.shape[0]

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def n_observations(self) -> int:
        return len(self.cam_index)

    def camera(self, i: int) -> Camera:
        return Camera.from_array(self.camera_params[i])

    def observation(self, k: int) -> Observation:
        return Observation(int(self.cam_index[k]), int(self.pt_index[k]), self.pixels[k])

    def copy(self) -> "BundleProblem":
        return BundleProblem(
            self.camera_params, self.points, self.cam_index, self.pt_index,
            self.pixels, self.loss,
        )

    def with_params(self, camera_params, points) -> "BundleProblem":
        return BundleProblem(
            camera_params, points, self.cam_index, self.pt_index, self.pixels, self.loss
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, BundleProblem):
            return NotImplemented
        return (
            self.loss == other.loss
            and self.camera_params.shape == other.camera_params.shape
            and self.points.shape == other.points.shape
            and np.array_equal(self.camera_params, other.camera_params)
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.cam_index, other.cam_index)
            and np.array_equal(self.pt_index, other.pt_index)
            and np.array_equal(self.pixels, other.pixels)
        )


# -- loss ---------------------------------------------------------------


def huber(s):
    """Robust loss on the squared residual norm: s below 1, 2*sqrt(s)-1 above."""
    s = np.asarray(s, dtype=float)
    return np.where(s <= 1.0, s, 2.0 * np.sqrt(np.maximum(s, 1.0)) - 1.0)


def loss_value(s, kind: str):
    if kind == "trivial":
        return np.asarray(s, dtype=float)
    return huber(s)


def loss_weight(s, kind: str):
    """Row reweighting sqrt(rho'(s)) for iteratively reweighted least squares."""
    s = np.asarray(s, dtype=float)
    if kind == "trivial":
        return np.ones_like(s)
    return np.where(s <= 1.0, 1.0, np.maximum(s, 1.0) ** -0.25)


# -- projection ----------------------------------------------------------


def _project_arrays(cam: np.ndarray, pts: np.ndarray):
    """Project points through cameras (row-to-row); returns intermediates.

    Raises BehindCameraError listing offending rows if any point fails to sit
    strictly in front of its camera.
    """
    rot = cam[:, 0:3]
    p_cam = rotation.rotate(rot, pts) + cam[:, 3:6]
    z = p_cam[:, 2]
    bad = z >= -_MIN_DEPTH
    if np.any(bad):
        raise BehindCameraError(np.flatnonzero(bad))
    p = -p_cam[:, 0:2] / z[:, None]
    n2 = np.einsum("ni,ni->n", p, p)
    focal, k1, k2 = cam[:, 6], cam[:, 7], cam[:, 8]
    dist = 1.0 + k1 * n2 + k2 * n2 * n2
    pixel = (focal * dist)[:, None] * p
    return p_cam, p, n2, dist, pixel


def project(camera: Camera, point: np.ndarray) -> np.ndarray:
    """Pixel coordinates of a world point seen by a camera."""
    cam = camera.to_array()[None]
    pts = np.asarray(point, dtype=float).reshape(1, 3)
    return _project_arrays(cam, pts)[4][0]


def residual(camera: Camera, point: np.ndarray, pixel: np.ndarray) -> np.ndarray:
    """Reprojection residual, predicted minus measured."""
    return project(camera, point) - np.asarray(pixel, dtype=float).reshape(2)


# -- evaluation ----------------------------------------------------------


@dataclass
class JacobianBlocks:
    """Per-observation residuals and Jacobian blocks, loss-weighted.

    ``camera`` rows are d(residual)/d(camera params) (k, 2, 9), ``point`` is
    d(residual)/d(point) (k, 2, 3), both already scaled by the loss weight,
    as is ``residual``.  ``weight`` keeps the raw weights for reference.
    """

    camera: np.ndarray
    point: np.ndarray
    residual: np.ndarray
    weight: np.ndarray
    cam_index: np.ndarray
    pt_index: np.ndarray
    n_cameras: int
    n_points: int

    def gradient(self) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of half the objective: (per-camera (n,9), per-point (m,3))."""
        g_cam = np.zeros((self.n_cameras, CAMERA_SIZE))
        g_pt = np.zeros((self.n_points, POINT_SIZE))
        np.add.at(g_cam, self.cam_index, np.einsum("kij,ki->kj", self.camera, self.residual))
        np.add.at(g_pt, self.pt_index, np.einsum("kij,ki->kj", self.point, self.residual))
        return g_cam, g_pt

    def normal_diagonal(self) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal of J^T J: (per-camera (n,9), per-point (m,3))."""
        d_cam = np.zeros((self.n_cameras, CAMERA_SIZE))
        d_pt = np.zeros((self.n_points, POINT_SIZE))
        np.add.at(d_cam, self.cam_index, np.einsum("kij,kij->kj", self.camera, self.camera))
        np.add.at(d_pt, self.pt_index, np.einsum("kij,kij->kj", self.point, self.point))
        return d_cam, d_pt


def evaluate(problem: BundleProblem, camera_params=None, points=None,
             with_jacobian: bool = True):
    """Objective and (optionally) Jacobian blocks at the given parameters.

    Parameters default to the problem's own.  The objective is the sum of the
    loss applied to each observation's squared residual norm.  Behind-camera
    observations abort evaluation with BehindCameraError.
    """
    cams = problem.camera_params if camera_params is None else np.asarray(camera_params, float)
    pts = problem.points if points is None else np.asarray(points, float)
    cam = cams[problem.cam_index]
    X = pts[problem.pt_index]
    p_cam, p, n2, dist, pixel = _project_arrays(cam, X)
    res = pixel - problem.pixels
    s = np.einsum("ki,ki->k", res, res)
    objective = float(np.sum(loss_value(s, problem.loss)))
    if not with_jacobian:
        return objective, None

    k = problem.n_observations
    focal, k1, k2 = cam[:, 6], cam[:, 7], cam[:, 8]
    z = p_cam[:, 2]
    # d(p)/d(p_cam): 2x3 from the perspective division with sign flip.
    dp_dpc = np.zeros((k, 2, 3))
    dp_dpc[:, 0, 0] = -1.0 / z
    dp_dpc[:, 1, 1] = -1.0 / z
    dp_dpc[:, 0, 2] = p_cam[:, 0] / z**2
    dp_dpc[:, 1, 2] = p_cam[:, 1] / z**2
    # d(pixel)/d(p): focal * (dist * I + (2 k1 + 4 k2 n2) * p p^T)
    coef = focal * (2.0 * k1 + 4.0 * k2 * n2)
    dpix_dp = (focal * dist)[:, None, None] * np.eye(2) + coef[:, None, None] * (
        p[:, :, None] * p[:, None, :]
    )
    dpix_dpc = dpix_dp @ dp_dpc

    F = np.zeros((k, 2, CAMERA_SIZE))
    F[:, :, 0:3] = dpix_dpc @ rotation.rotate_jacobian(cam[:, 0:3], X)
    F[:, :, 3:6] = dpix_dpc
    F[:, :, 6] = dist[:, None] * p
    F[:, :, 7] = (focal * n2)[:, None] * p
    F[:, :, 8] = (focal * n2 * n2)[:, None] * p
    E = dpix_dpc @ rotation.matrix(cam[:, 0:3])

    w = loss_weight(s, problem.loss)
    jac = JacobianBlocks(
        camera=F * w[:, None, None],
        point=E * w[:, None, None],
        residual=res * w[:, None],
        weight=w,
        cam_index=problem.cam_index,
        pt_index=problem.pt_index,
        n_cameras=problem.n_cameras,
        n_points=problem.n_points,
    )
    return objective, jac


# -- gauge modes ----------------------------------------------------------


def gauge_nullspace(problem: BundleProblem, camera_params=None) -> DenseTall:
    """Camera-space near-nullspace basis, (9 * n_cameras) x 16.

    Columns 0-2: world translations along the axes; 3-5: world rotations
    about the axes; 6: global scaling; 7-15: one constant column per camera
    parameter slot.  The first seven are the instantaneous camera-parameter
    velocities under the corresponding similarity motion of the world.
    """
    cams = problem.camera_params if camera_params is None else np.asarray(camera_params, float)
    n = cams.shape[0]
    rot = cams[:, 0:3]
    t = cams[:, 3:6]
    R = rotation.matrix(rot)
    Jinv = rotation.right_jacobian_inverse(rot)
    K = np.zeros((n, CAMERA_SIZE, 16))
    K[:, 3:6, 0:3] = -R          # world shift s: translation moves by -R s
    K[:, 0:3, 3:5 + 1] = -Jinv   # world spin w: angle-axis moves by -Jr^-1 w
    K[:, 3:6, 6] = t             # scaling: translation scales with the world
    for k in range(CAMERA_SIZE):
        K[:, k, 7 + k] = 1.0
    return DenseTall(K.reshape(n * CAMERA_SIZE, 16))


def gauge_point_motion(problem: BundleProblem, points=None) -> np.ndarray:
    """Point-space motion matching the 7 gauge columns, (3 * n_points) x 7.

    Pairing column j of this with column j of gauge_nullspace gives a full
    parameter-space direction along which residuals are stationary.
    """
    X = problem.points if points is None else np.asarray(points, float)
    m = X.shape[0]
    P = np.zeros((m, POINT_SIZE, 7))
    for j in range(3):
        P[:, j, j] = 1.0
        e = np.zeros(3)
        e[j] = 1.0
        P[:, :, 3 + j] = np.cross(e, X)
    P[:, :, 6] = X
    return P.reshape(m * POINT_SIZE, 7)
