"""Procedural street-grid dataset generator.

Builds a rectangular city of box buildings separated by streets, drives
cameras along the street centerlines, scatters points over the ground and
building faces, computes occlusion-tested visibility with exact pixel
measurements (so the generated parameters reproduce every measurement with
zero error), and finally injects structured noise: long-range drift that
grows with distance from the origin plus a sinusoidal component, with small
rotational jitter.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from . import rotation
from .problem import (
    BehindCameraError,
    BundleProblem,
    Camera,
    Observation,
    _project_arrays,
    evaluate,
)

_UP = np.array([0.0, 0.0, 1.0])
# Fraction of the camera->point segment excluded at the point end so the
# point's own supporting face does not occlude it.
_FACE_OFFSET = 1e-6


@dataclass
class Box:
    """Axis-aligned building box; ``lo``/``hi`` are opposite corners."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float).reshape(3)
        self.hi = np.asarray(self.hi, dtype=float).reshape(3)
        if not np.all(self.hi > self.lo):
            raise ValueError("box corners must satisfy hi > lo componentwise")


@dataclass
class CityModel:
    """Grid city: blocks of size ``block_size`` separated by streets.

    Street centerlines sit on the grid lines x = i * pitch, y = j * pitch
    (pitch = block_size + street_width); each block carries one building
    filling its footprint with a seeded random height.
    """

    n_blocks_x: int
    n_blocks_y: int
    block_size: float
    street_width: float
    buildings: list[Box]
    seed: int

    @property
    def pitch(self) -> float:
        return self.block_size + self.street_width

    @property
    def extent(self) -> tuple[float, float]:
        """Centerline grid span (distance between outermost intersections)."""
        return self.n_blocks_x * self.pitch, self.n_blocks_y * self.pitch

    @property
    def n_intersections(self) -> int:
        return (self.n_blocks_x + 1) * (self.n_blocks_y + 1)

    def street_segments(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Centerline segments at z=0: all vertical streets, then horizontal."""
        lx, ly = self.extent
        segs = []
        for i in range(self.n_blocks_x + 1):
            x = i * self.pitch
            segs.append((np.array([x, 0.0, 0.0]), np.array([x, ly, 0.0])))
        for j in range(self.n_blocks_y + 1):
            y = j * self.pitch
            segs.append((np.array([0.0, y, 0.0]), np.array([lx, y, 0.0])))
        return segs


def generate_city(
    n_blocks_x: int,
    n_blocks_y: int,
    *,
    block_size: float = 100.0,
    street_width: float = 15.0,
    height_range: tuple[float, float] = (6.0, 25.0),
    seed: int = 0,
) -> CityModel:
    """Deterministic grid city with one building per block."""
    if n_blocks_x < 1 or n_blocks_y < 1:
        raise ValueError("city needs at least one block per side")
    if block_size <= 0 or street_width <= 0:
        raise ValueError("block_size and street_width must be positive")
    if not 0 < height_range[0] <= height_range[1]:
        raise ValueError(f"bad height range {height_range}")
    rng = np.random.default_rng(seed)
    pitch = block_size + street_width
    half = street_width / 2.0
    heights = rng.uniform(height_range[0], height_range[1], n_blocks_x * n_blocks_y)
    buildings = []
    for i in range(n_blocks_x):
        for j in range(n_blocks_y):
            lo = np.array([i * pitch + half, j * pitch + half, 0.0])
            hi = np.array(
                [(i + 1) * pitch - half, (j + 1) * pitch - half,
                 heights[i * n_blocks_y + j]]
            )
            buildings.append(Box(lo, hi))
    return CityModel(n_blocks_x, n_blocks_y, block_size, street_width, buildings, seed)


def sample_cameras(
    city: CityModel,
    spacing: float,
    height: float = 1.8,
    *,
    focal: float = 800.0,
    k1: float = -0.1,
    k2: float = 0.01,
    jitter: float = 0.25,
    seed: int | None = None,
) -> list[Camera]:
    """Cameras along every street centerline, looking along the street.

    A street of length L gets floor(L / spacing) + 1 cameras at nominal arc
    lengths 0, spacing, 2*spacing, ...; each is jittered along the street (by
    up to ``jitter * spacing``, clamped to the street) and sideways (by up to
    ``jitter * street_width``), all at the given height above ground.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if not 0 <= jitter < 0.5:
        raise ValueError("jitter must lie in [0, 0.5)")
    rng = np.random.default_rng(city.seed + 1 if seed is None else seed)
    cameras = []
    for start, end in city.street_segments():
        length = float(np.linalg.norm(end - start))
        tangent = (end - start) / length
        normal = np.array([-tangent[1], tangent[0], 0.0])
        count = int(np.floor(length / spacing)) + 1
        along = np.arange(count) * spacing
        along = np.clip(along + rng.uniform(-jitter, jitter, count) * spacing, 0.0, length)
        lateral = rng.uniform(-jitter, jitter, count) * city.street_width
        # Camera frame: looks along the tangent, which is the -z axis of the
        # camera; y is world up.
        z_c = -tangent
        x_c = np.cross(_UP, z_c)
        R = np.stack([x_c, _UP, z_c])
        rotvec = Rotation.from_matrix(R).as_rotvec()
        for k in range(count):
            center = start + along[k] * tangent + lateral[k] * normal
            center = center + np.array([0.0, 0.0, height])
            cameras.append(Camera(rotvec, -R @ center, focal, k1, k2))
    return cameras


def sample_points(city: CityModel, n_points: int, seed: int) -> np.ndarray:
    """Points uniform by area over the street ground, walls, and roofs."""
    if n_points < 1:
        raise ValueError("n_points must be positive")
    origins, us, vs = [], [], []

    def rect(origin, u, v):
        origins.append(origin)
        us.append(u)
        vs.append(v)

    half = city.street_width / 2.0
    lx, ly = city.extent
    # Street ground: full-length vertical strips plus the horizontal leftovers
    # between them; together they tile the ground not covered by buildings.
    for i in range(city.n_blocks_x + 1):
        x = i * city.pitch
        rect([x - half, -half, 0.0], [city.street_width, 0, 0], [0, ly + 2 * half, 0])
    for j in range(city.n_blocks_y + 1):
        y = j * city.pitch
        for i in range(city.n_blocks_x):
            rect([i * city.pitch + half, y - half, 0.0],
                 [city.block_size, 0, 0], [0, city.street_width, 0])
    for b in city.buildings:
        w = b.hi - b.lo
        rect([b.lo[0], b.lo[1], b.hi[2]], [w[0], 0, 0], [0, w[1], 0])  # roof
        rect(b.lo, [w[0], 0, 0], [0, 0, w[2]])                         # y = lo
        rect([b.lo[0], b.hi[1], 0.0], [w[0], 0, 0], [0, 0, w[2]])      # y = hi
        rect(b.lo, [0, w[1], 0], [0, 0, w[2]])                         # x = lo
        rect([b.hi[0], b.lo[1], 0.0], [0, w[1], 0], [0, 0, w[2]])      # x = hi

    origins = np.asarray(origins, dtype=float)
    us = np.asarray(us, dtype=float)
    vs = np.asarray(vs, dtype=float)
    areas = np.linalg.norm(us, axis=1) * np.linalg.norm(vs, axis=1)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(areas), size=n_points, p=areas / areas.sum())
    a = rng.random(n_points)
    b = rng.random(n_points)
    return origins[idx] + a[:, None] * us[idx] + b[:, None] * vs[idx]


# -- visibility ---------------------------------------------------------------


def _boxes_arrays(city: CityModel) -> tuple[np.ndarray, np.ndarray]:
    if not city.buildings:
        z = np.zeros((0, 3))
        return z, z
    lo = np.stack([b.lo for b in city.buildings])
    hi = np.stack([b.hi for b in city.buildings])
    return lo, hi


def _segments_blocked(lo, hi, p0, pts) -> np.ndarray:
    """Whether each segment p0 -> pts[i] hits any box strictly before its end.

    Slab test per box; the final ``_FACE_OFFSET`` fraction of the segment is
    excluded so a point lying on a box face is not occluded by that face.
    """
    if len(lo) == 0:
        return np.zeros(len(pts), dtype=bool)
    d = pts - p0
    d = np.where(d == 0.0, 1e-300, d)
    inv = 1.0 / d
    t1 = (lo[None, :, :] - p0) * inv[:, None, :]
    t2 = (hi[None, :, :] - p0) * inv[:, None, :]
    enter = np.minimum(t1, t2).max(axis=2)
    exit_ = np.maximum(t1, t2).min(axis=2)
    hit = (enter <= exit_) & (enter < 1.0 - _FACE_OFFSET) & (exit_ > 0.0)
    return hit.any(axis=1)


def point_visible(
    city: CityModel,
    camera: Camera,
    point: np.ndarray,
    fov_degrees: float,
    max_range: float,
) -> bool:
    """Single camera/point visibility: range, view cone, and occlusion."""
    point = np.asarray(point, dtype=float).reshape(3)
    center = camera.center()
    look = -rotation.matrix(camera.rotation[None])[0][2]
    d = point - center
    dist = float(np.linalg.norm(d))
    if dist <= 1e-6 or dist > max_range:
        return False
    if d @ look < dist * np.cos(np.radians(fov_degrees) / 2.0):
        return False
    lo, hi = _boxes_arrays(city)
    return not bool(_segments_blocked(lo, hi, center, point[None])[0])


@dataclass
class VisibilityResult:
    """Observations over the surviving cameras and points.

    Cameras that see nothing and points seen by fewer than two cameras are
    dropped; ``kept_cameras`` / ``kept_points`` give the surviving input
    indices, and the observation index arrays refer to the compacted lists.
    """

    cameras: list[Camera]
    points: np.ndarray
    cam_index: np.ndarray
    pt_index: np.ndarray
    pixels: np.ndarray
    kept_cameras: np.ndarray
    kept_points: np.ndarray
    n_dropped_cameras: int = 0
    n_dropped_points: int = 0

    @property
    def observations(self) -> list[Observation]:
        return [
            Observation(int(c), int(p), px)
            for c, p, px in zip(self.cam_index, self.pt_index, self.pixels)
        ]


def compute_visibility(
    city: CityModel,
    cameras: list[Camera],
    points: np.ndarray,
    fov_degrees: float,
    max_range: float,
) -> VisibilityResult:
    """Occlusion-tested observations with exact projected pixels.

    An observation exists when the point is within range, inside the view
    cone, and the camera-to-point segment clears every building.  Pixels are
    exact projections of the input parameters, so a problem assembled from
    this result has objective zero at those parameters.
    """
    points = np.asarray(points, dtype=float)
    cam_arr = np.stack([c.to_array() for c in cameras])
    centers = np.stack([c.center() for c in cameras])
    looks = -rotation.matrix(cam_arr[:, 0:3])[:, 2, :]
    cos_half = np.cos(np.radians(fov_degrees) / 2.0)
    lo, hi = _boxes_arrays(city)

    cam_idx_parts, pt_idx_parts, pixel_parts = [], [], []
    for i in range(len(cameras)):
        d = points - centers[i]
        dist = np.linalg.norm(d, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            in_cone = (d @ looks[i]) >= dist * cos_half
        cand = np.flatnonzero((dist > 1e-6) & (dist <= max_range) & in_cone)
        if len(cand) == 0:
            continue
        blocked = _segments_blocked(lo, hi, centers[i], points[cand])
        vis = cand[~blocked]
        if len(vis) == 0:
            continue
        pix = _project_arrays(
            np.broadcast_to(cam_arr[i], (len(vis), cam_arr.shape[1])), points[vis]
        )[4]
        cam_idx_parts.append(np.full(len(vis), i, dtype=np.int64))
        pt_idx_parts.append(vis.astype(np.int64))
        pixel_parts.append(pix)

    if cam_idx_parts:
        cam_idx = np.concatenate(cam_idx_parts)
        pt_idx = np.concatenate(pt_idx_parts)
        pixels = np.concatenate(pixel_parts)
    else:
        cam_idx = np.zeros(0, dtype=np.int64)
        pt_idx = np.zeros(0, dtype=np.int64)
        pixels = np.zeros((0, 2))

    # Drop underconstrained entities until stable: points need two cameras,
    # cameras need at least one observation.
    keep_cam = np.zeros(len(cameras), dtype=bool)
    keep_pt = np.zeros(len(points), dtype=bool)
    obs_keep = np.ones(len(cam_idx), dtype=bool)
    while True:
        cam_counts = np.bincount(cam_idx[obs_keep], minlength=len(cameras))
        pt_counts = np.bincount(pt_idx[obs_keep], minlength=len(points))
        new_keep_cam = cam_counts >= 1
        new_keep_pt = pt_counts >= 2
        new_obs_keep = new_keep_cam[cam_idx] & new_keep_pt[pt_idx]
        if np.array_equal(new_obs_keep, obs_keep):
            keep_cam, keep_pt, obs_keep = new_keep_cam, new_keep_pt, new_obs_keep
            break
        obs_keep = new_obs_keep

    n_drop_cam = int(np.sum(~keep_cam))
    n_drop_pt = int(np.sum(~keep_pt))
    if n_drop_cam:
        warnings.warn(f"dropped {n_drop_cam} camera(s) with no visible points",
                      stacklevel=2)
    cam_map = np.cumsum(keep_cam) - 1
    pt_map = np.cumsum(keep_pt) - 1
    kept_cameras = np.flatnonzero(keep_cam)
    kept_points = np.flatnonzero(keep_pt)
    return VisibilityResult(
        cameras=[cameras[i] for i in kept_cameras],
        points=points[kept_points],
        cam_index=cam_map[cam_idx[obs_keep]],
        pt_index=pt_map[pt_idx[obs_keep]],
        pixels=pixels[obs_keep],
        kept_cameras=kept_cameras,
        kept_points=kept_points,
        n_dropped_cameras=n_drop_cam,
        n_dropped_points=n_drop_pt,
    )


# -- noise --------------------------------------------------------------------


@dataclass
class NoiseSpec:
    """Structured perturbation: distance-proportional drift plus a sinusoid.

    Both terms displace along ``drift_direction``; the sinusoid's phase varies
    with the world x coordinate.  Rotations get isotropic Gaussian angle-axis
    noise, measurements optionally get Gaussian pixel noise.
    """

    drift_rate: float = 1e-3
    drift_direction: np.ndarray = field(
        default_factory=lambda: np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
    )
    sin_amplitude: float = 0.0
    sin_wavelength: float = 1.0
    rotation_sigma: float = 0.01
    pixel_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.drift_direction = np.asarray(self.drift_direction, dtype=float).reshape(3)
        if abs(np.linalg.norm(self.drift_direction) - 1.0) > 1e-9:
            raise ValueError("drift_direction must be a unit vector")
        for name in ("drift_rate", "sin_amplitude", "sin_wavelength",
                     "rotation_sigma", "pixel_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.sin_wavelength == 0:
            raise ValueError("sin_wavelength must be positive")


@dataclass
class GroundTruth:
    """Exact parameters a generated problem was measured from."""

    camera_params: np.ndarray
    points: np.ndarray

    @staticmethod
    def from_problem(problem: BundleProblem) -> "GroundTruth":
        return GroundTruth(problem.camera_params.copy(), problem.points.copy())


def _offsets(pos: np.ndarray, noise: NoiseSpec) -> np.ndarray:
    mag = noise.drift_rate * np.linalg.norm(pos, axis=1)
    mag = mag + noise.sin_amplitude * np.sin(
        2.0 * np.pi * pos[:, 0] / noise.sin_wavelength
    )
    return mag[:, None] * noise.drift_direction


def perturb(
    problem: BundleProblem, ground_truth: GroundTruth, noise: NoiseSpec
) -> BundleProblem:
    """Noisy copy of a zero-error problem.

    Camera centers and points move by the drift-plus-sinusoid offset field;
    rotations compose with Gaussian angle-axis noise on the left.  Any
    observation the noise pushes behind its camera is removed (with a warning
    reporting the count); measurements are otherwise kept.
    """
    if not (
        np.array_equal(problem.camera_params, ground_truth.camera_params)
        and np.array_equal(problem.points, ground_truth.points)
    ):
        raise ValueError("perturb expects the problem at its exact ground truth")
    rng = np.random.default_rng(noise.seed)

    rot = problem.camera_params[:, 0:3]
    R = rotation.matrix(rot)
    centers = -np.einsum("nji,nj->ni", R, problem.camera_params[:, 3:6])
    off = _offsets(centers, noise)
    centers = centers + off
    rotated = noise.rotation_sigma > 0
    if rotated:
        xi = rng.normal(0.0, noise.rotation_sigma, rot.shape)
        rot = rotation.compose(xi, rot)
        R = rotation.matrix(rot)
    cams = problem.camera_params.copy()
    cams[:, 0:3] = rot
    # recomputing t = -R c is only bit-exact for cameras that actually changed
    changed = np.any(off != 0.0, axis=1) | rotated
    cams[changed, 3:6] = -np.einsum("nij,nj->ni", R[changed], centers[changed])

    pt_off = _offsets(problem.points, noise)
    pts = problem.points + pt_off if np.any(pt_off != 0.0) else problem.points
    pixels = problem.pixels
    if noise.pixel_sigma > 0:
        pixels = pixels + rng.normal(0.0, noise.pixel_sigma, pixels.shape)

    cam_idx, pt_idx = problem.cam_index, problem.pt_index
    removed = 0
    while True:
        candidate = BundleProblem(cams, pts, cam_idx, pt_idx, pixels, problem.loss)
        try:
            evaluate(candidate, with_jacobian=False)
            break
        except BehindCameraError as err:
            bad = err.observation_indices
            keep = np.ones(len(cam_idx), dtype=bool)
            keep[bad] = False
            removed += len(bad)
            cam_idx, pt_idx, pixels = cam_idx[keep], pt_idx[keep], pixels[keep]
    if removed:
        warnings.warn(
            f"noise moved {removed} observation(s) behind a camera; removed",
            stacklevel=2,
        )
    return candidate


# -- end-to-end ---------------------------------------------------------------


def default_noise(city: CityModel, seed: int) -> NoiseSpec:
    """Benchmark noise: long-wavelength sinusoid spanning several blocks."""
    return NoiseSpec(
        drift_rate=1e-3,
        sin_amplitude=0.5 * city.street_width,
        sin_wavelength=4.0 * city.pitch,
        rotation_sigma=0.01,
        seed=seed,
    )


def generate_problem(
    n_blocks_x: int,
    n_blocks_y: int | None = None,
    *,
    block_size: float = 100.0,
    street_width: float = 15.0,
    height_range: tuple[float, float] = (6.0, 25.0),
    spacing: float = 15.0,
    camera_height: float = 1.8,
    focal: float = 800.0,
    k1: float = -0.1,
    k2: float = 0.01,
    points_per_block: int = 300,
    n_points: int | None = None,
    fov_degrees: float = 75.0,
    max_range: float = 150.0,
    noise: NoiseSpec | None = None,
    loss: str = "trivial",
    seed: int = 0,
) -> tuple[BundleProblem, BundleProblem]:
    """Full pipeline; returns (noisy problem, exact ground-truth problem).

    Seeds for the stages derive from ``seed`` (city, cameras, points, noise
    use seed, seed+1, seed+2, seed+3).  ``noise=None`` selects the benchmark
    default from ``default_noise``.
    """
    if n_blocks_y is None:
        n_blocks_y = n_blocks_x
    city = generate_city(
        n_blocks_x, n_blocks_y,
        block_size=block_size, street_width=street_width,
        height_range=height_range, seed=seed,
    )
    cameras = sample_cameras(
        city, spacing, camera_height,
        focal=focal, k1=k1, k2=k2, seed=seed + 1,
    )
    if n_points is None:
        n_points = points_per_block * n_blocks_x * n_blocks_y
    points = sample_points(city, n_points, seed + 2)
    vis = compute_visibility(city, cameras, points, fov_degrees, max_range)
    truth = BundleProblem(
        np.stack([c.to_array() for c in vis.cameras]),
        vis.points,
        vis.cam_index,
        vis.pt_index,
        vis.pixels,
        loss,
    )
    if noise is None:
        noise = default_noise(city, seed + 3)
    noisy = perturb(truth, GroundTruth.from_problem(truth), noise)
    return noisy, truth
