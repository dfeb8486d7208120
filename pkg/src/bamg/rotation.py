"""Angle-axis rotation kinematics.

All functions are vectorized over a leading batch axis: an ``(n, 3)`` array of
angle-axis vectors (direction = rotation axis, norm = rotation angle in
radians) alongside ``(n, 3)`` point arrays.  Small angles switch to series
expansions so every function is smooth through zero.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

# Below this angle the closed forms lose digits to cancellation; the series
# are accurate to < 1e-20 absolute there.
_SMALL_ANGLE = 1e-4


def _hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric cross-product matrices, shape (n, 3, 3)."""
    n = v.shape[0]
    h = np.zeros((n, 3, 3))
    h[:, 0, 1] = -v[:, 2]
    h[:, 0, 2] = v[:, 1]
    h[:, 1, 0] = v[:, 2]
    h[:, 1, 2] = -v[:, 0]
    h[:, 2, 0] = -v[:, 1]
    h[:, 2, 1] = v[:, 0]
    return h


def _angle(aa: np.ndarray) -> np.ndarray:
    return np.linalg.norm(aa, axis=-1)


def rotate(aa: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply the rotation encoded by angle-axis ``aa`` to ``pts``.

    Parameters
    ----------
    aa : (n, 3) array
    pts : (n, 3) array

    Returns
    -------
    (n, 3) array, ``Rot(aa[i]) @ pts[i]`` for each row.
    """
    aa = np.atleast_2d(np.asarray(aa, dtype=float))
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    a2 = np.einsum("ni,ni->n", aa, aa)
    a = np.sqrt(a2)
    small = a < _SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        s1 = np.where(small, 1.0 - a2 / 6.0, np.sin(a) / np.where(small, 1.0, a))
        s2 = np.where(small, 0.5 - a2 / 24.0, (1.0 - np.cos(a)) / np.where(small, 1.0, a2))
    c1 = np.cross(aa, pts)
    c2 = np.cross(aa, c1)
    return pts + s1[:, None] * c1 + s2[:, None] * c2


def matrix(aa: np.ndarray) -> np.ndarray:
    """Rotation matrices for angle-axis vectors, shape (n, 3, 3)."""
    aa = np.atleast_2d(np.asarray(aa, dtype=float))
    a2 = np.einsum("ni,ni->n", aa, aa)
    a = np.sqrt(a2)
    small = a < _SMALL_ANGLE
    safe = np.where(small, 1.0, a)
    s1 = np.where(small, 1.0 - a2 / 6.0, np.sin(a) / safe)
    s2 = np.where(small, 0.5 - a2 / 24.0, (1.0 - np.cos(a)) / safe**2)
    h = _hat(aa)
    return np.eye(3) + s1[:, None, None] * h + s2[:, None, None] * (h @ h)


def right_jacobian(aa: np.ndarray) -> np.ndarray:
    """Right Jacobian of the exponential map, shape (n, 3, 3).

    Satisfies ``Rot(aa + d) ~= Rot(aa) @ Rot(right_jacobian(aa) @ d)`` to
    first order in ``d``.
    """
    aa = np.atleast_2d(np.asarray(aa, dtype=float))
    a2 = np.einsum("ni,ni->n", aa, aa)
    a = np.sqrt(a2)
    small = a < _SMALL_ANGLE
    safe = np.where(small, 1.0, a)
    c1 = np.where(small, 0.5 - a2 / 24.0, (1.0 - np.cos(a)) / safe**2)
    c2 = np.where(small, 1.0 / 6.0 - a2 / 120.0, (a - np.sin(a)) / safe**3)
    h = _hat(aa)
    return np.eye(3) - c1[:, None, None] * h + c2[:, None, None] * (h @ h)


def right_jacobian_inverse(aa: np.ndarray) -> np.ndarray:
    """Inverse of :func:`right_jacobian`, shape (n, 3, 3).

    Closed form; valid for angles below 2*pi (canonical storage keeps
    angles at or below pi).
    """
    aa = np.atleast_2d(np.asarray(aa, dtype=float))
    a2 = np.einsum("ni,ni->n", aa, aa)
    a = np.sqrt(a2)
    small = a < _SMALL_ANGLE
    safe = np.where(small, 1.0, a)
    # d2 = 1/a^2 - cot(a/2)/(2a), series 1/12 + a^2/720 near zero.
    with np.errstate(invalid="ignore", divide="ignore"):
        cot_half = np.cos(safe / 2.0) / np.sin(safe / 2.0)
    d2 = np.where(small, 1.0 / 12.0 + a2 / 720.0, 1.0 / safe**2 - cot_half / (2.0 * safe))
    h = _hat(aa)
    return np.eye(3) + 0.5 * h + d2[:, None, None] * (h @ h)


def rotate_jacobian(aa: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Derivative of ``rotate(aa, pts)`` with respect to ``aa``, shape (n, 3, 3)."""
    R = matrix(aa)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    return -R @ _hat(pts) @ right_jacobian(aa)


def compose(aa_left: np.ndarray, aa_right: np.ndarray) -> np.ndarray:
    """Angle-axis of ``Rot(aa_left) @ Rot(aa_right)``, canonical (angle <= pi)."""
    left = Rotation.from_rotvec(np.atleast_2d(aa_left))
    right = Rotation.from_rotvec(np.atleast_2d(aa_right))
    return (left * right).as_rotvec()


def canonicalize(aa: np.ndarray) -> np.ndarray:
    """Rewrap angle-axis vectors so the angle does not exceed pi.

    An angle a > pi maps to the equivalent rotation with angle 2*pi - a about
    the flipped axis; the rotation itself is unchanged.
    """
    aa = np.array(np.atleast_2d(aa), dtype=float, copy=True)
    while True:
        a = _angle(aa)
        over = a > np.pi
        if not np.any(over):
            return aa
        scale = 1.0 - 2.0 * np.pi / a[over]
        aa[over] *= scale[:, None]
