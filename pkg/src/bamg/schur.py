"""Damped normal equations and the reduced camera (Schur complement) system.

The normal equations split into per-camera blocks A, per-point blocks C, and
the camera-point coupling W.  Eliminating the points leaves
``S = A - W C^-1 W^T`` acting on camera updates only.  S can serve conjugate
gradients either implicitly (three sparse products per application) or as an
assembled block matrix; :func:`choose_mode` picks whichever costs fewer flops
per matvec.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .blockmat import BlockDiagMatrix, BlockSparseMatrix, multiply
from .problem import CAMERA_SIZE, POINT_SIZE, JacobianBlocks

_DIAG_MIN = 1e-6
_DIAG_MAX = 1e32


@dataclass
class Damping:
    """Additive diagonal for the normal equations, scaled by the trust radius.

    Entries are the clamped diagonal of J^T J divided by the radius, so the
    step interpolates between Gauss-Newton (huge radius) and scaled gradient
    descent (tiny radius).
    """

    radius: float
    cam_diag: np.ndarray  # (n_cameras, 9)
    pt_diag: np.ndarray   # (n_points, 3)

    @staticmethod
    def from_jacobian(jac: JacobianBlocks, radius: float) -> "Damping":
        if not radius > 0:
            raise ValueError(f"trust radius must be positive, got {radius}")
        d_cam, d_pt = jac.normal_diagonal()
        return Damping(
            radius,
            np.clip(d_cam, _DIAG_MIN, _DIAG_MAX) / radius,
            np.clip(d_pt, _DIAG_MIN, _DIAG_MAX) / radius,
        )

    @staticmethod
    def zero(n_cameras: int, n_points: int) -> "Damping":
        return Damping(
            np.inf,
            np.zeros((n_cameras, CAMERA_SIZE)),
            np.zeros((n_points, POINT_SIZE)),
        )


@dataclass
class SchurSystem:
    """Block factors of the damped normal equations after point elimination.

    ``rhs_cam`` is the reduced right-hand side; ``grad_pt`` keeps the
    point-space portion of the full right-hand side for back-substitution.
    ``S_explicit`` is assembled on demand; ``mode`` says which representation
    serves matvecs.
    """

    A: BlockDiagMatrix
    C: BlockDiagMatrix
    W: BlockSparseMatrix
    rhs_cam: np.ndarray
    grad_pt: np.ndarray
    mode: str = "implicit"
    S_explicit: BlockSparseMatrix | None = field(default=None, repr=False)

    @property
    def n_cameras(self) -> int:
        return self.A.n_blocks

    @property
    def n_points(self) -> int:
        return self.C.n_blocks

    def implicit_matvec(self, x: np.ndarray) -> np.ndarray:
        """S x without materializing S: A x - W (C^-1 (W^T x))."""
        return self.A.matvec(x) - self.W.matvec(self.C.solve(self.W.rmatvec(x)))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        if self.mode == "explicit":
            return self.ensure_explicit().matvec(x)
        return self.implicit_matvec(x)

    def ensure_explicit(self) -> BlockSparseMatrix:
        if self.S_explicit is None:
            self.S_explicit = schur_explicit(self)
        return self.S_explicit


def build_system(jac: JacobianBlocks, damping: Damping) -> SchurSystem:
    """Assemble A, C, W and the reduced right-hand side from Jacobian blocks."""
    nc, npt = jac.n_cameras, jac.n_points
    F, E = jac.camera, jac.point

    a_blocks = np.zeros((nc, CAMERA_SIZE, CAMERA_SIZE))
    np.add.at(a_blocks, jac.cam_index, np.einsum("kij,kil->kjl", F, F))
    ii = np.arange(CAMERA_SIZE)
    a_blocks[:, ii, ii] += damping.cam_diag

    c_blocks = np.zeros((npt, POINT_SIZE, POINT_SIZE))
    np.add.at(c_blocks, jac.pt_index, np.einsum("kij,kil->kjl", E, E))
    jj = np.arange(POINT_SIZE)
    c_blocks[:, jj, jj] += damping.pt_diag

    W = BlockSparseMatrix.from_triplets(
        nc, npt, jac.cam_index, jac.pt_index, np.einsum("kij,kil->kjl", F, E)
    )

    g_cam, g_pt = jac.gradient()
    b_cam = -g_cam.ravel()
    b_pt = -g_pt.ravel()
    C = BlockDiagMatrix(c_blocks).factor()
    rhs_cam = b_cam - W.matvec(C.solve(b_pt))
    return SchurSystem(
        A=BlockDiagMatrix(a_blocks), C=C, W=W, rhs_cam=rhs_cam, grad_pt=b_pt
    )


def schur_explicit(sys: SchurSystem) -> BlockSparseMatrix:
    """Assemble S = A - W C^-1 W^T as a 9x9-blocked sparse matrix.

    Stored blocks are exactly the camera pairs that co-observe at least one
    point (the diagonal included); within each block row columns are sorted.
    """
    Y = sys.W.scale_block_columns(sys.C.inverse_blocks())
    off = multiply(Y, sys.W.transpose())
    s_csr = sys.A.to_block_sparse().to_bsr().tocsr() - off.to_bsr().tocsr()
    # The two-stage product is symmetric only in exact arithmetic; cancellation
    # against ill-conditioned point blocks leaves noise that downstream
    # Cholesky factorizations would read one-sidedly.
    s_csr = (s_csr + s_csr.T).tocsr()
    s_csr.data *= 0.5
    return BlockSparseMatrix.from_scipy_bsr(
        s_csr.tobsr(blocksize=(CAMERA_SIZE, CAMERA_SIZE))
    )


def covisibility_block_count(sys: SchurSystem) -> int:
    """Number of camera-pair blocks S would store (diagonal included)."""
    if sys.S_explicit is not None:
        return sys.S_explicit.n_block_entries
    pattern = sp.csr_matrix(
        (
            np.ones(sys.W.n_block_entries, dtype=np.int8),
            sys.W.indices,
            sys.W.indptr,
        ),
        shape=(sys.n_cameras, sys.n_points),
    )
    return int((pattern @ pattern.T).nnz)


def choose_mode(sys: SchurSystem) -> str:
    """Pick the cheaper matvec route by stored-entry flop count; ties explicit."""
    explicit_cost = 2 * covisibility_block_count(sys) * CAMERA_SIZE**2
    implicit_cost = 2 * (
        sys.A.nnz_scalar() + 2 * sys.W.nnz_scalar() + sys.C.nnz_scalar()
    )
    return "explicit" if explicit_cost <= implicit_cost else "implicit"


def back_substitute(sys: SchurSystem, delta_cam: np.ndarray) -> np.ndarray:
    """Recover the point update from a camera update: C^-1 (grad_pt - W^T dc)."""
    return sys.C.solve(sys.grad_pt - sys.W.rmatvec(delta_cam))


def model_decrease(sys: SchurSystem, delta_cam: np.ndarray) -> float:
    """Predicted decrease of the half-objective quadratic model, reduced form.

    With the point update eliminated exactly, the full-space model value
    collapses to a camera-space quadratic plus a constant from the point
    gradient; no full-space vectors are formed.
    """
    s_dc = sys.matvec(delta_cam)
    return float(
        sys.rhs_cam @ delta_cam
        - 0.5 * delta_cam @ s_dc
        + 0.5 * sys.grad_pt @ sys.C.solve(sys.grad_pt)
    )
