"""Block-Jacobi preconditioners for the reduced camera system.

Point block Jacobi inverts the true 9x9 diagonal blocks of S.  Visibility
block Jacobi inverts larger principal submatrices of S, one per cluster of
covisible cameras, with clusters found by the same greedy aggregation the
multigrid hierarchy uses (just a larger size cap).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .blockmat import BlockDiagMatrix, IndefiniteBlockError
from .multigrid import Aggregation, StrengthMatrix, aggregate
from .problem import CAMERA_SIZE
from .schur import SchurSystem

DEFAULT_CLUSTER_CAP = 100


def _schur_diagonal_blocks(sys: SchurSystem) -> np.ndarray:
    """Diagonal 9x9 blocks of S accumulated point by point, S never formed."""
    diag = sys.A.blocks.copy()
    cinv = sys.C.inverse_blocks()
    w_rows = sys.W.block_rows_expanded()
    y = np.einsum("nij,njk->nik", sys.W.blocks, cinv[sys.W.indices])
    np.add.at(diag, w_rows, -np.einsum("nij,nkj->nik", y, sys.W.blocks))
    return diag


@dataclass
class PointBlockJacobi:
    blocks: BlockDiagMatrix

    def apply(self, r: np.ndarray) -> np.ndarray:
        return self.blocks.solve(r)


def pbj_setup(sys: SchurSystem) -> PointBlockJacobi:
    """Factor the true diagonal blocks of S.

    Blocks are copied from the assembled S when present, otherwise
    accumulated from the elimination factors; either way they equal the
    diagonal of the explicit Schur complement.
    """
    if sys.S_explicit is not None:
        blocks = sys.S_explicit.diagonal_blocks().copy()
    else:
        blocks = _schur_diagonal_blocks(sys)
    try:
        return PointBlockJacobi(BlockDiagMatrix(blocks).factor())
    except IndefiniteBlockError as e:
        raise IndefiniteBlockError(e.block_index, "insufficient damping") from None


def visibility_cluster(strength: StrengthMatrix, max_cluster: int = DEFAULT_CLUSTER_CAP
                       ) -> Aggregation:
    """Cluster cameras by visibility strength, capped at ``max_cluster``."""
    return aggregate(strength, max_size=max_cluster)


@dataclass
class VisibilityJacobi:
    """Per-cluster dense Cholesky factors of principal submatrices of S."""

    clusters: Aggregation
    members: list[np.ndarray]
    factors: list[object]

    def apply(self, r: np.ndarray) -> np.ndarray:
        out = np.empty_like(r)
        rb = r.reshape(-1, CAMERA_SIZE)
        ob = out.reshape(-1, CAMERA_SIZE)
        for members, factor in zip(self.members, self.factors):
            local = rb[members].ravel()
            ob[members] = scipy.linalg.cho_solve(factor, local).reshape(-1, CAMERA_SIZE)
        return out


def vj_setup(sys: SchurSystem, clusters: Aggregation) -> VisibilityJacobi:
    """Assemble and factor each cluster's principal submatrix of S.

    Blocks come from the assembled S when present; otherwise each submatrix
    is accumulated from A, W, and C restricted to the cluster (only point
    contributions joining two cameras of the same cluster matter).
    """
    if len(clusters.assignment) != sys.n_cameras:
        raise ValueError(
            f"partition covers {len(clusters.assignment)} cameras, "
            f"system has {sys.n_cameras}"
        )
    member_list = clusters.members()
    factors = []
    for cid, members in enumerate(member_list):
        m = len(members)
        local = np.zeros((m * CAMERA_SIZE, m * CAMERA_SIZE))
        pos = {int(c): k for k, c in enumerate(members)}
        if sys.S_explicit is not None:
            s = sys.S_explicit
            for k, cam in enumerate(members):
                lo, hi = s.indptr[cam], s.indptr[cam + 1]
                for slot in range(lo, hi):
                    other = pos.get(int(s.indices[slot]))
                    if other is not None:
                        local[
                            k * CAMERA_SIZE:(k + 1) * CAMERA_SIZE,
                            other * CAMERA_SIZE:(other + 1) * CAMERA_SIZE,
                        ] = s.blocks[slot]
        else:
            for k, cam in enumerate(members):
                local[
                    k * CAMERA_SIZE:(k + 1) * CAMERA_SIZE,
                    k * CAMERA_SIZE:(k + 1) * CAMERA_SIZE,
                ] = sys.A.blocks[cam]
            cinv = sys.C.inverse_blocks()
            w = sys.W
            w_rows = w.block_rows_expanded()
            in_cluster = clusters.assignment[w_rows] == cid
            pts = np.unique(w.indices[in_cluster])
            wt = w.transpose()
            for pt in pts:
                lo, hi = wt.indptr[pt], wt.indptr[pt + 1]
                cams = wt.indices[lo:hi]
                keep = clusters.assignment[cams] == cid
                cams = cams[keep]
                wk = wt.blocks[lo:hi][keep].transpose(0, 2, 1)  # back to 9x3
                y = wk @ cinv[pt]
                contrib = np.einsum("aij,bkj->aibk", y, wk)
                idx = np.array([pos[int(c)] for c in cams])
                for a, ia in enumerate(idx):
                    for bpos, ib in enumerate(idx):
                        local[
                            ia * CAMERA_SIZE:(ia + 1) * CAMERA_SIZE,
                            ib * CAMERA_SIZE:(ib + 1) * CAMERA_SIZE,
                        ] -= contrib[a, :, bpos, :]
        try:
            factors.append(scipy.linalg.cho_factor(local))
        except scipy.linalg.LinAlgError:
            raise IndefiniteBlockError(cid, "visibility cluster not positive definite") \
                from None
    return VisibilityJacobi(clusters, member_list, factors)
