"""Aggregation multigrid preconditioner for the reduced camera system.

The hierarchy groups cameras by covisibility: cameras that see the same
points are aggregated, each aggregate contributing one coarse node.  The
prolongation restricted to an aggregate is an orthonormal basis (thin QR) of
the gauge near-nullspace rows belonging to that aggregate, so coarse grids
represent exactly the slowly-varying error the smoother cannot remove.
Coarse operators are Galerkin products; the smoother is a fixed-interval
Chebyshev iteration preconditioned by the level's point-block Jacobi.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .blockmat import BlockDiagMatrix, BlockSparseMatrix, DenseTall, triple_product
from .problem import CAMERA_SIZE, BundleProblem
from .schur import SchurSystem

NULLSPACE_DIM = 16
_RANK_TOL = 1e-10
_LANCZOS_SEED = 20210607
_LANCZOS_STEPS = 5
_CHEB_UPPER = 1.1
_CHEB_LOWER = 0.3


@dataclass
class StrengthMatrix:
    """Symmetric nonnegative coupling strengths with an empty diagonal."""

    g: sp.csr_matrix

    def __post_init__(self):
        if self.g.shape[0] != self.g.shape[1]:
            raise ValueError("strength matrix must be square")

    @property
    def n(self) -> int:
        return self.g.shape[0]

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.g.indptr[i], self.g.indptr[i + 1]
        return self.g.indices[lo:hi], self.g.data[lo:hi]


def visibility_strength(problem_or_obs) -> StrengthMatrix:
    """Cosine similarity of camera visibility sets.

    Accepts a BundleProblem or a ``(cam_index, pt_index, n_cameras,
    n_points)`` tuple.  Entry (i, j) is the shared point count normalized by
    the geometric mean of the cameras' point counts; the diagonal is dropped,
    as are pairs sharing nothing.
    """
    if isinstance(problem_or_obs, BundleProblem):
        cam_index = problem_or_obs.cam_index
        pt_index = problem_or_obs.pt_index
        nc, npt = problem_or_obs.n_cameras, problem_or_obs.n_points
    else:
        cam_index, pt_index, nc, npt = problem_or_obs
    deg = np.bincount(cam_index, minlength=nc).astype(float)
    if np.any(deg == 0):
        raise ValueError(
            f"{int(np.sum(deg == 0))} camera(s) observe no points; "
            "visibility strength undefined"
        )
    incidence = sp.csr_matrix(
        (np.ones(len(cam_index)), (cam_index, pt_index)), shape=(nc, npt)
    )
    counts = (incidence @ incidence.T).tocoo()
    off = counts.row != counts.col
    row, col, shared = counts.row[off], counts.col[off], counts.data[off]
    scale = np.sqrt(deg[row] * deg[col])
    g = sp.csr_matrix((np.minimum(shared / scale, 1.0), (row, col)), shape=(nc, nc))
    return StrengthMatrix(g)


def operator_strength(op: BlockSparseMatrix) -> StrengthMatrix:
    """Block-Frobenius cosine coupling of a square block operator."""
    norms = np.sqrt(np.einsum("nij,nij->n", op.blocks, op.blocks))
    rows = op.block_rows_expanded()
    diag_norm = np.zeros(op.n_block_rows)
    on_diag = rows == op.indices
    diag_norm[rows[on_diag]] = norms[on_diag]
    if np.any(diag_norm == 0):
        raise ValueError("operator has a structurally zero diagonal block")
    off = ~on_diag
    denom = np.sqrt(diag_norm[rows[off]] * diag_norm[op.indices[off]])
    g = sp.csr_matrix(
        (np.minimum(norms[off] / denom, 1.0), (rows[off], op.indices[off])),
        shape=(op.n_block_rows, op.n_block_cols),
    )
    return StrengthMatrix(g)


@dataclass
class Aggregation:
    """Partition of fine nodes into aggregates (coarse nodes)."""

    assignment: np.ndarray
    n_aggregates: int

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if len(self.assignment) and (
            self.assignment.min() < 0 or self.assignment.max() >= self.n_aggregates
        ):
            raise ValueError("aggregate ids must cover 0..n_aggregates-1")

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_aggregates)

    def mean_size(self) -> float:
        return len(self.assignment) / self.n_aggregates

    def members(self) -> list[np.ndarray]:
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.searchsorted(self.assignment[order], np.arange(self.n_aggregates + 1))
        return [order[bounds[a]:bounds[a + 1]] for a in range(self.n_aggregates)]


def aggregate(strength: StrengthMatrix, max_size: int = 20) -> Aggregation:
    """Greedy pairwise aggregation along decreasing coupling strength.

    Scanning nodes in index order, an unaggregated node pairs with its
    strongest unaggregated neighbor, or failing that joins the strongest
    neighbor's aggregate while that aggregate is below ``max_size``.  Equal
    strengths prefer an unaggregated neighbor, then the lower index, which
    keeps the scan order deterministic.  Leftover nodes join their strongest
    neighbor's aggregate afterwards (one past ``max_size`` is allowed);
    isolated nodes become singletons.
    """
    n = strength.n
    assignment = np.full(n, -1, dtype=np.int64)
    sizes: list[int] = []

    def neighbor_order(i: int) -> np.ndarray:
        cols, vals = strength.row(i)
        if not len(cols):
            return cols
        unagg = assignment[cols] < 0
        return cols[np.lexsort((cols, ~unagg, -vals))]

    for i in range(n):
        if assignment[i] >= 0:
            continue
        for j in neighbor_order(i):
            if assignment[j] < 0:
                k = len(sizes)
                assignment[i] = assignment[j] = k
                sizes.append(2)
                break
            if sizes[assignment[j]] < max_size:
                assignment[i] = assignment[j]
                sizes[assignment[j]] += 1
                break

    for i in np.flatnonzero(assignment < 0):
        cols, vals = strength.row(i)
        joinable = [
            (v, c) for v, c in zip(vals, cols) if sizes[assignment[c]] <= max_size
        ]
        if joinable:
            best = max(joinable, key=lambda vc: (vc[0], -vc[1]))
            assignment[i] = assignment[best[1]]
            sizes[assignment[best[1]]] += 1
        else:
            assignment[i] = len(sizes)
            sizes.append(1)

    return Aggregation(assignment, len(sizes))


def build_prolongation(
    agg: Aggregation, K: DenseTall, fine_block_size: int
) -> tuple[BlockSparseMatrix, DenseTall, np.ndarray]:
    """Per-aggregate orthonormal prolongation and the coarse near-nullspace.

    Within each aggregate the stacked near-nullspace rows are QR-factored:
    the orthonormal factor becomes that aggregate's block column of P, the
    triangular factor becomes its 16-row slice of the coarse near-nullspace,
    so ``P @ K_coarse == K`` and ``P^T P == I`` hold by construction.

    Numerically rank-deficient aggregates (tolerance 1e-10 relative) keep the
    leading columns plus an orthonormal completion with zeroed coarse rows;
    aggregates with fewer fine rows than 16 pad with zero columns instead.
    Returns (P, K_coarse, padded_coarse_dofs).
    """
    bs = fine_block_size
    if K.cols != NULLSPACE_DIM:
        raise ValueError(f"near-nullspace must have {NULLSPACE_DIM} columns, got {K.cols}")
    if K.rows != len(agg.assignment) * bs:
        raise ValueError(
            f"near-nullspace has {K.rows} rows, expected {len(agg.assignment) * bs}"
        )
    n_agg = agg.n_aggregates
    k_coarse = np.zeros((n_agg * NULLSPACE_DIM, NULLSPACE_DIM))
    blocks = np.zeros((len(agg.assignment), bs, NULLSPACE_DIM))
    padded: list[int] = []

    for a, members in enumerate(agg.members()):
        rows = (members[:, None] * bs + np.arange(bs)).ravel()
        local = K.data[rows]
        keep = min(local.shape[0], NULLSPACE_DIM)
        well_conditioned = False
        if local.shape[0] >= NULLSPACE_DIM:
            q, r = scipy.linalg.qr(local, mode="economic")
            diag = np.diag(r)
            well_conditioned = np.min(np.abs(diag)) > _RANK_TOL * np.max(np.abs(diag))
        if well_conditioned:
            # Sign fix so the triangular factor has a positive diagonal.
            s = np.where(diag < 0, -1.0, 1.0)
            pblock = q * s
            k_coarse[a * NULLSPACE_DIM:(a + 1) * NULLSPACE_DIM] = r * s[:, None]
        else:
            q, r, piv = scipy.linalg.qr(local, mode="full", pivoting=True)
            diag = np.abs(np.diag(r))
            rank = int(np.sum(diag > _RANK_TOL * diag[0])) if diag.size and diag[0] > 0 else 0
            # Undo the column pivoting on the kept triangular rows.
            r_unpiv = np.zeros((NULLSPACE_DIM, NULLSPACE_DIM))
            r_unpiv[:rank, piv] = r[:rank, :]
            k_coarse[a * NULLSPACE_DIM:(a + 1) * NULLSPACE_DIM] = r_unpiv
            pblock = np.zeros((local.shape[0], NULLSPACE_DIM))
            pblock[:, :keep] = q[:, :keep]
            padded.extend(a * NULLSPACE_DIM + c for c in range(keep, NULLSPACE_DIM))
        for m, node in enumerate(members):
            blocks[node] = pblock[m * bs:(m + 1) * bs]

    P = BlockSparseMatrix.from_triplets(
        len(agg.assignment), n_agg, np.arange(len(agg.assignment)), agg.assignment, blocks
    )
    return P, DenseTall(k_coarse), np.asarray(padded, dtype=np.int64)


# -- smoother --------------------------------------------------------------


def estimate_lambda_max(matvec, jacobi: BlockDiagMatrix, n: int,
                        steps: int = _LANCZOS_STEPS, seed: int = _LANCZOS_SEED) -> float:
    """Largest eigenvalue of D^-1 A by a few generalized Lanczos steps.

    Runs at most ``steps`` operator applications from a seeded start vector,
    orthogonalizing in the D inner product; returns the largest Ritz value
    seen so far if the iteration breaks down early.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    jacobi.factor()
    alphas: list[float] = []
    betas: list[float] = []
    q_prev = np.zeros(n)
    dnorm = np.sqrt(v @ jacobi.matvec(v))
    q = v / dnorm
    basis = [q]
    beta_prev = 0.0
    for _ in range(steps):
        u = matvec(q)
        alpha = float(q @ u)
        z = jacobi.solve(u) - alpha * q - beta_prev * q_prev
        # Full reorthogonalization in the D inner product; cheap at 5 vectors.
        for qb in basis:
            z -= qb * (qb @ jacobi.matvec(z))
        alphas.append(alpha)
        beta2 = float(z @ jacobi.matvec(z))
        if not np.isfinite(beta2):
            raise FloatingPointError("Lanczos iteration produced a non-finite value")
        if beta2 <= 0 or np.sqrt(beta2) < 1e-12 * abs(alpha):
            break
        beta = np.sqrt(beta2)
        betas.append(beta)
        q_prev, q = q, z / beta
        basis.append(q)
        beta_prev = beta
    if len(betas) >= len(alphas):
        betas = betas[: len(alphas) - 1]
    ritz = scipy.linalg.eigh_tridiagonal(
        np.asarray(alphas), np.asarray(betas), eigvals_only=True
    )
    return float(ritz[-1])


@dataclass
class ChebyshevSmoother:
    """Fixed-coefficient Chebyshev iteration targeting [lower, upper].

    The interval brackets the spectrum of D^-1 A, with D the level's
    point-block Jacobi matrix; two iterations are applied per call.
    """

    jacobi: BlockDiagMatrix
    lambda_max: float
    lower: float
    upper: float
    iterations: int = 2

    def __post_init__(self):
        if not 0 < self.lower < self.upper:
            raise ValueError(
                f"need 0 < lower < upper, got [{self.lower}, {self.upper}]"
            )
        self.jacobi.factor()

    def apply(self, matvec, x: np.ndarray | None, b: np.ndarray) -> np.ndarray:
        """Run the smoothing iterations from x (None means zero) toward A x = b."""
        theta = 0.5 * (self.upper + self.lower)
        delta = 0.5 * (self.upper - self.lower)
        sigma = theta / delta
        rho = 1.0 / sigma
        if x is None:
            r = b.copy()
            x = np.zeros_like(b)
        else:
            x = x.copy()
            r = b - matvec(x)
        d = self.jacobi.solve(r) / theta
        x += d
        for _ in range(self.iterations - 1):
            r = b - matvec(x)
            rho_next = 1.0 / (2.0 * sigma - rho)
            d = rho_next * rho * d + (2.0 * rho_next / delta) * self.jacobi.solve(r)
            x += d
            rho = rho_next
        return x


def make_smoother(matvec, jacobi: BlockDiagMatrix, n: int, seed: int = _LANCZOS_SEED
                  ) -> ChebyshevSmoother:
    lam = estimate_lambda_max(matvec, jacobi, n, seed=seed)
    if not lam > 0:
        raise ValueError(f"nonpositive spectral estimate {lam}")
    return ChebyshevSmoother(jacobi, lam, _CHEB_LOWER * lam, _CHEB_UPPER * lam)


# -- hierarchy ---------------------------------------------------------------


@dataclass
class MgLevel:
    """One grid level: its operator, smoother, and the prolongation below."""

    index: int
    matvec: object  # callable vector -> vector
    scalar_dim: int
    operator: object  # SchurSystem at level 0, BlockSparseMatrix below
    explicit: BlockSparseMatrix | None
    smoother: ChebyshevSmoother | None = None
    P: BlockSparseMatrix | None = None
    aggregation: Aggregation | None = None
    nullspace: DenseTall | None = None
    coarse_factor: object = field(default=None, repr=False)


@dataclass
class MgHierarchy:
    levels: list[MgLevel]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def apply(self, r: np.ndarray) -> np.ndarray:
        """Preconditioner application: one V-cycle from a zero initial guess."""
        return mgcycle(self, 0, None, r)


def build_hierarchy(
    sys: SchurSystem,
    nullspace: DenseTall,
    strength: StrengthMatrix,
    *,
    max_coarse_dim: int = 400,
    max_ratio: float = 0.7,
    max_aggregate: int = 20,
    seed: int = _LANCZOS_SEED,
) -> MgHierarchy:
    """Coarsen the reduced camera system until it is small enough to factor.

    The finest level always carries the assembled S (the Galerkin product
    consumes it) regardless of the matvec mode; ``strength`` must be the
    camera visibility strength.  Coarsening stops when a level's scalar
    dimension is at or below ``max_coarse_dim`` or when aggregation would
    shrink the dimension by less than ``1 - max_ratio``.
    """
    s_explicit = sys.ensure_explicit()
    level0 = MgLevel(
        index=0,
        matvec=sys.matvec,
        scalar_dim=sys.n_cameras * CAMERA_SIZE,
        operator=sys,
        explicit=s_explicit,
        nullspace=nullspace,
    )
    levels = [level0]
    K = nullspace
    while levels[-1].scalar_dim > max_coarse_dim:
        cur = levels[-1]
        strong = strength if cur.index == 0 else operator_strength(cur.explicit)
        agg = aggregate(strong, max_size=max_aggregate)
        ratio = (agg.n_aggregates * NULLSPACE_DIM) / cur.scalar_dim
        if ratio > max_ratio:
            break
        bs = CAMERA_SIZE if cur.index == 0 else NULLSPACE_DIM
        P, K_next, padded = build_prolongation(agg, K, bs)
        a_next = _symmetrized(triple_product(P.transpose(), cur.explicit, P))
        if len(padded):
            _patch_decoupled_dofs(a_next, padded)
        cur.P = P
        cur.aggregation = agg
        levels.append(
            MgLevel(
                index=cur.index + 1,
                matvec=a_next.matvec,
                scalar_dim=agg.n_aggregates * NULLSPACE_DIM,
                operator=a_next,
                explicit=a_next,
                nullspace=K_next,
            )
        )
        K = K_next

    for lvl in levels[:-1]:
        jacobi = BlockDiagMatrix(lvl.explicit.diagonal_blocks())
        lvl.smoother = make_smoother(
            lvl.matvec, jacobi, lvl.scalar_dim, seed=seed + lvl.index
        )
    coarsest = levels[-1]
    dense = coarsest.explicit.to_dense()
    dense = 0.5 * (dense + dense.T)
    try:
        coarsest.coarse_factor = scipy.linalg.cho_factor(dense)
    except scipy.linalg.LinAlgError as e:
        raise ValueError(
            "coarsest-level operator is not positive definite "
            "(damping too small for the given geometry)"
        ) from e
    return MgHierarchy(levels)


def _symmetrized(op: BlockSparseMatrix) -> BlockSparseMatrix:
    """Average a nominally symmetric operator with its transpose.

    The two-stage sparse product leaves O(eps * cancellation) asymmetry that
    one-sided triangular reads downstream would otherwise amplify.
    """
    raw = op.to_bsr().tocsr()
    sym = (raw + raw.T).tocsr()
    sym.data *= 0.5
    return BlockSparseMatrix.from_scipy_bsr(
        sym.tobsr(blocksize=(op.row_block_size, op.col_block_size))
    )


def _patch_decoupled_dofs(op: BlockSparseMatrix, padded: np.ndarray) -> None:
    """Put 1.0 on diagonal entries of structurally empty coarse dofs.

    Padded prolongation columns are zero, so their Galerkin rows and columns
    vanish; a unit diagonal keeps the operator definite without coupling them
    to anything.
    """
    bs = op.row_block_size
    rows = op.block_rows_expanded()
    for dof in padded:
        blk, local = divmod(int(dof), bs)
        slot = np.flatnonzero((rows == blk) & (op.indices == blk))
        if len(slot):
            op.blocks[slot[0], local, local] += 1.0


def mgcycle(h: MgHierarchy, level: int, x: np.ndarray | None, b: np.ndarray) -> np.ndarray:
    """One V-cycle at the given level (zero initial guess when x is None)."""
    lvl = h.levels[level]
    if lvl.coarse_factor is not None:
        return scipy.linalg.cho_solve(lvl.coarse_factor, b)
    x = lvl.smoother.apply(lvl.matvec, x, b)
    r = b - lvl.matvec(x)
    xc = mgcycle(h, level + 1, None, lvl.P.rmatvec(r))
    x = x + lvl.P.matvec(xc)
    return lvl.smoother.apply(lvl.matvec, x, b)


def hierarchy_stats(h: MgHierarchy) -> str:
    """Structured text summary: one line per level plus aggregate sizing."""
    lines = []
    for lvl in h.levels:
        nnz = lvl.explicit.nnz_scalar() if lvl.explicit is not None else 0
        parts = [
            f"level={lvl.index}",
            f"scalar_dim={lvl.scalar_dim}",
            f"block_rows={lvl.explicit.n_block_rows if lvl.explicit else 0}",
            f"nnz_scalar={nnz}",
        ]
        if lvl.smoother is not None:
            parts.append(f"lambda_max={lvl.smoother.lambda_max:.6g}")
        if lvl.aggregation is not None:
            parts.append(f"aggregates={lvl.aggregation.n_aggregates}")
            parts.append(f"mean_aggregate_size={lvl.aggregation.mean_size():.3f}")
        if lvl.coarse_factor is not None:
            parts.append("direct_solve=1")
        lines.append(" ".join(parts))
    return "\n".join(lines)
