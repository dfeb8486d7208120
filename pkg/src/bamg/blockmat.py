"""Block sparse matrix containers.

Two storage schemes cover everything the solver assembles:

* :class:`BlockSparseMatrix` -- block-CSR with uniform dense row-major blocks,
  used for the camera-point coupling, the reduced camera matrix, and every
  coarse-grid operator.
* :class:`BlockDiagMatrix` -- an array of square diagonal blocks with a cached
  Cholesky factorization, used for the point system and block-Jacobi
  preconditioners.

Matrices are immutable after assembly; callers that need modified values build
a new matrix.  Heavy kernels (matvec, sparse products) are delegated to
scipy.sparse, which works on exactly this data layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class IndefiniteBlockError(Exception):
    """A diagonal block was not positive definite.

    Attributes
    ----------
    block_index : int
        Index of the first offending block.
    """

    def __init__(self, block_index: int, context: str = ""):
        self.block_index = int(block_index)
        msg = f"block {block_index} is not positive definite"
        if context:
            msg += f" ({context})"
        super().__init__(msg)


@dataclass
class DenseTall:
    """Dense rows-by-columns matrix; houses near-nullspace bases."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise ValueError(f"DenseTall expects a 2-D array, got ndim={self.data.ndim}")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


@dataclass
class BlockDiagMatrix:
    """Square block-diagonal matrix as a stacked (n, bs, bs) array."""

    blocks: np.ndarray
    _chol: np.ndarray | None = field(default=None, repr=False)
    _inv: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.blocks = np.asarray(self.blocks, dtype=float)
        if self.blocks.ndim != 3 or self.blocks.shape[1] != self.blocks.shape[2]:
            raise ValueError(f"expected (n, bs, bs) blocks, got {self.blocks.shape}")

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]

    @property
    def block_size(self) -> int:
        return self.blocks.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        n = self.n_blocks * self.block_size
        return (n, n)

    def nnz_scalar(self) -> int:
        return self.n_blocks * self.block_size**2

    def matvec(self, x: np.ndarray) -> np.ndarray:
        xb = x.reshape(self.n_blocks, self.block_size)
        return np.einsum("nij,nj->ni", self.blocks, xb).ravel()

    def factor(self) -> "BlockDiagMatrix":
        """Cholesky-factor every block; caches factors and inverses.

        Raises
        ------
        IndefiniteBlockError
            If some block is not positive definite (index reported).
        """
        if self._chol is None:
            try:
                self._chol = np.linalg.cholesky(self.blocks)
            except np.linalg.LinAlgError:
                for i, b in enumerate(self.blocks):
                    try:
                        np.linalg.cholesky(b)
                    except np.linalg.LinAlgError:
                        raise IndefiniteBlockError(i) from None
                raise
            linv = np.linalg.inv(self._chol)
            self._inv = np.einsum("nki,nkj->nij", linv, linv)
        return self

    @property
    def factored(self) -> bool:
        return self._chol is not None

    def solve(self, x: np.ndarray) -> np.ndarray:
        """Solve M y = x blockwise; factors on first use."""
        self.factor()
        xb = x.reshape(self.n_blocks, self.block_size)
        return np.einsum("nij,nj->ni", self._inv, xb).ravel()

    def inverse_blocks(self) -> np.ndarray:
        self.factor()
        return self._inv

    def to_dense(self) -> np.ndarray:
        n, bs = self.n_blocks, self.block_size
        out = np.zeros((n * bs, n * bs))
        for i in range(n):
            out[i * bs:(i + 1) * bs, i * bs:(i + 1) * bs] = self.blocks[i]
        return out

    def to_block_sparse(self) -> "BlockSparseMatrix":
        n = self.n_blocks
        idx = np.arange(n)
        return BlockSparseMatrix(
            n_block_rows=n,
            n_block_cols=n,
            row_block_size=self.block_size,
            col_block_size=self.block_size,
            indptr=np.arange(n + 1),
            indices=idx,
            blocks=self.blocks.copy(),
        )


@dataclass
class BlockSparseMatrix:
    """Block-CSR matrix with uniform dense blocks.

    ``indptr``/``indices`` address block rows and block columns; ``blocks`` is
    the (nnz, row_block_size, col_block_size) stack in row-major layout,
    sorted by column within each block row with no duplicates.
    """

    n_block_rows: int
    n_block_cols: int
    row_block_size: int
    col_block_size: int
    indptr: np.ndarray
    indices: np.ndarray
    blocks: np.ndarray
    _bsr: sp.bsr_matrix | None = field(default=None, repr=False)

    def __post_init__(self):
        self.indptr = np.asarray(self.indptr, dtype=np.int64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.blocks = np.asarray(self.blocks, dtype=float)
        if self.indptr.shape != (self.n_block_rows + 1,):
            raise ValueError(
                f"indptr has length {self.indptr.shape[0]}, "
                f"expected {self.n_block_rows + 1}"
            )
        if self.indptr[-1] != len(self.indices):
            raise ValueError(
                f"indptr[-1]={self.indptr[-1]} but {len(self.indices)} indices stored"
            )
        expect = (len(self.indices), self.row_block_size, self.col_block_size)
        if self.blocks.shape != expect:
            raise ValueError(f"blocks shaped {self.blocks.shape}, expected {expect}")
        if np.any(np.diff(self.indptr) < 0):
            raise ValueError("indptr must be nondecreasing")
        if len(self.indices) and (
            self.indices.min() < 0 or self.indices.max() >= self.n_block_cols
        ):
            raise ValueError("block column index out of range")

    # -- construction ------------------------------------------------------

    @staticmethod
    def from_triplets(
        n_block_rows: int,
        n_block_cols: int,
        rows: np.ndarray,
        cols: np.ndarray,
        blocks: np.ndarray,
    ) -> "BlockSparseMatrix":
        """Assemble from (row, col, block) triplets; duplicates are summed."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        blocks = np.asarray(blocks, dtype=float)
        if blocks.ndim != 3 or blocks.shape[0] != rows.shape[0] != cols.shape[0]:
            raise ValueError("triplet arrays disagree on entry count")
        rbs, cbs = blocks.shape[1], blocks.shape[2]
        if len(rows) == 0:
            return BlockSparseMatrix(
                n_block_rows, n_block_cols, rbs, cbs,
                np.zeros(n_block_rows + 1, dtype=np.int64),
                np.zeros(0, dtype=np.int64),
                np.zeros((0, rbs, cbs)),
            )
        order = np.lexsort((cols, rows))
        rows, cols, blocks = rows[order], cols[order], blocks[order]
        new = np.empty(len(rows), dtype=bool)
        new[0] = True
        new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        starts = np.flatnonzero(new)
        summed = np.add.reduceat(blocks, starts, axis=0)
        urows, ucols = rows[starts], cols[starts]
        counts = np.bincount(urows, minlength=n_block_rows)
        indptr = np.zeros(n_block_rows + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return BlockSparseMatrix(
            n_block_rows, n_block_cols, rbs, cbs, indptr, ucols, summed
        )

    @staticmethod
    def from_scipy_bsr(m: sp.bsr_matrix) -> "BlockSparseMatrix":
        m = m.copy()
        m.sort_indices()
        rbs, cbs = m.blocksize
        return BlockSparseMatrix(
            n_block_rows=m.shape[0] // rbs,
            n_block_cols=m.shape[1] // cbs,
            row_block_size=rbs,
            col_block_size=cbs,
            indptr=m.indptr.astype(np.int64),
            indices=m.indices.astype(np.int64),
            blocks=np.ascontiguousarray(m.data, dtype=float),
        )

    # -- queries -----------------------------------------------------------

    @property
    def n_block_entries(self) -> int:
        return len(self.indices)

    @property
    def shape(self) -> tuple[int, int]:
        return (
            self.n_block_rows * self.row_block_size,
            self.n_block_cols * self.col_block_size,
        )

    def nnz_scalar(self) -> int:
        """Stored scalar entry count (block count times block area)."""
        return self.n_block_entries * self.row_block_size * self.col_block_size

    def block_rows_expanded(self) -> np.ndarray:
        """Block row index of each stored block, shape (nnz,)."""
        return np.repeat(
            np.arange(self.n_block_rows, dtype=np.int64), np.diff(self.indptr)
        )

    def diagonal_blocks(self) -> np.ndarray:
        """Dense (n, bs, bs) array of diagonal blocks (zero where absent)."""
        if self.row_block_size != self.col_block_size:
            raise ValueError("diagonal blocks need square blocks")
        if self.n_block_rows != self.n_block_cols:
            raise ValueError("diagonal blocks need a square matrix")
        out = np.zeros((self.n_block_rows, self.row_block_size, self.col_block_size))
        for i in range(self.n_block_rows):
            lo, hi = self.indptr[i], self.indptr[i + 1]
            pos = np.searchsorted(self.indices[lo:hi], i)
            if pos < hi - lo and self.indices[lo + pos] == i:
                out[i] = self.blocks[lo + pos]
        return out

    # -- kernels -----------------------------------------------------------

    def to_bsr(self) -> sp.bsr_matrix:
        if self._bsr is None:
            self._bsr = sp.bsr_matrix(
                (self.blocks, self.indices, self.indptr),
                shape=self.shape,
                blocksize=(self.row_block_size, self.col_block_size),
            )
        return self._bsr

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.shape[1],):
            raise ValueError(f"matvec got vector of length {x.shape}, need {self.shape[1]}")
        return self.to_bsr() @ x

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        """Transpose matvec without materializing the transpose."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.shape[0],):
            raise ValueError(f"rmatvec got vector of length {x.shape}, need {self.shape[0]}")
        return self.to_bsr().T @ x

    def transpose(self) -> "BlockSparseMatrix":
        rows = self.block_rows_expanded()
        return BlockSparseMatrix.from_triplets(
            self.n_block_cols,
            self.n_block_rows,
            self.indices,
            rows,
            self.blocks.transpose(0, 2, 1),
        )

    def to_dense(self) -> np.ndarray:
        return self.to_bsr().toarray()

    def scale_block_columns(self, col_blocks: np.ndarray) -> "BlockSparseMatrix":
        """Right-multiply by a block-diagonal matrix given as (n, cbs, k) blocks."""
        if col_blocks.shape[0] != self.n_block_cols or col_blocks.shape[1] != self.col_block_size:
            raise ValueError("column block array does not match matrix")
        new_blocks = np.einsum("nij,njk->nik", self.blocks, col_blocks[self.indices])
        return BlockSparseMatrix(
            self.n_block_rows,
            self.n_block_cols,
            self.row_block_size,
            col_blocks.shape[2],
            self.indptr.copy(),
            self.indices.copy(),
            new_blocks,
        )


def multiply(a: BlockSparseMatrix, b: BlockSparseMatrix) -> BlockSparseMatrix:
    """Sparse block product a @ b.

    The scalar product runs through scipy's CSR kernel, whose symbolic pass
    sizes the output before numeric accumulation; the result is re-blocked to
    (a.row_block_size, b.col_block_size).
    """
    if a.n_block_cols != b.n_block_rows or a.col_block_size != b.row_block_size:
        raise ValueError(
            f"block product mismatch: ({a.n_block_rows}x{a.n_block_cols} of "
            f"{a.row_block_size}x{a.col_block_size}) @ ({b.n_block_rows}x"
            f"{b.n_block_cols} of {b.row_block_size}x{b.col_block_size})"
        )
    prod = (a.to_bsr().tocsr() @ b.to_bsr().tocsr()).tobsr(
        blocksize=(a.row_block_size, b.col_block_size)
    )
    return BlockSparseMatrix.from_scipy_bsr(prod)


def triple_product(
    r: BlockSparseMatrix, a: BlockSparseMatrix, p: BlockSparseMatrix
) -> BlockSparseMatrix:
    """Galerkin-style product r @ a @ p as two successive sparse products."""
    return multiply(multiply(r, a), p)


def write_matrix_market(mat, path) -> None:
    """Write a block matrix to a MatrixMarket coordinate file (scalar entries)."""
    if isinstance(mat, BlockDiagMatrix):
        mat = mat.to_block_sparse()
    coo = mat.to_bsr().tocoo()
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")
