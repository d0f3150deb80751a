"""Minimal linear algebra for the simulator.

Sparse matrices are scipy CSR; this module adds the block-diagonal SPD
matrix used for the lumped velocity mass (one dense block per mesh vertex),
a conjugate-gradient solver, and a Schur-complement solver for the mixed
saddle-point systems arising in projections and post-processing.
"""

from __future__ import annotations

import numpy as np
import pyamg
from scipy import sparse

__all__ = [
    "BlockDiagMatrix",
    "IterationLimitError",
    "SolverError",
    "cg_solve",
    "saddle_solve",
    "lumped_schur",
    "AmgPreconditioner",
]


class IterationLimitError(RuntimeError):
    """An iterative solver exhausted its iteration budget."""


class SolverError(RuntimeError):
    """A solve finished without meeting its residual contract."""


class BlockDiagMatrix:
    """Symmetric block-diagonal matrix over a partition of the indices.

    Blocks are given per mesh vertex together with the (disjoint) index
    sets they act on.  Factorization is a dense Cholesky per block, which
    also certifies positive definiteness.
    """

    def __init__(self, block_dofs, blocks, n: int):
        """``block_dofs``/``blocks`` are parallel lists of (s,) index arrays
        and (s, s) dense blocks; ``n`` is the total dimension."""
        self.n = int(n)
        groups: dict[int, list] = {}
        for dofs, blk in zip(block_dofs, blocks):
            dofs = np.asarray(dofs, dtype=np.int64)
            blk = np.asarray(blk, dtype=float)
            groups.setdefault(len(dofs), []).append((dofs, blk))
        self._groups = [
            (np.array([d for d, _ in items]), np.array([b for _, b in items]))
            for size, items in sorted(groups.items())
            if size > 0
        ]
        self._inv_groups = None
        self._inv_csr = None

    @classmethod
    def from_padded(cls, padded_dofs, sizes, padded_blocks, n: int):
        """Build from a (V, smax) padded dof table and (V, smax, smax) blocks."""
        dofs, blocks = [], []
        for row, s, blk in zip(padded_dofs, sizes, padded_blocks):
            dofs.append(row[:s])
            blocks.append(blk[:s, :s])
        return cls(dofs, blocks, n)

    @property
    def shape(self):
        return (self.n, self.n)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = np.zeros(self.n)
        for dofs, blocks in self._groups:
            y[dofs.ravel()] = np.einsum("kij,kj->ki", blocks, x[dofs]).ravel()
        return y

    def dot(self, x):
        return self.matvec(x)

    def quadratic_form(self, x: np.ndarray) -> float:
        return float(np.dot(x, self.matvec(x)))

    def factorize(self) -> None:
        """Dense Cholesky of every block; raises on a non-SPD block."""
        if self._inv_groups is not None:
            return
        inv = []
        for dofs, blocks in self._groups:
            try:
                np.linalg.cholesky(blocks)
            except np.linalg.LinAlgError:
                raise SolverError("block-diagonal matrix has a non-SPD block") from None
            inv.append(np.linalg.inv(blocks))
        self._inv_groups = inv

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        self.factorize()
        shape = rhs.shape
        rhs = np.asarray(rhs, dtype=float).reshape(self.n)
        x = np.zeros(self.n)
        for (dofs, _), inv in zip(self._groups, self._inv_groups):
            x[dofs.ravel()] = np.einsum("kij,kj->ki", inv, rhs[dofs]).ravel()
        return x.reshape(shape)

    def _to_csr(self, groups) -> sparse.csr_matrix:
        rows, cols, vals = [], [], []
        for (dofs, _), blocks in zip(self._groups, groups):
            s = dofs.shape[1]
            rows.append(np.repeat(dofs, s, axis=1).ravel())
            cols.append(np.tile(dofs, (1, s)).ravel())
            vals.append(blocks.ravel())
        mat = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n, self.n),
        )
        return mat.tocsr()

    def to_csr(self) -> sparse.csr_matrix:
        return self._to_csr([blocks for _, blocks in self._groups])

    def inv_csr(self) -> sparse.csr_matrix:
        """Explicit sparse inverse (block-wise), cached; used in hot loops."""
        if self._inv_csr is None:
            self.factorize()
            self._inv_csr = self._to_csr(self._inv_groups)
        return self._inv_csr


def _as_matvec(A):
    if callable(A) and not hasattr(A, "dot"):
        return A
    return A.dot


def cg_solve(A, b, tol: float = 1e-10, max_iters=None, M=None, x0=None, info=None):
    """Conjugate gradients for an SPD operator.

    ``A`` is anything with a ``dot`` method or a callable; ``M`` an optional
    preconditioner applied the same way.  Terminates when the residual drops
    below ``tol * ||b||`` and raises IterationLimitError past ``max_iters``
    (default 10n).  ``info``, when given a dict, receives iteration count
    and final residual.
    """
    apply_A = _as_matvec(A)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if max_iters is None:
        max_iters = 10 * n
    apply_M = _as_matvec(M) if M is not None else None

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        if info is not None:
            info.update(iterations=0, residual=0.0)
        return np.zeros(n)
    r = b - apply_A(x) if x0 is not None else b.copy()
    z = apply_M(r) if apply_M is not None else r
    p = z.copy()
    rz = float(np.dot(r, z))
    iters = 0
    res = np.linalg.norm(r)
    while res > tol * norm_b:
        if iters >= max_iters:
            raise IterationLimitError(
                f"cg did not reach tol={tol:g} in {max_iters} iterations "
                f"(residual {res / norm_b:.3e} relative)"
            )
        Ap = apply_A(p)
        alpha = rz / float(np.dot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        z = apply_M(r) if apply_M is not None else r
        rz_new = float(np.dot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
        iters += 1
        res = np.linalg.norm(r)
    if info is not None:
        info.update(iterations=iters, residual=float(res))
    return x


class AmgPreconditioner:
    """One AMG V-cycle on a sparse SPD matrix, usable inside CG."""

    def __init__(self, matrix: sparse.csr_matrix):
        self._ml = pyamg.smoothed_aggregation_solver(
            sparse.csr_matrix(matrix), max_coarse=50
        )
        self._op = self._ml.aspreconditioner(cycle="V")

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self._op @ r

    def dot(self, r: np.ndarray) -> np.ndarray:
        return self._op @ r


def lumped_schur(M: BlockDiagMatrix, B: sparse.csr_matrix) -> sparse.csr_matrix:
    """Explicit Schur complement B M^-1 B^T of a block-diagonal mass."""
    return sparse.csr_matrix(B @ M.inv_csr() @ B.T)


def saddle_solve(
    A,
    B: sparse.csr_matrix,
    f: np.ndarray,
    g: np.ndarray,
    tol: float = 1e-9,
    inner_tol: float = 1e-10,
    prec=None,
    inner_prec=None,
    y0=None,
):
    """Solve the saddle-point system  A x - B^T y = f,  B x = g.

    A must be SPD (a BlockDiagMatrix, solved exactly per block, or a sparse
    matrix, solved by inner CG at ``inner_tol``); B must be surjective.  The
    Schur complement system (B A^-1 B^T) y = g - B A^-1 f is solved by outer
    CG at ``tol``, optionally preconditioned with ``prec`` (e.g. an AMG
    cycle on the lumped Schur complement).  Returns (x, y) and verifies the
    residual contract ||Ax - B^T y - f|| <= tol*||f|| + eps and
    ||Bx - g|| <= tol*||g|| + eps.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    Bt = B.T.tocsr()

    if isinstance(A, BlockDiagMatrix):
        A.factorize()

        def solve_A(rhs):
            return A.solve(rhs)

    else:

        def solve_A(rhs):
            return cg_solve(A, rhs, tol=inner_tol, M=inner_prec)

    Ainv_f = solve_A(f)

    def schur(y):
        return B @ solve_A(Bt @ y)

    rhs = g - B @ Ainv_f
    y = cg_solve(schur, rhs, tol=tol, M=prec, x0=y0)
    x = Ainv_f + solve_A(Bt @ y)

    scale_1 = max(np.linalg.norm(f), 1.0)
    scale_2 = max(np.linalg.norm(g), 1.0)
    res_1 = np.linalg.norm(A.dot(x) - Bt @ y - f)
    res_2 = np.linalg.norm(B @ x - g)
    if res_1 > 50.0 * tol * scale_1 or res_2 > 50.0 * tol * scale_2:
        raise SolverError(
            f"saddle solve residuals {res_1:.2e}, {res_2:.2e} exceed contract"
        )
    return x, y
