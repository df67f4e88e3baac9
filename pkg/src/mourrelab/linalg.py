"""Complex sparse/dense linear-algebra kernel.

Sparse factor-and-solve, Hermitian eigendecomposition, spectral matrix
functions, power-iteration operator norms, and the factored-perturbation
inverse (T + P1 P2)^-1 = T^-1 - T^-1 P1 Gamma^-1 P2 T^-1 with
Gamma = 1 + P2 T^-1 P1.

Factorizations are delegated to SuperLU (sparse, partial pivoting with a
fill-reducing ordering) and LAPACK (dense LU, Hermitian eig); everything on
top of them (operator-norm power iteration, the factored inverse, spectral
calculus, the plain-text dump format) is local.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._rng import DEFAULT_SEED, stream

HERMITIAN_RTOL = 1e-12
PIVOT_RTOL = 1e-14
INDICATOR_RTOL = 1e-12


class SingularMatrix(Exception):
    """Factorization hit a pivot below tolerance (z inside the numerical spectrum)."""


class NotHermitian(Exception):
    pass


class GammaSingular(Exception):
    """Gamma = 1 + P2 T^-1 P1 is not invertible."""


class HypothesisViolated(UserWarning):
    """Contraction hypothesis ||P2 T^-1 P1|| < 1 failed, but Gamma was invertible."""


class NoConvergence(UserWarning):
    """Power iteration hit max_iter; the last iterate was returned."""


# ---------------------------------------------------------------------------
# sparse matrices


class CSparseMatrix:
    """Immutable complex sparse matrix in canonical row-major triplet form.

    Duplicate entries are summed and explicit zeros dropped on construction.
    A matrix flagged `hermitian` is verified entrywise against its adjoint
    within 1e-12 relative tolerance.
    """

    __slots__ = ("n_rows", "n_cols", "rows", "cols", "vals", "hermitian", "_csr", "_csc")

    def __init__(self, n_rows, n_cols, rows, cols, vals, hermitian=False):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=complex)
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows):
            raise IndexError("row index out of bounds")
        if cols.size and (cols.min() < 0 or cols.max() >= n_cols):
            raise IndexError("column index out of bounds")
        coo = sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))
        csr = coo.tocsr()
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        coo = csr.tocoo()
        self.rows = coo.row.astype(np.int64)
        self.cols = coo.col.astype(np.int64)
        self.vals = coo.data.astype(complex)
        self.hermitian = bool(hermitian)
        self._csr = csr
        self._csc = None
        if self.hermitian:
            self._check_hermitian()

    def _check_hermitian(self):
        if self.n_rows != self.n_cols:
            raise NotHermitian("non-square matrix flagged hermitian")
        d = self._csr - self._csr.conj().T
        scale = max(np.abs(self.vals).max(initial=0.0), 1e-300)
        if d.nnz and np.abs(d.data).max() >= HERMITIAN_RTOL * scale:
            raise NotHermitian(
                f"max|M - M*| = {np.abs(d.data).max():.3e} exceeds "
                f"{HERMITIAN_RTOL:.0e} * max|M| = {HERMITIAN_RTOL * scale:.3e}"
            )

    # constructors ----------------------------------------------------------

    @classmethod
    def from_dense(cls, a, hermitian=False):
        a = np.asarray(a, dtype=complex)
        rows, cols = np.nonzero(a)
        return cls(a.shape[0], a.shape[1], rows, cols, a[rows, cols], hermitian)

    @classmethod
    def identity(cls, n):
        idx = np.arange(n)
        return cls(n, n, idx, idx, np.ones(n, dtype=complex), hermitian=True)

    @classmethod
    def diagonal(cls, d):
        d = np.asarray(d, dtype=complex)
        idx = np.arange(d.size)
        herm = bool(np.abs(d.imag).max(initial=0.0) < HERMITIAN_RTOL * max(np.abs(d).max(initial=0.0), 1e-300))
        return cls(d.size, d.size, idx, idx, d, hermitian=herm)

    @classmethod
    def zeros(cls, n_rows, n_cols=None):
        n_cols = n_rows if n_cols is None else n_cols
        return cls(n_rows, n_cols, [], [], [], hermitian=(n_rows == n_cols))

    # views -----------------------------------------------------------------

    @property
    def nnz(self):
        return self.vals.size

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    def tocsr(self):
        return self._csr

    def tocsc(self):
        if self._csc is None:
            self._csc = self._csr.tocsc()
        return self._csc

    def toarray(self):
        return self._csr.toarray()

    def matvec(self, x):
        return self._csr @ x

    def rmatvec(self, x):
        """Adjoint action M* x."""
        return (self._csr.conj().T) @ x

    def conj_transpose(self):
        c = self._csr.conj().T.tocoo()
        return CSparseMatrix(self.n_cols, self.n_rows, c.row, c.col, c.data, self.hermitian)

    def __matmul__(self, other):
        if isinstance(other, CSparseMatrix):
            return self._csr @ other._csr
        return self._csr @ other

    def __rmatmul__(self, other):
        return other @ self._csr


def dump_matrix(m: CSparseMatrix, path) -> None:
    """Write `m` in the plain-text triplet format (17 significant digits)."""
    with open(path, "w") as fh:
        fh.write(f"{m.n_rows} {m.n_cols} {m.nnz}\n")
        for r, c, v in zip(m.rows, m.cols, m.vals):
            fh.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")


def load_matrix(path) -> CSparseMatrix:
    with open(path) as fh:
        header = fh.readline().split()
        n_rows, n_cols, nnz = (int(t) for t in header)
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=complex)
        for k in range(nnz):
            r, c, re, im = fh.readline().split()
            rows[k], cols[k] = int(r), int(c)
            vals[k] = complex(float(re), float(im))
    return CSparseMatrix(n_rows, n_cols, rows, cols, vals)


# ---------------------------------------------------------------------------
# factorizations


class SolveHandle:
    """Opaque factorization of a square complex operator.

    `solve` and `solve_adjoint` accept one right-hand side (or a stack of
    columns) and may be called repeatedly and concurrently; the factorization
    itself happened in the constructor.  `matvec`/`matvec_adjoint` apply the
    original operator and back the residual contract
    ||M x - b|| <= 1e-9 (||M|| ||x|| + ||b||).
    """

    def __init__(self, n, solve, solve_adjoint, matvec=None, matvec_adjoint=None):
        self.n = n
        self._solve = solve
        self._solve_adjoint = solve_adjoint
        self._matvec = matvec
        self._matvec_adjoint = matvec_adjoint

    def solve(self, b):
        return self._solve(np.asarray(b, dtype=complex))

    def solve_adjoint(self, b):
        return self._solve_adjoint(np.asarray(b, dtype=complex))

    def matvec(self, x):
        if self._matvec is None:
            raise NotImplementedError("handle carries no forward operator")
        return self._matvec(np.asarray(x, dtype=complex))

    def matvec_adjoint(self, x):
        if self._matvec_adjoint is None:
            raise NotImplementedError("handle carries no adjoint operator")
        return self._matvec_adjoint(np.asarray(x, dtype=complex))


def sparse_lu(m: CSparseMatrix) -> SolveHandle:
    """Sparse LU with partial pivoting and a fill-reducing ordering."""
    if m.n_rows != m.n_cols:
        raise ValueError("matrix must be square")
    scale = max(np.abs(m.vals).max(initial=0.0), 1e-300)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", spla.MatrixRankWarning)
            lu = spla.splu(m.tocsc())
    except RuntimeError as exc:
        raise SingularMatrix(str(exc)) from exc
    upiv = np.abs(lu.U.diagonal())
    if upiv.size and upiv.min() < PIVOT_RTOL * scale:
        raise SingularMatrix(
            f"pivot {upiv.min():.3e} below {PIVOT_RTOL:.0e} * scale {scale:.3e}"
        )
    csr = m.tocsr()
    adj = csr.conj().T.tocsr()
    return SolveHandle(
        m.n_rows,
        solve=lambda b: lu.solve(b),
        solve_adjoint=lambda b: lu.solve(b, trans="H"),
        matvec=lambda x: csr @ x,
        matvec_adjoint=lambda x: adj @ x,
    )


def dense_lu(a: np.ndarray) -> SolveHandle:
    """Dense LU with partial pivoting."""
    a = np.asarray(a, dtype=complex)
    if a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    scale = max(np.abs(a).max(initial=0.0), 1e-300)
    lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    upiv = np.abs(np.diag(lu))
    if upiv.size and upiv.min() < PIVOT_RTOL * scale:
        raise SingularMatrix(
            f"pivot {upiv.min():.3e} below {PIVOT_RTOL:.0e} * scale {scale:.3e}"
        )
    ah = a.conj().T
    return SolveHandle(
        a.shape[0],
        solve=lambda b: scipy.linalg.lu_solve((lu, piv), b, check_finite=False),
        solve_adjoint=lambda b: scipy.linalg.lu_solve((lu, piv), b, trans=2, check_finite=False),
        matvec=lambda x: a @ x,
        matvec_adjoint=lambda x: ah @ x,
    )


def sparse_solve(m: CSparseMatrix, b) -> np.ndarray:
    """Solve M x = b by sparse LU.  Raises SingularMatrix on tiny pivots."""
    return sparse_lu(m).solve(b)


# ---------------------------------------------------------------------------
# Hermitian eigendecomposition and spectral calculus


@dataclass(frozen=True)
class EigDecomp:
    """Eigenvalues ascending, eigenvector columns orthonormal."""

    eigenvalues: np.ndarray
    vectors: np.ndarray

    @property
    def n(self):
        return self.eigenvalues.size


def hermitian_eig(m: np.ndarray) -> EigDecomp:
    """Full eigendecomposition of a dense Hermitian matrix.

    Raises NotHermitian when max|M - M*| >= 1e-12 * max|M|.
    """
    m = np.asarray(m)
    scale = max(np.abs(m).max(initial=0.0), 1e-300)
    asym = np.abs(m - m.conj().T).max(initial=0.0)
    if asym >= HERMITIAN_RTOL * scale:
        raise NotHermitian(f"max|M - M*| = {asym:.3e} vs scale {scale:.3e}")
    w, v = np.linalg.eigh(m)
    return EigDecomp(eigenvalues=w, vectors=v)


def matrix_function(e: EigDecomp, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """V f(Lambda) V* for a scalar function f of a real variable."""
    fw = np.asarray(f(e.eigenvalues), dtype=float)
    r = (e.vectors * fw) @ e.vectors.conj().T
    return 0.5 * (r + r.conj().T)


def indicator(a: float, b: float, rtol: float = INDICATOR_RTOL) -> Callable[[np.ndarray], np.ndarray]:
    """Characteristic function of [a, b), ties at the endpoints resolved
    within a relative eigenvalue tolerance (closed at a, open at b)."""

    def f(lam):
        lam = np.asarray(lam, dtype=float)
        tol = rtol * np.maximum(1.0, np.abs(lam))
        inside = (lam >= a - tol) & (lam < b - tol)
        return inside.astype(float)

    return f


# ---------------------------------------------------------------------------
# operator norms


def weighted_op_norm(
    apply: Callable[[np.ndarray], np.ndarray],
    apply_adjoint: Callable[[np.ndarray], np.ndarray],
    n: int,
    tol: float = 1e-9,
    max_iter: int = 300,
    seed: int = DEFAULT_SEED,
    check_adjoint: bool = True,
) -> float:
    """Largest singular value of a linear map by power iteration on T* T.

    The start vector comes from the fixed-seed Philox stream, so the output
    is reproducible bit for bit.  On non-convergence a NoConvergence warning
    is emitted and the last iterate returned.
    """
    rng = stream("weighted_op_norm", seed)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    if check_adjoint:
        u1 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        u2 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        lhs = np.vdot(u2, apply(u1))
        rhs = np.vdot(apply_adjoint(u2), u1)
        ref = abs(lhs) + abs(rhs) + 1e-300
        if abs(lhs - rhs) > 1e-6 * ref:
            raise ValueError("apply/apply_adjoint are not an adjoint pair")
    sigma = 0.0
    for _ in range(max_iter):
        w = apply(v)
        s = np.linalg.norm(w)
        if s == 0.0:
            return 0.0
        v = apply_adjoint(w)
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0
        v /= nv
        if abs(s - sigma) <= tol * max(s, 1e-300):
            return float(s)
        sigma = s
    warnings.warn(f"no convergence after {max_iter} iterations", NoConvergence)
    return float(sigma)


def dense_op_norm(a: np.ndarray, **kw) -> float:
    """Operator 2-norm of a dense matrix via the same power iteration."""
    a = np.asarray(a, dtype=complex)
    ah = a.conj().T
    return weighted_op_norm(lambda x: a @ x, lambda x: ah @ x, a.shape[1],
                            check_adjoint=False, **kw)


# ---------------------------------------------------------------------------
# factored-perturbation inverse


def factored_inverse(
    t_solve: SolveHandle,
    p1: CSparseMatrix,
    p2: CSparseMatrix,
    check_contraction: bool = True,
) -> SolveHandle:
    """SolveHandle for (T + P1 P2) given a factorization of T.

    Gamma = 1 + P2 T^-1 P1 is formed and factored once; each solve costs one
    T-solve plus a small dense correction.  When ||P2 T^-1 P1|| >= 1 but
    Gamma still factors, a HypothesisViolated warning is emitted.
    """
    n = t_solve.n
    if p1.n_rows != n or p2.n_cols != n or p1.n_cols != p2.n_rows:
        raise ValueError("P1 must be n x m and P2 m x n")
    m = p1.n_cols
    if m == 0 or p1.nnz == 0 or p2.nnz == 0:
        return SolveHandle(
            n,
            solve=t_solve.solve,
            solve_adjoint=t_solve.solve_adjoint,
            matvec=t_solve._matvec,
            matvec_adjoint=t_solve._matvec_adjoint,
        )
    x1 = t_solve.solve(p1.toarray())            # T^-1 P1, n x m
    core = p2 @ x1                               # P2 T^-1 P1, m x m
    core = np.asarray(core.toarray() if sp.issparse(core) else core, dtype=complex)
    if check_contraction:
        q = dense_op_norm(core)
        if q >= 1.0:
            warnings.warn(
                f"||P2 T^-1 P1|| = {q:.3e} >= 1; inverse may still exist", HypothesisViolated
            )
    gamma = np.eye(m, dtype=complex) + core
    try:
        glu, gpiv = scipy.linalg.lu_factor(gamma, check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise GammaSingular(str(exc)) from exc
    gd = np.abs(np.diag(glu))
    if gd.min() < PIVOT_RTOL * max(np.abs(gamma).max(), 1e-300):
        raise GammaSingular(f"Gamma pivot {gd.min():.3e} below tolerance")

    x2 = t_solve.solve_adjoint(p2.conj_transpose().toarray())   # T^-* P2*, n x m

    def solve(b):
        y = t_solve.solve(b)
        corr = scipy.linalg.lu_solve((glu, gpiv), p2.matvec(y), check_finite=False)
        return y - x1 @ corr

    def solve_adjoint(b):
        y = t_solve.solve_adjoint(b)
        corr = scipy.linalg.lu_solve((glu, gpiv), p1.rmatvec(y), trans=2, check_finite=False)
        return y - x2 @ corr

    matvec = None
    matvec_adjoint = None
    if t_solve._matvec is not None:
        matvec = lambda x: t_solve.matvec(x) + p1.matvec(p2.matvec(x))
    if t_solve._matvec_adjoint is not None:
        matvec_adjoint = lambda x: t_solve.matvec_adjoint(x) + p2.rmatvec(p1.rmatvec(x))
    return SolveHandle(n, solve, solve_adjoint, matvec, matvec_adjoint)
