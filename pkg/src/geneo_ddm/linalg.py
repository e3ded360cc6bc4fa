"""Sparse and dense kernels: storage checks, factorizations and pencil eigensolvers.

Sparse matrices are plain :class:`scipy.sparse.csr_matrix` objects in canonical
form (sorted, duplicate-free column indices). Generalized eigenproblems
``K x = lam M x`` are always symmetric with ``M`` positive semidefinite and,
in practice, singular: the partition-of-unity weighting vanishes on the
subdomain boundary layer, so part of the spectrum is infinite and has to be
split off.
"""
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DimensionMismatch,
    DimensionTooLarge,
    NoConvergence,
    NumericallySingular,
    ShiftSingular,
    StructurallySingular,
)

DENSE_EIG_LIMIT = 4000
PIVOT_RTOL = 1e-14
EIG_RTOL = 1e-8
INFINITE_RTOL = 1e-12
SHIFT_RETRIES = 5


def as_csr(matrix):
    """Return ``matrix`` as a canonical CSR matrix (sorted, summed duplicates)."""
    out = sp.csr_matrix(matrix, dtype=float, copy=True)
    out.sum_duplicates()
    out.sort_indices()
    return out


def is_symmetric(matrix, rtol=1e-14):
    matrix = sp.csr_matrix(matrix)
    diff = abs(matrix - matrix.T)
    scale = abs(matrix).max() if matrix.nnz else 0.0
    return diff.nnz == 0 or diff.max() <= rtol * scale


def spmv(matrix, v):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != matrix.shape[1]:
        raise DimensionMismatch(f"vector of length {v.shape[0]} for matrix {matrix.shape}")
    return matrix @ v


def galerkin_triple_product(R, B):
    """Return ``R^T B R`` as a dense array.

    ``R`` holds one coarse basis vector per column and may be dense or sparse.
    """
    if R.shape[0] != B.shape[0] or B.shape[0] != B.shape[1]:
        raise DimensionMismatch(f"R {R.shape} incompatible with B {B.shape}")
    BR = B @ R
    out = R.T @ BR
    if sp.issparse(out):
        out = out.toarray()
    return np.asarray(out, dtype=float)


class Factorization:
    """Factored square matrix supporting repeated solves.

    Sparse input goes through SuperLU; with ``symmetric_indefinite`` the
    ordering is computed on the symmetric pattern and diagonal pivots are
    preferred. Dense input uses LAPACK LU with partial pivoting.
    """

    def __init__(self, matrix, symmetric_indefinite=True, where=None):
        n_rows, n_cols = matrix.shape
        if n_rows != n_cols:
            raise DimensionMismatch(f"cannot factorize a {matrix.shape} matrix", where)
        self.shape = matrix.shape
        self.symmetric = symmetric_indefinite
        self.where = where
        self.dense = not sp.issparse(matrix)

        if self.dense:
            matrix = np.asarray(matrix, dtype=float)
            if n_rows and (~matrix.any(axis=0)).any() | (~matrix.any(axis=1)).any():
                raise StructurallySingular("empty row or column", where)
            diag_max = np.abs(np.diag(matrix)).max() if n_rows else 0.0
            with warnings.catch_warnings():
                # exact zero pivots are reported below as NumericallySingular
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                self._lu = sla.lu_factor(matrix, check_finite=False)
            pivots = np.abs(np.diag(self._lu[0]))
        else:
            matrix = sp.csc_matrix(matrix, dtype=float)
            if n_rows and (np.diff(matrix.indptr) == 0).any() | (np.diff(matrix.tocsr().indptr) == 0).any():
                raise StructurallySingular("empty row or column", where)
            diag_max = np.abs(matrix.diagonal()).max() if n_rows else 0.0
            try:
                if symmetric_indefinite:
                    self._lu = spla.splu(
                        matrix,
                        permc_spec="MMD_AT_PLUS_A",
                        diag_pivot_thresh=0.1,
                        options={"SymmetricMode": True},
                    )
                else:
                    self._lu = spla.splu(matrix, permc_spec="COLAMD")
            except RuntimeError as exc:
                raise NumericallySingular(f"factorization failed: {exc}", where) from exc
            pivots = np.abs(self._lu.U.diagonal())

        scale = max(diag_max, pivots.max() if pivots.size else 0.0)
        self.min_pivot = pivots.min() if pivots.size else 0.0
        self.singular = bool(pivots.size) and self.min_pivot < PIVOT_RTOL * scale
        if self.singular:
            raise NumericallySingular(
                f"pivot {self.min_pivot:.3e} below {PIVOT_RTOL:g} x {scale:.3e}", where
            )

    def solve(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.shape[0]:
            raise DimensionMismatch(f"rhs of length {v.shape[0]} for {self.shape}", self.where)
        if self.dense:
            return sla.lu_solve(self._lu, v, check_finite=False)
        return self._lu.solve(v)

    def as_operator(self):
        return spla.LinearOperator(self.shape, matvec=self.solve, dtype=float)


def factorize(matrix, symmetric_indefinite=True, where=None):
    return Factorization(matrix, symmetric_indefinite=symmetric_indefinite, where=where)


def inertia(matrix):
    """Return ``(n_negative, n_zero, n_positive)`` of a symmetric sparse matrix.

    Uses an LU with forced symmetric diagonal pivoting, so ``P A P^T = L D L^T``
    and the pivot signs are the inertia. Returns ``None`` if SuperLU had to
    leave the diagonal, in which case no certificate is available.
    """
    matrix = sp.csc_matrix(matrix, dtype=float)
    try:
        lu = spla.splu(
            matrix,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError:
        return None
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return None
    d = lu.U.diagonal()
    tol = PIVOT_RTOL * max(np.abs(d).max(), 1.0)
    return int((d < -tol).sum()), int((np.abs(d) <= tol).sum()), int((d > tol).sum())


def is_positive_definite(matrix):
    counts = inertia(matrix)
    return counts is not None and counts[0] == 0 and counts[1] == 0


def count_below(pencil, sigma):
    """Number of finite eigenvalues below ``sigma``, or ``None`` if undecided.

    Sylvester's law on the condensed pencil: with ``K`` definite on
    ``null(M)``, ``neg(K - sigma M) = neg(K_nn) + #{lambda < sigma}``.
    """
    M = sp.csr_matrix(pencil.M)
    null = np.asarray(abs(M).sum(axis=1)).ravel() == 0
    full = inertia(sp.csc_matrix(pencil.K - sigma * pencil.M))
    if full is None or full[1]:
        return None
    if not null.any():
        return full[0]
    K_nn = sp.csr_matrix(pencil.K)[null][:, null]
    part = inertia(K_nn.tocsc())
    if part is None or part[0] or part[1]:
        return None
    return full[0]


@dataclass(frozen=True)
class Pencil:
    """Symmetric pencil ``(K, M)`` with ``M`` positive semidefinite."""

    K: sp.csr_matrix
    M: sp.csr_matrix

    def __post_init__(self):
        if self.K.shape != self.M.shape or self.K.shape[0] != self.K.shape[1]:
            raise DimensionMismatch(f"pencil shapes {self.K.shape} and {self.M.shape}")

    @property
    def dimension(self):
        return self.K.shape[0]


@dataclass
class EigenPairSet:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __len__(self):
        return self.eigenvalues.shape[0]

    def residuals(self, pencil):
        """Relative residuals ``|Kx - lam Mx| / ((|K|_F + |lam| |M|_F) |x|)``."""
        X = self.eigenvectors
        lam = self.eigenvalues
        R = pencil.K @ X - (pencil.M @ X) * lam
        k_norm = spla.norm(pencil.K) if sp.issparse(pencil.K) else np.linalg.norm(pencil.K)
        m_norm = spla.norm(pencil.M) if sp.issparse(pencil.M) else np.linalg.norm(pencil.M)
        scale = (k_norm + np.abs(lam) * m_norm) * np.linalg.norm(X, axis=0)
        return np.linalg.norm(R, axis=0) / np.where(scale > 0, scale, 1.0)

    def subset(self, mask):
        return EigenPairSet(self.eigenvalues[mask], self.eigenvectors[:, mask])


def _dense(matrix):
    return matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=float)


def solve_pencil_dense(pencil, limit=DENSE_EIG_LIMIT):
    """All finite eigenpairs of ``(K, M)``, sorted ascending.

    The null space of ``M`` is condensed out: writing ``x = V_r y + V_0 z`` with
    ``V_0`` spanning ``null(M)``, the rows along ``V_0`` force
    ``z = -K_00^{-1} K_0r y`` and what remains is the definite problem
    ``S y = lam M_rr y`` on the Schur complement ``S``. When the null space is
    structural (zero rows of ``M``) the basis change is a plain reindexing.
    Eigenvectors are returned ``M``-orthonormal.
    """
    n = pencil.dimension
    if n > limit:
        raise DimensionTooLarge(f"dimension {n} exceeds dense limit {limit}")
    K = _dense(pencil.K)
    M = _dense(pencil.M)
    m_norm = np.abs(M).max() if n else 0.0

    null_rows = ~(np.abs(M) > INFINITE_RTOL * m_norm).any(axis=1)
    keep = ~null_rows
    basis = None
    M_rr = M[np.ix_(keep, keep)]
    try:
        sla.cholesky(M_rr, check_finite=False)
    except sla.LinAlgError:
        # null space not aligned with coordinates: rotate into M's eigenbasis
        w, U = sla.eigh(M)
        rank_mask = w > INFINITE_RTOL * max(np.abs(w).max(), 1e-300)
        basis = np.hstack([U[:, rank_mask], U[:, ~rank_mask]])
        r = int(rank_mask.sum())
        K = basis.T @ K @ basis
        M_rr = np.diag(w[rank_mask])
        keep = np.zeros(n, dtype=bool)
        keep[:r] = True
        null_rows = ~keep

    K_rr = K[np.ix_(keep, keep)]
    if null_rows.any():
        K_00 = K[np.ix_(null_rows, null_rows)]
        K_0r = K[np.ix_(null_rows, keep)]
        try:
            Z = sla.solve(K_00, K_0r, assume_a="sym", check_finite=False)
        except sla.LinAlgError as exc:
            raise NumericallySingular("K is singular on the null space of M") from exc
        S = K_rr - K_0r.T @ Z
        S = 0.5 * (S + S.T)
    else:
        Z = None
        S = K_rr
    lam, Y = sla.eigh(S, M_rr, check_finite=False)

    X = np.zeros((n, lam.shape[0]))
    X[keep] = Y
    if Z is not None:
        X[null_rows] = -Z @ Y
    if basis is not None:
        X = basis @ X
    return EigenPairSet(lam, X)


def _shift_factor(pencil, shift, where=None):
    shifted = sp.csc_matrix(pencil.K - shift * pencil.M)
    for attempt in range(SHIFT_RETRIES + 1):
        try:
            return shift, Factorization(shifted, symmetric_indefinite=True, where=where)
        except NumericallySingular:
            shift = shift * (1 + 1e-6) if shift != 0 else -1e-6
            shifted = sp.csc_matrix(pencil.K - shift * pencil.M)
    raise ShiftSingular(f"K - sigma M singular after {SHIFT_RETRIES} retries", where)


def solve_pencil_shift_invert(pencil, target_count, shift, where=None, factorization=None):
    """The ``target_count`` finite eigenpairs nearest ``shift`` via ARPACK.

    With ``shift`` below the whole finite spectrum these are the smallest ones.
    ARPACK runs on the dofs where ``M`` has nonzero rows, i.e. on the
    condensed pencil ``(S, M_rr)`` whose mass matrix is definite: the ``rr``
    block of ``(K - shift M)^{-1}`` is exactly ``(S - shift M_rr)^{-1}``. Full
    eigenvectors are recovered by one more application of
    ``(K - shift M)^{-1} M``, and eigenvalues are recomputed as Rayleigh
    quotients. ``factorization`` may supply a factored ``K - shift M``.
    """
    n = pencil.dimension
    M = sp.csr_matrix(pencil.M)
    rows = np.flatnonzero(np.diff(M.indptr) > 0)
    rows = rows[np.asarray(abs(M[rows]).sum(axis=1)).ravel() > 0]
    r = rows.size
    def dense_nearest():
        pairs = solve_pencil_dense(pencil, limit=max(n, DENSE_EIG_LIMIT))
        order = np.argsort(np.abs(pairs.eigenvalues - shift), kind="stable")[:target_count]
        return pairs.subset(np.sort(order))

    small = n <= DENSE_EIG_LIMIT
    if target_count >= r - 1 or n < 10 or (small and 2 * target_count >= r):
        # ARPACK needs ncv well above k; most of the spectrum is wanted anyway
        return dense_nearest()

    if factorization is None:
        shift, factorization = _shift_factor(pencil, shift, where)
    M_rr = M[rows][:, rows].tocsr()

    def opinv(y):
        z = np.zeros(n)
        z[rows] = y
        return factorization.solve(z)[rows]

    def no_matvec(y):
        raise RuntimeError("shift-invert mode never applies the pencil matrix directly")

    shape = (r, r)
    v0 = np.random.default_rng(12345).standard_normal(r)
    ncv = min(r, max(2 * target_count + 1, 20))
    while True:
        try:
            lam, Y = spla.eigsh(
                spla.LinearOperator(shape, matvec=no_matvec, dtype=float),
                k=target_count,
                M=M_rr,
                sigma=shift,
                which="LM",
                OPinv=spla.LinearOperator(shape, matvec=opinv, dtype=float),
                v0=v0,
                ncv=ncv,
                tol=0,
            )
            break
        except spla.ArpackNoConvergence as exc:
            raise NoConvergence(
                f"ARPACK stopped with {len(exc.eigenvalues)} of {target_count} pairs (ncv={ncv})", where
            ) from exc
        except spla.ArpackError as exc:
            # too few restart shifts: widen the Krylov space, then give up
            if ncv < r:
                ncv = min(r, 2 * ncv)
                continue
            if small:
                return dense_nearest()
            raise NoConvergence(f"ARPACK failed with ncv={ncv}: {exc}", where) from exc

    MX = np.zeros((n, Y.shape[1]))
    MX[rows] = M_rr @ Y
    X = np.column_stack([factorization.solve(MX[:, i]) for i in range(Y.shape[1])])
    X /= np.sqrt(np.einsum("ij,ij->j", X, pencil.M @ X))
    lam = np.einsum("ij,ij->j", X, pencil.K @ X)
    order = np.argsort(lam, kind="stable")
    pairs = EigenPairSet(lam[order], X[:, order])
    res = pairs.residuals(pencil)
    if (res > EIG_RTOL).any():
        raise NoConvergence(f"eigen-residual {res.max():.2e} above {EIG_RTOL:g} (ncv={ncv})", where)
    return pairs
