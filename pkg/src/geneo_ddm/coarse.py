"""Delta-GenEO and H-GenEO coarse spaces.

On each overlapping subdomain the Neumann forms ``a_j`` (stiffness) and
``b_j`` (stiffness minus kappa-mass) are assembled over the subdomain's
elements only. Both eigenproblems share the right-hand matrix
``D_j A_neu D_j``; Delta-GenEO pairs it with ``A_neu``, H-GenEO with ``B_neu``.
Eigenvectors with eigenvalue below ``lambda_max`` are weighted by the
partition of unity, zero-extended and stacked into the coarse basis.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from math import ceil

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CoarseSingular, IndexOutOfRange, NoConvergence, NumericallySingular
from .linalg import (
    DENSE_EIG_LIMIT,
    Factorization,
    Pencil,
    as_csr,
    galerkin_triple_product,
    count_below,
    is_positive_definite,
    solve_pencil_dense,
    solve_pencil_shift_invert,
)
from .problem import element_matrices, scatter

log = logging.getLogger(__name__)


class CoarseKind(str, Enum):
    DELTA = "delta"
    H = "h"


@dataclass
class LocalOperators:
    A_neu: sp.csr_matrix
    B_neu: sp.csr_matrix
    mass: sp.csr_matrix
    M_pou: sp.csr_matrix
    weights: np.ndarray
    kappa: float
    area: float


def assemble_local(mesh, cfield, d, j, elements=None):
    """Neumann matrices of subdomain ``j`` on its overlapping dofs.

    ``elements`` may carry precomputed :class:`~geneo_ddm.problem.ElementMatrices`
    for the whole mesh.
    """
    sub = d[j]
    if elements is None:
        elements = element_matrices(mesh, cfield)
    local_map = np.full(mesh.n_nodes, -1, dtype=np.int64)
    local_map[mesh.interior_nodes[sub.overlapping_dofs]] = np.arange(sub.size)
    conn = mesh.elements[sub.elements]
    A = scatter(conn, elements.stiffness[sub.elements], local_map, sub.size)
    kappa_e = elements.kappa[sub.elements]
    mass_k = scatter(conn, elements.mass[sub.elements] * kappa_e[:, None, None], local_map, sub.size)
    mass = scatter(conn, elements.mass[sub.elements], local_map, sub.size)
    B = as_csr(A - mass_k)
    D = sp.diags(sub.pou_weights)
    M = as_csr(D @ A @ D)
    kappa = float(np.abs(kappa_e).max()) if kappa_e.size else 0.0
    area = sub.elements.size * 0.5 * mesh.h**2
    return LocalOperators(A, B, mass, M, sub.pou_weights, kappa, area)


def build_pencil(ops, kind):
    kind = CoarseKind(kind)
    K = ops.A_neu if kind is CoarseKind.DELTA else ops.B_neu
    return Pencil(K, ops.M_pou)


def select_modes(pairs, lambda_max):
    """Pairs with eigenvalue strictly below ``lambda_max`` (negative ones included)."""
    return pairs.subset(pairs.eigenvalues < lambda_max)


def candidate_shifts(ops, kind):
    """Shifts to try, closest to zero first.

    Delta pencils are semidefinite, so a tiny negative shift suffices. For
    H pencils the most negative Rayleigh quotient scales like
    ``-kappa * |Omega_j|``; fractions and multiples of that are tried in turn.
    """
    tiny = -1e-8 * spla.norm(ops.A_neu)
    if CoarseKind(kind) is CoarseKind.DELTA or ops.kappa <= 0:
        return [tiny]
    scale = ops.kappa * ops.area
    return [tiny] + [-scale * f for f in (1 / 64, 1 / 16, 1 / 4, 1.0, 4.0, 16.0, 64.0, 256.0)]


def certified_shift(pencil, shifts):
    """First shift for which ``K - shift M`` is positive definite.

    Positive definiteness of ``K - shift M`` is equivalent to ``shift`` lying
    below every finite eigenvalue (given ``K`` is definite on ``null(M)``).
    """
    for shift in shifts:
        if is_positive_definite(sp.csc_matrix(pencil.K - shift * pencil.M)):
            return shift
    raise NoConvergence(f"no shift certified below the spectrum (last tried {shifts[-1]:.3e})")


@dataclass
class LocalModes:
    eigenvalues: np.ndarray
    """Selected eigenvalues, ascending."""
    eigenvectors: np.ndarray
    """Selected eigenvectors on the overlapping dofs, before PoU weighting."""
    computed: int
    method: str


def compute_local_modes(ops, kind, lambda_max, method="auto", dense_limit=DENSE_EIG_LIMIT,
                        start_count=20, where=None):
    """All eigenpairs below ``lambda_max`` of the subdomain pencil."""
    pencil = build_pencil(ops, kind)
    n = pencil.dimension
    if method == "dense" or (method == "auto" and n <= dense_limit):
        pairs = solve_pencil_dense(pencil, limit=max(n, dense_limit))
        chosen = select_modes(pairs, lambda_max)
        return LocalModes(chosen.eigenvalues, chosen.eigenvectors, len(pairs), "dense")

    shift = certified_shift(pencil, candidate_shifts(ops, kind))
    rank = int(np.count_nonzero(ops.weights))
    expected = count_below(pencil, lambda_max)
    if expected is not None:
        # a few extra pairs so the largest one certifies the threshold
        count = min(expected + max(5, expected // 10), rank)
    else:
        count = min(max(start_count, 20), rank)
    while True:
        pairs = solve_pencil_shift_invert(pencil, count, shift, where=where)
        if pairs.eigenvalues.max() >= lambda_max or count >= rank:
            break
        count = min(int(ceil(1.5 * count)), rank)
    chosen = select_modes(pairs, lambda_max)
    return LocalModes(chosen.eigenvalues, chosen.eigenvectors, len(pairs), "shift_invert")


@dataclass
class CoarseSpace:
    kind: CoarseKind
    R0_T: sp.csc_matrix
    """Coarse basis, one Euclidean-normalized column per selected mode."""
    B0: np.ndarray
    B0_fact: Factorization
    counts: np.ndarray
    selected_eigenvalues: list
    local_modes: list = field(repr=False, default_factory=list)

    @property
    def size(self):
        return self.R0_T.shape[1]

    def apply_Q0(self, r):
        """``R0^T B0^{-1} R0 r``."""
        if self.size == 0:
            return np.zeros_like(r)
        return self.R0_T @ self.B0_fact.solve(self.R0_T.T @ r)


def build_coarse_space(system, d, kind, lambda_max=0.5, method="auto",
                       dense_limit=DENSE_EIG_LIMIT, local_ops=None, modes=None):
    """Solve every subdomain pencil and form ``B0 = R0 B R0^T``.

    ``local_ops`` may hold already assembled :class:`LocalOperators`, one per
    subdomain, to share between the two kinds. ``modes`` may hold
    precomputed :class:`LocalModes` (Delta-GenEO modes do not depend on kappa).
    """
    reuse = modes
    kind = CoarseKind(kind)
    mesh = system.mesh
    rows, cols, vals = [], [], []
    counts = np.zeros(d.N, dtype=np.int64)
    selected, modes = [], []
    if reuse is not None and len(reuse) != d.N:
        reuse = None
    offset = 0
    guess = 20
    for sub in d:
        where = f"{kind.value}-GenEO subdomain {sub.id}"
        if reuse is not None:
            lm = reuse[sub.id]
        else:
            ops = local_ops[sub.id] if local_ops is not None else assemble_local(
                mesh, system.coefficient, d, sub.id, elements=system.elements
            )
            lm = compute_local_modes(ops, kind, lambda_max, method, dense_limit,
                                     start_count=2 * guess, where=where)
        m = lm.eigenvalues.size
        guess = max(m, 10)
        counts[sub.id] = m
        selected.append(lm.eigenvalues)
        modes.append(lm)
        if m:
            W = sub.pou_weights[:, None] * lm.eigenvectors
            W /= np.linalg.norm(W, axis=0)
            nz = np.nonzero(W)
            rows.append(sub.overlapping_dofs[nz[0]])
            cols.append(nz[1] + offset)
            vals.append(W[nz])
            offset += m
        log.debug("%s: %d modes (%d computed, %s)", where, m, lm.computed, lm.method)

    if offset:
        R0_T = sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(d.n_dofs, offset),
        )
        B0 = galerkin_triple_product(R0_T, system.B)
        try:
            fact = Factorization(B0, symmetric_indefinite=True, where=f"{kind.value}-GenEO B0")
        except NumericallySingular as exc:
            raise CoarseSingular(str(exc), f"{kind.value}-GenEO coarse size {offset}") from exc
    else:
        R0_T = sp.csc_matrix((d.n_dofs, 0))
        B0 = np.zeros((0, 0))
        fact = None
    return CoarseSpace(kind, R0_T, B0, fact, counts, selected, modes)


def local_grid(mesh, d, j, local_values):
    """Arrange values on subdomain ``j``'s dofs over its node bounding box.

    Global-boundary nodes carry 0; box nodes outside the extended subdomain
    are NaN.
    """
    sub = d[j]
    n = mesh.n_glob
    region_nodes = np.unique(mesh.elements[sub.elements])
    ix, iy = region_nodes % n, region_nodes // n
    x0, y0 = ix.min(), iy.min()
    grid = np.full((iy.max() - y0 + 1, ix.max() - x0 + 1), np.nan)
    grid[iy - y0, ix - x0] = 0.0
    dof_nodes = mesh.interior_nodes[sub.overlapping_dofs]
    grid[dof_nodes // n - y0, dof_nodes % n - x0] = local_values
    return grid


def export_eigenfunction(cs, d, mesh, j, l, path=None):
    """Write the ``l``-th selected eigenvector (1-based, before PoU) of subdomain ``j``."""
    lm = cs.local_modes[j]
    if not 1 <= l <= lm.eigenvalues.size:
        raise IndexOutOfRange(f"mode {l} requested, subdomain {j} has {lm.eigenvalues.size}")
    v = lm.eigenvectors[:, l - 1]
    v = v / np.abs(v).max()
    grid = local_grid(mesh, d, j, v)
    if path is not None:
        np.savetxt(path, grid, fmt="%.10g")
    return grid


def sign_changes(values, rtol=1e-8):
    """Sign changes along a line of samples, ignoring NaNs and near-zeros."""
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if v.size == 0:
        return 0
    v = v[np.abs(v) > rtol * np.abs(v).max()]
    return int(np.count_nonzero(np.diff(np.sign(v))))


def midline_sign_changes(grid):
    return sign_changes(grid[grid.shape[0] // 2])


def summary_rows(cs):
    """One row per subdomain: id, count, eigenvalues joined by spaces."""
    return [
        (j, int(cs.counts[j]), " ".join(f"{x:.12g}" for x in lam))
        for j, lam in enumerate(cs.selected_eigenvalues)
    ]
