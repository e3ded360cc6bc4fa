"""Layered coefficient fields, the uniform P1 mesh and global assembly.

Nodes are numbered ``k = iy * n_glob + ix`` with coordinates ``(ix h, iy h)``.
Every grid cell is split along its "/" diagonal into two triangles.
"""
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import OutOfDomain, TooCoarse
from .linalg import as_csr


class Profile(str, Enum):
    HOMOGENEOUS = "homogeneous"
    INCREASING = "increasing"
    ALTERNATING = "alternating"
    DIAGONAL = "diagonal"


# Gray opacities of the ten layers (1.0 = darkest = coefficient 1).
# Horizontal profiles list layers bottom to top; the diagonal profile lists
# bands by increasing y - x, starting in the bottom-right corner.
_SHADES = {
    Profile.INCREASING: np.array([1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1]),
    Profile.ALTERNATING: np.array([1.0, 0.1, 1.0, 0.1, 1.0, 0.1, 1.0, 0.1, 1.0, 0.1]),
    Profile.DIAGONAL: np.array([1.0, 0.6, 1.0, 0.2, 1.0, 0.05, 1.0, 0.4, 1.0, 0.8]),
}


@dataclass(frozen=True)
class CoefficientField:
    """Scalar diffusion ``a(x)`` (``A = a I``) and the constant ``kappa``."""

    profile: Profile = Profile.HOMOGENEOUS
    a_max: float = 1.0
    kappa: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "profile", Profile(self.profile))

    def layer_values(self):
        """Coefficient of each of the ten layers, in the order of ``_SHADES``."""
        shades = _SHADES[self.profile]
        s_min = shades.min()
        return 1.0 + (self.a_max - 1.0) * (1.0 - shades) / (1.0 - s_min)

    def __call__(self, x, y):
        """Evaluate ``a`` at points; vectorized over array arguments."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if np.any((x < 0) | (x > 1) | (y < 0) | (y > 1)):
            raise OutOfDomain("coefficient evaluated outside the unit square")
        if self.profile is Profile.HOMOGENEOUS:
            return np.ones(np.broadcast(x, y).shape)
        if self.profile is Profile.DIAGONAL:
            # y - x in [-1, 1], ten bands of width 0.2
            layer = np.floor((y - x + 1.0) / 0.2)
        else:
            layer = np.floor(y / 0.1)
        layer = np.clip(layer, 0, 9).astype(int)
        return self.layer_values()[layer]

    def kappa_at(self, x, y):
        return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, float(self.kappa))


def evaluate_coefficient(field, point):
    return float(field(point[0], point[1]))


@dataclass(frozen=True)
class MeshGrid:
    n_glob: int

    @property
    def h(self):
        return 1.0 / (self.n_glob - 1)

    @property
    def n_nodes(self):
        return self.n_glob**2

    @cached_property
    def coordinates(self):
        t = np.arange(self.n_glob) * self.h
        X, Y = np.meshgrid(t, t)
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def elements(self):
        """(n_elem, 3) node indices; two triangles per cell, cell-major."""
        n = self.n_glob
        iy, ix = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="ij")
        sw = (iy * n + ix).ravel()
        se, nw, ne = sw + 1, sw + n, sw + n + 1
        lower = np.column_stack([sw, se, ne])
        upper = np.column_stack([sw, ne, nw])
        return np.stack([lower, upper], axis=1).reshape(-1, 3)

    @cached_property
    def is_boundary(self):
        n = self.n_glob
        ix = np.arange(self.n_nodes) % n
        iy = np.arange(self.n_nodes) // n
        return (ix == 0) | (iy == 0) | (ix == n - 1) | (iy == n - 1)

    @cached_property
    def interior_nodes(self):
        return np.flatnonzero(~self.is_boundary)

    @cached_property
    def boundary_nodes(self):
        return np.flatnonzero(self.is_boundary)

    @cached_property
    def node_to_dof(self):
        """Interior dof index of every node, -1 on the boundary."""
        out = np.full(self.n_nodes, -1, dtype=np.int64)
        out[self.interior_nodes] = np.arange(self.interior_nodes.size)
        return out

    @property
    def n_dofs(self):
        return self.interior_nodes.size

    def element_areas(self):
        p = self.coordinates[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def centroids(self):
        return self.coordinates[self.elements].mean(axis=1)


def build_mesh(n_glob):
    if n_glob < 3:
        raise TooCoarse(f"n_glob = {n_glob} leaves no interior node")
    return MeshGrid(int(n_glob))


@dataclass
class ElementMatrices:
    """Per-element P1 stiffness (coefficient included) and mass blocks."""

    stiffness: np.ndarray
    mass: np.ndarray
    kappa: np.ndarray


def element_matrices(mesh, cfield):
    p = mesh.coordinates[mesh.elements]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    area = 0.5 * det
    # gradients of the barycentric coordinates
    grads = np.empty((p.shape[0], 3, 2))
    grads[:, 1] = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    grads[:, 2] = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    grads[:, 0] = -grads[:, 1] - grads[:, 2]
    c = p.mean(axis=1)
    a = cfield(c[:, 0], c[:, 1])
    stiff = np.einsum("eik,ejk->eij", grads, grads) * (a * area)[:, None, None]
    ref_mass = (np.ones((3, 3)) + np.eye(3)) / 12.0
    mass = area[:, None, None] * ref_mass
    return ElementMatrices(stiff, mass, cfield.kappa_at(c[:, 0], c[:, 1]))


def scatter(elements, blocks, node_map, n):
    """Sum element blocks into an ``n x n`` CSR matrix.

    ``node_map`` sends mesh nodes to row indices, negative entries are dropped
    (Dirichlet elimination by deletion).
    """
    rows = node_map[elements]
    I = np.repeat(rows, 3, axis=1).ravel()
    J = np.tile(rows, (1, 3)).ravel()
    V = blocks.reshape(-1)
    keep = (I >= 0) & (J >= 0)
    return as_csr(sp.coo_matrix((V[keep], (I[keep], J[keep])), shape=(n, n)))


@dataclass
class DiscreteSystem:
    mesh: MeshGrid
    coefficient: CoefficientField
    B: sp.csr_matrix
    A_stiff: sp.csr_matrix
    mass_kappa: sp.csr_matrix
    f: np.ndarray
    elements: ElementMatrices = field(repr=False, default=None)


def assemble(mesh, cfield, f=None):
    """Assemble ``B = A_stiff - Mass_kappa`` on the interior dofs."""
    em = element_matrices(mesh, cfield)
    n = mesh.n_dofs
    A = scatter(mesh.elements, em.stiffness, mesh.node_to_dof, n)
    Mk = scatter(mesh.elements, em.mass * em.kappa[:, None, None], mesh.node_to_dof, n)
    B = as_csr(A - Mk)
    if f is None:
        f = point_source_load(mesh)
    return DiscreteSystem(mesh, cfield, B, A, Mk, f, em)


def mass_matrix(mesh):
    em = element_matrices(mesh, CoefficientField())
    return scatter(mesh.elements, em.mass, mesh.node_to_dof, mesh.n_dofs)


def point_source_load(mesh, point=(0.5, 0.5)):
    """Unit nodal load at the interior node nearest ``point``.

    Ties go to the lower grid index in each direction.
    """
    n = mesh.n_glob
    ix = min(max(int(np.ceil(point[0] / mesh.h - 0.5)), 1), n - 2)
    iy = min(max(int(np.ceil(point[1] / mesh.h - 0.5)), 1), n - 2)
    f = np.zeros(mesh.n_dofs)
    f[mesh.node_to_dof[iy * n + ix]] = 1.0
    return f


def load_vector(mesh, source):
    """Consistent P1 load ``F(v) = int f v`` for a callable ``source(x, y)``."""
    p = mesh.coordinates[mesh.elements]
    area = mesh.element_areas()
    # edge-midpoint rule, exact for quadratics
    mids = 0.5 * (p + p[:, [1, 2, 0]])
    vals = source(mids[..., 0], mids[..., 1])
    # basis values at midpoints: phi_i = 1/2 on the two edges touching node i
    contrib = np.empty((p.shape[0], 3))
    contrib[:, 0] = vals[:, 0] + vals[:, 2]
    contrib[:, 1] = vals[:, 0] + vals[:, 1]
    contrib[:, 2] = vals[:, 1] + vals[:, 2]
    contrib *= (area / 6.0)[:, None]
    rows = mesh.node_to_dof[mesh.elements].ravel()
    keep = rows >= 0
    return np.bincount(rows[keep], weights=contrib.ravel()[keep], minlength=mesh.n_dofs)


def sample_coefficient_grid(mesh, cfield):
    """Node-sampled ``a`` as an ``(n_glob, n_glob)`` array, row ``iy``."""
    xy = mesh.coordinates
    return cfield(xy[:, 0], xy[:, 1]).reshape(mesh.n_glob, mesh.n_glob)


def write_grid(path, values):
    np.savetxt(path, np.asarray(values), fmt="%.10g")
