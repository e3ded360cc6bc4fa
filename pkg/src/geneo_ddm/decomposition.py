"""Uniform square decompositions with minimal overlap and multiplicity-based PoU."""
from dataclasses import dataclass
from math import isqrt

import numpy as np

from .errors import BadSubdomainIndex, DimensionMismatch, NotPerfectSquare, SubdomainTooSmall


@dataclass
class Subdomain:
    id: int
    elements: np.ndarray
    """Mesh elements of the extended (overlapping) subdomain."""
    overlapping_dofs: np.ndarray
    """Sorted global interior dofs touched by ``elements``."""
    internal_mask: np.ndarray
    pou_weights: np.ndarray
    cell_block: tuple

    @property
    def internal_dofs(self):
        return self.overlapping_dofs[self.internal_mask]

    @property
    def size(self):
        return self.overlapping_dofs.size


@dataclass
class Decomposition:
    n_dofs: int
    subdomains: list
    multiplicities: np.ndarray

    @property
    def N(self):
        return len(self.subdomains)

    def __getitem__(self, j):
        if not 0 <= j < len(self.subdomains):
            raise BadSubdomainIndex(f"subdomain {j} not in 0..{len(self.subdomains) - 1}")
        return self.subdomains[j]

    def __iter__(self):
        return iter(self.subdomains)

    def restrict(self, j, v):
        return restrict(self, j, v)

    def extend(self, j, v_local):
        return extend(self, j, v_local)

    def apply_pou(self, j, v_local):
        return apply_pou(self, j, v_local)


def block_sizes(n_cells, n_blocks):
    """Split ``n_cells`` into ``n_blocks`` runs; leading blocks take the remainder."""
    base, rem = divmod(n_cells, n_blocks)
    sizes = np.full(n_blocks, base)
    sizes[:rem] += 1
    return np.concatenate([[0], np.cumsum(sizes)])


def build_decomposition(mesh, N):
    """``N`` square blocks of cells, each grown by every element touching it.

    Subdomains are numbered row-major from the bottom-left corner. A dof is
    internal to a subdomain when every mesh element around it belongs to the
    extended subdomain.
    """
    s = isqrt(N)
    if N < 1 or s * s != N:
        raise NotPerfectSquare(f"N = {N} is not a perfect square")
    n = mesh.n_glob
    n_cells = n - 1
    if s > n_cells:
        raise SubdomainTooSmall(f"{s} blocks per direction on {n_cells} cells")
    cuts = block_sizes(n_cells, s)

    elements = mesh.elements
    node_ix = np.arange(mesh.n_nodes) % n
    node_iy = np.arange(mesh.n_nodes) // n
    degree = np.bincount(elements.ravel(), minlength=mesh.n_nodes)
    node_to_dof = mesh.node_to_dof

    subdomains = []
    multiplicities = np.zeros(mesh.n_dofs, dtype=np.int64)
    for by in range(s):
        for bx in range(s):
            x0, x1, y0, y1 = cuts[bx], cuts[bx + 1], cuts[by], cuts[by + 1]
            in_block = (node_ix >= x0) & (node_ix <= x1) & (node_iy >= y0) & (node_iy <= y1)
            elem_mask = in_block[elements].any(axis=1)
            local_elems = np.flatnonzero(elem_mask)
            local_degree = np.bincount(elements[local_elems].ravel(), minlength=mesh.n_nodes)
            nodes = np.flatnonzero(local_degree)
            nodes = nodes[node_to_dof[nodes] >= 0]
            dofs = node_to_dof[nodes]
            internal = local_degree[nodes] == degree[nodes]
            j = len(subdomains)
            if not internal.any():
                raise SubdomainTooSmall(f"subdomain {j} has no internal dof")
            multiplicities[dofs[internal]] += 1
            subdomains.append(
                Subdomain(
                    id=j,
                    elements=local_elems,
                    overlapping_dofs=dofs,
                    internal_mask=internal,
                    pou_weights=None,
                    cell_block=(int(x0), int(x1), int(y0), int(y1)),
                )
            )
    if (multiplicities < 1).any():
        raise SubdomainTooSmall("some dofs are internal to no subdomain")
    for sub in subdomains:
        w = np.zeros(sub.size)
        w[sub.internal_mask] = 1.0 / multiplicities[sub.internal_dofs]
        sub.pou_weights = w
    return Decomposition(mesh.n_dofs, subdomains, multiplicities)


def restrict(d, j, v):
    v = np.asarray(v)
    if v.shape[0] != d.n_dofs:
        raise DimensionMismatch(f"vector of length {v.shape[0]}, expected {d.n_dofs}")
    return v[d[j].overlapping_dofs]


def extend(d, j, v_local):
    sub = d[j]
    v_local = np.asarray(v_local)
    if v_local.shape[0] != sub.size:
        raise DimensionMismatch(f"local vector of length {v_local.shape[0]}, expected {sub.size}")
    out = np.zeros((d.n_dofs,) + v_local.shape[1:], dtype=v_local.dtype)
    out[sub.overlapping_dofs] = v_local
    return out


def apply_pou(d, j, v_local):
    sub = d[j]
    v_local = np.asarray(v_local)
    if v_local.shape[0] != sub.size:
        raise DimensionMismatch(f"local vector of length {v_local.shape[0]}, expected {sub.size}")
    if v_local.ndim == 2:
        return sub.pou_weights[:, None] * v_local
    return sub.pou_weights * v_local


def subdomain_grid(d, mesh, j, mode="weights"):
    """Node grid for subdomain ``j``: PoU weights, or a 0/1 mask of its dofs."""
    sub = d[j]
    values = np.zeros(mesh.n_nodes)
    nodes = mesh.interior_nodes[sub.overlapping_dofs]
    values[nodes] = sub.pou_weights if mode == "weights" else 1.0
    return values.reshape(mesh.n_glob, mesh.n_glob)
