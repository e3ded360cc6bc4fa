"""One- and two-level Schwarz preconditioners.

Local solves use ``B_j = R_j B R_j^T``, the principal submatrix of the global
matrix on the overlapping dofs of subdomain ``j``.
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse.linalg as spla

from .errors import DimensionMismatch, GeneoError, NumericallySingular, StructurallySingular, SubdomainSingular
from .linalg import Factorization


class LocalVariant(str, Enum):
    AS = "as"
    RAS = "ras"


class CoarseVariant(str, Enum):
    NONE = "none"
    ADDITIVE = "additive"
    DEFLATION = "deflation"


@dataclass
class PrecondConfig:
    local_variant: LocalVariant = LocalVariant.RAS
    coarse_variant: CoarseVariant = CoarseVariant.DEFLATION
    coarse_space: object = None

    def __post_init__(self):
        self.local_variant = LocalVariant(self.local_variant)
        self.coarse_variant = CoarseVariant(self.coarse_variant)
        if self.coarse_variant is not CoarseVariant.NONE and self.coarse_space is None:
            raise GeneoError(f"coarse variant {self.coarse_variant.value!r} needs a coarse space")


def factorize_local(B, d):
    """Factorizations of every ``B_j``, in subdomain order."""
    factors = []
    for sub in d:
        idx = sub.overlapping_dofs
        Bj = B[idx][:, idx]
        try:
            factors.append(Factorization(Bj.tocsc(), symmetric_indefinite=True, where=f"B_{sub.id}"))
        except (NumericallySingular, StructurallySingular) as exc:
            raise SubdomainSingular(f"local matrix singular: {exc}", f"subdomain {sub.id}") from exc
    return factors


class Preconditioner:
    """Applies ``M^{-1}`` for the configured local and coarse variants.

    ``Deflation`` follows ``M^{-1} = M_loc^{-1} (I - B Q0) + Q0``;
    ``Additive`` adds ``Q0`` to the one-level operator.
    """

    def __init__(self, B, d, cfg, local_factors=None):
        self.B = B
        self.d = d
        self.cfg = cfg
        self.factors = local_factors if local_factors is not None else factorize_local(B, d)
        self.coarse = cfg.coarse_space if cfg.coarse_variant is not CoarseVariant.NONE else None
        self.shape = B.shape

    @property
    def coarse_size(self):
        return 0 if self.coarse is None else self.coarse.size

    def apply_local(self, r):
        out = np.zeros_like(r, dtype=float)
        restricted = self.cfg.local_variant is LocalVariant.RAS
        for sub, fact in zip(self.d, self.factors):
            idx = sub.overlapping_dofs
            z = fact.solve(r[idx])
            if restricted:
                z *= sub.pou_weights
            out[idx] += z
        return out

    def apply_Q0(self, r):
        return self.coarse.apply_Q0(r)

    def apply(self, r):
        r = np.asarray(r, dtype=float)
        if r.shape != (self.shape[0],):
            raise DimensionMismatch(f"residual of shape {r.shape}, expected ({self.shape[0]},)")
        variant = self.cfg.coarse_variant
        if self.coarse is None or self.coarse.size == 0:
            return self.apply_local(r)
        if variant is CoarseVariant.ADDITIVE:
            return self.apply_local(r) + self.apply_Q0(r)
        z = self.apply_Q0(r)
        return self.apply_local(r - self.B @ z) + z

    __call__ = apply

    def as_operator(self):
        return spla.LinearOperator(self.shape, matvec=self.apply, dtype=float)


def build_preconditioner(B, d, cfg, local_factors=None):
    return Preconditioner(B, d, cfg, local_factors)


class ExactPreconditioner:
    """``B^{-1}`` through one global factorization; a reference point for tests."""

    coarse_size = 0

    def __init__(self, B):
        self.fact = Factorization(B.tocsc(), symmetric_indefinite=True, where="global B")
        self.shape = B.shape

    def apply(self, r):
        return self.fact.solve(r)

    __call__ = apply
