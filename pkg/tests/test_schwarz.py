import numpy as np
import pytest
import scipy.sparse as sp

from geneo_ddm.coarse import CoarseKind, build_coarse_space
from geneo_ddm.decomposition import build_decomposition
from geneo_ddm.errors import GeneoError, SubdomainSingular
from geneo_ddm.krylov import GmresConfig, gmres
from geneo_ddm.problem import CoefficientField, Profile, assemble, build_mesh
from geneo_ddm.schwarz import (
    CoarseVariant,
    ExactPreconditioner,
    LocalVariant,
    PrecondConfig,
    build_preconditioner,
    factorize_local,
)


def problem(n=31, N=9, kappa=50.0, profile=Profile.ALTERNATING, a_max=10.0):
    mesh = build_mesh(n)
    system = assemble(mesh, CoefficientField(profile, a_max, kappa))
    return system, build_decomposition(mesh, N)


def test_single_subdomain_is_exact():
    system, d = problem(N=1)
    P = build_preconditioner(system.B, d, PrecondConfig(LocalVariant.AS, CoarseVariant.NONE))
    _, rep = gmres(system.B, system.f, P)
    assert rep.iterations == 1 and rep.converged


def test_one_level_definite_converges():
    system, d = problem(kappa=0.0)
    P = build_preconditioner(system.B, d, PrecondConfig(LocalVariant.AS, CoarseVariant.NONE))
    _, rep = gmres(system.B, system.f, P)
    assert rep.converged and rep.true_residual <= 1e-5


@pytest.mark.parametrize("local", list(LocalVariant))
@pytest.mark.parametrize("coarse", list(CoarseVariant))
def test_linear_and_zero(local, coarse, rng):
    system, d = problem()
    cs = build_coarse_space(system, d, CoarseKind.H) if coarse is not CoarseVariant.NONE else None
    P = build_preconditioner(system.B, d, PrecondConfig(local, coarse, cs))
    n = system.B.shape[0]
    assert not P(np.zeros(n)).any()
    for _ in range(10):
        u, v = rng.standard_normal(n), rng.standard_normal(n)
        a, b = rng.standard_normal(2)
        lhs = P(a * u + b * v)
        rhs = a * P(u) + b * P(v)
        assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)


@pytest.mark.parametrize("local", list(LocalVariant))
def test_deflation_solves_coarse_components(local, rng):
    system, d = problem(kappa=200.0)
    cs = build_coarse_space(system, d, CoarseKind.H)
    P = build_preconditioner(system.B, d, PrecondConfig(local, CoarseVariant.DEFLATION, cs))
    for _ in range(3):
        y = rng.standard_normal(cs.size)
        target = cs.R0_T @ y
        got = P(system.B @ target)
        assert np.linalg.norm(got - target) <= 1e-10 * np.linalg.norm(target)
        # Q0 B R0^T y = R0^T y
        assert np.linalg.norm(cs.apply_Q0(system.B @ target) - target) <= 1e-10 * np.linalg.norm(target)


def test_as_matches_dense_sum(rng):
    system, d = problem(n=20, N=4, kappa=30.0)
    B = system.B.toarray()
    n = B.shape[0]
    oracle = np.zeros((n, n))
    for sub in d:
        R = np.zeros((sub.size, n))
        R[np.arange(sub.size), sub.overlapping_dofs] = 1.0
        oracle += R.T @ np.linalg.inv(R @ B @ R.T) @ R
    P = build_preconditioner(system.B, d, PrecondConfig(LocalVariant.AS, CoarseVariant.NONE))
    for _ in range(5):
        r = rng.standard_normal(n)
        assert np.abs(P(r) - oracle @ r).max() <= 1e-12 * max(1.0, np.abs(oracle @ r).max())


def test_ras_matches_dense_sum(rng):
    system, d = problem(n=20, N=4, kappa=30.0)
    B = system.B.toarray()
    n = B.shape[0]
    oracle = np.zeros((n, n))
    for sub in d:
        R = np.zeros((sub.size, n))
        R[np.arange(sub.size), sub.overlapping_dofs] = 1.0
        oracle += R.T @ np.diag(sub.pou_weights) @ np.linalg.inv(R @ B @ R.T) @ R
    P = build_preconditioner(system.B, d, PrecondConfig(LocalVariant.RAS, CoarseVariant.NONE))
    r = rng.standard_normal(n)
    assert np.abs(P(r) - oracle @ r).max() <= 1e-12 * np.abs(oracle @ r).max()


def test_config_requires_coarse_space():
    with pytest.raises(GeneoError):
        PrecondConfig(LocalVariant.RAS, CoarseVariant.DEFLATION, None)


def test_singular_local_matrix():
    system, d = problem(n=11, N=4)
    B = sp.lil_matrix(system.B.shape)
    B.setdiag(1.0)
    B[d[0].overlapping_dofs[0], d[0].overlapping_dofs[0]] = 0.0
    with pytest.raises(SubdomainSingular):
        factorize_local(B.tocsr(), d)


def test_exact_preconditioner():
    system, _ = problem(n=20)
    _, rep = gmres(system.B, system.f, ExactPreconditioner(system.B), GmresConfig(rtol=1e-12))
    assert rep.iterations <= 2
