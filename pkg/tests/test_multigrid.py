import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from tnnmg_plasticity.assembly import dirichlet_mask
from tnnmg_plasticity.multigrid import (BandedCholesky, GalerkinMultigrid, MultigridConfig,
                                        build_multigrid, galerkin_map, vector_prolongation)


def test_config_validation():
    MultigridConfig()
    with pytest.raises(ValueError):
        MultigridConfig(pre_smooth=0)
    with pytest.raises(ValueError):
        MultigridConfig(cycle="W")
    with pytest.raises(ValueError):
        MultigridConfig(coarse_solver="amg")


def test_vector_prolongation_masks(hierarchies):
    h = hierarchies(2)
    fm, cm = dirichlet_mask(h.levels[1]), dirichlet_mask(h.levels[0])
    P = vector_prolongation(h.prolongations[0], fm, cm)
    assert P.shape == (2 * h.levels[1].n_vertices, 2 * h.levels[0].n_vertices)
    assert abs(P[fm]).sum() == 0
    assert abs(P[:, cm]).sum() == 0
    # free fine rows away from constrained parents still sum to one
    full = sp.kron(h.prolongations[0], sp.identity(2), format="csr")
    rows = np.flatnonzero(~fm & (abs(full[:, cm]).sum(axis=1).A1 == 0))
    assert np.allclose(P[rows].sum(axis=1), 1.0)


def test_galerkin_map_matches_triple_product(systems, hierarchies):
    S = systems(2)
    h = hierarchies(2)
    fm, cm = dirichlet_mask(h.levels[1]), dirichlet_mask(h.levels[0])
    P = vector_prolongation(h.prolongations[0], fm, cm)
    E = S.E
    T, cip, cix, dpos = galerkin_map(E.indptr, E.indices, P, cm)
    data = T @ E.data
    data[dpos] = 1.0
    Ac = sp.csr_matrix((data, cix, cip), shape=(P.shape[1],) * 2).toarray()
    ref = (P.T @ E @ P).toarray()
    ref[cm, cm] = 1.0
    assert np.allclose(Ac, ref, atol=1e-9 * abs(ref).max())


def test_banded_cholesky_solves(systems, rng):
    E = systems(2).E
    chol = BandedCholesky(E.indptr, E.indices)
    chol.factor(E.data)
    f = rng.standard_normal(E.shape[0])
    assert np.allclose(chol.solve(f), sla.spsolve(E.tocsc(), f))
    assert chol.bandwidth < E.shape[0] // 4


def test_single_level_vcycle_is_exact(systems, hierarchies, rng):
    S = systems(1)
    mg = build_multigrid(hierarchies(1), S.E)
    mg.set_operator(S.E.data)
    f = rng.standard_normal(S.n_u)
    assert np.allclose(mg.vcycle(f), sla.spsolve(S.E.tocsc(), f), rtol=1e-10)


def test_vcycle_iterates_to_exact_solution(systems, hierarchies, rng):
    S = systems(3)
    mg = build_multigrid(hierarchies(3), S.E)
    mg.set_operator(S.E.data)
    f = S.unit_load * 100.0
    x = mg.solve(f, tol=1e-13)
    ref = sla.spsolve(S.E.tocsc(), f)
    assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref)


@pytest.mark.parametrize("level", [2, 3, 4])
def test_vcycle_contracts(systems, hierarchies, level, rng):
    S = systems(level)
    mg = build_multigrid(hierarchies(level), S.E)
    mg.set_operator(S.E.data)
    E = S.E
    x_true = rng.standard_normal(S.n_u)
    x_true[S.dirichlet_mask] = 0.0
    f = E @ x_true
    x = np.zeros_like(f)
    errs = []
    for _ in range(6):
        x += mg.vcycle(f - E @ x)
        e = x - x_true
        errs.append(np.sqrt(e @ (E @ e)))
    rate = (errs[-1] / errs[1]) ** (1 / 4)
    assert rate < 0.5


def test_vcycle_is_linear_and_symmetric(systems, hierarchies, rng):
    S = systems(2)
    mg = build_multigrid(hierarchies(2), S.E)
    mg.set_operator(S.E.data)
    a, b = rng.standard_normal((2, S.n_u))
    assert np.allclose(mg.vcycle(2 * a + b), 2 * mg.vcycle(a) + mg.vcycle(b))
    assert np.isclose(a @ mg.vcycle(b), b @ mg.vcycle(a), rtol=1e-9)


def test_operator_update_reuses_pattern(systems, hierarchies):
    S = systems(2)
    mg = build_multigrid(hierarchies(2), S.E)
    mg.set_operator(S.E.data)
    c1 = mg.matrix(0).toarray()
    mg.set_operator(2.0 * S.E.data)
    c2 = mg.matrix(0).toarray()
    free = ~np.isclose(np.diag(c1), 1.0)
    assert np.allclose(c2[free][:, free], 2.0 * c1[free][:, free])
    assert isinstance(mg, GalerkinMultigrid) and mg.n_levels == 2 and mg.n_fine == S.n_u
