import math

import numpy as np
import pytest
import scipy.io
import scipy.sparse.linalg as sla

from conftest import KINDS, kind_id, params_for
from tnnmg_plasticity.assembly import (BlockSystem, IterateW, assemble_E, assemble_rhs,
                                       dirichlet_mask, element_stiffness, eval_L, surface_load,
                                       yield_scale)
from tnnmg_plasticity.mesh import DIRICHLET_X, DIRICHLET_Y, benchmark_coarse_mesh, element_geometry
from tnnmg_plasticity.model import BENCHMARK_PARAMS, VON_MISES, DissipationKind, MaterialParams


def voigt_stiffness(x, lam, mu):
    """Textbook CST stiffness with strain (e_xx, e_yy, 2 e_xy) and dof order (u0x, u0y, ...)."""
    (x1, y1), (x2, y2), (x3, y3) = x
    area2 = (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1)
    b = np.array([y2 - y3, y3 - y1, y1 - y2]) / area2
    c = np.array([x3 - x2, x1 - x3, x2 - x1]) / area2
    B = np.zeros((3, 6))
    B[0, 0::2] = b
    B[1, 1::2] = c
    B[2, 0::2] = c
    B[2, 1::2] = b
    D = np.array([[lam + 2 * mu, lam, 0], [lam, lam + 2 * mu, 0], [0, 0, mu]])
    return 0.5 * area2 * B.T @ D @ B


def test_element_stiffness_matches_voigt_formula(rng):
    params = MaterialParams(lam=3.0, mu=2.0, sigma_c=1.0)
    for _ in range(10):
        x = rng.standard_normal((3, 2))
        e1, e2 = x[1] - x[0], x[2] - x[0]
        if e1[0] * e2[1] - e1[1] * e2[0] < 0:
            x = x[[0, 2, 1]]
        areas, grads = element_geometry(x, np.array([[0, 1, 2]]))
        K = element_stiffness(areas, grads, params)[0]
        assert np.allclose(K, voigt_stiffness(x, 3.0, 2.0))


def test_free_stiffness_has_rigid_body_kernel():
    mesh = benchmark_coarse_mesh()
    E = assemble_E(mesh, BENCHMARK_PARAMS)
    x = mesh.vertices
    modes = [np.tile([1.0, 0.0], mesh.n_vertices), np.tile([0.0, 1.0], mesh.n_vertices),
             np.column_stack([-x[:, 1], x[:, 0]]).ravel()]
    for v in modes:
        assert np.linalg.norm(E @ v) < 1e-6 * np.linalg.norm(E.data)
    assert abs(E - E.T).max() < 1e-6


def test_dirichlet_elimination(systems):
    S = systems(1)
    mesh = S.mesh
    mask = dirichlet_mask(mesh)
    assert np.all(mask[2 * mesh.marked_vertices(DIRICHLET_X)])
    assert np.all(mask[2 * mesh.marked_vertices(DIRICHLET_Y) + 1])
    assert mask.sum() == len(mesh.marked_vertices(DIRICHLET_X)) + len(mesh.marked_vertices(DIRICHLET_Y))
    E = S.E.toarray()
    idx = np.flatnonzero(mask)
    assert np.allclose(E[idx][:, idx], np.eye(len(idx)))
    assert np.all(E[idx][:, ~mask] == 0) and np.all(E[~mask][:, idx] == 0)
    assert np.all(S.C.toarray()[idx] == 0)
    assert np.all(S.unit_load[idx] == 0)


def test_surface_load_total():
    mesh = benchmark_coarse_mesh()
    f = surface_load(mesh)
    assert np.isclose(f[1::2].sum(), 10.0)
    assert np.all(f[0::2] == 0)
    assert np.all(f[1::2] >= 0)


def _energy_oracle(S, w):
    """Elementwise 1/2 (e - p):C(e - p) + k1/2 |p|^2 + k2/2 eta^2 with trace-free p."""
    lam, mu, k1, k2 = S.params.lam, S.params.mu, S.params.k1, S.params.k2
    U = w.u.reshape(-1, 2)[S.mesh.triangles]              # (m, 3, 2)
    gradu = np.einsum("eai,eaj->eij", U, S.grads)         # du_i/dx_j
    eps = 0.5 * (gradu + gradu.transpose(0, 2, 1))
    P = np.einsum("el,lij->eij", w.q[:, :S.d_p], S.basis.matrices)
    r = eps - P
    dens = 0.5 * lam * np.trace(r, axis1=1, axis2=2) ** 2 + mu * np.sum(r * r, axis=(1, 2))
    dens += 0.5 * k1 * np.sum(P * P, axis=(1, 2))
    if S.kind.isotropic:
        dens += 0.5 * k2 * w.q[:, S.d_p] ** 2
    return float(np.sum(S.areas * dens))


def _random_iterate(S, rng, feasible=True):
    w = IterateW(1e-3 * rng.standard_normal(S.n_u), 1e-3 * rng.standard_normal((S.n_elements, S.n_block)))
    w.u[S.dirichlet_mask] = 0.0
    if S.kind.isotropic and feasible:
        w.q[:, S.d_p] = yield_scale(S.kind) * np.linalg.norm(w.q[:, :S.d_p], axis=1) + 1e-4
    return w


@pytest.mark.parametrize("kind", KINDS, ids=kind_id)
def test_quadratic_form_matches_continuum_energy(systems, kind, rng):
    S = systems(1, kind)
    for _ in range(3):
        w = _random_iterate(S, rng)
        assert np.isclose(0.5 * S.inner(w, S.apply_A(w)), _energy_oracle(S, w), rtol=1e-10)


@pytest.mark.parametrize("kind", KINDS, ids=kind_id)
def test_block_operator_matches_sparse_matrix(systems, kind, rng):
    S = systems(2, kind)
    w = _random_iterate(S, rng, feasible=False)
    assert np.allclose(S.apply_A(w).flat(), S.A @ w.flat(), rtol=1e-12, atol=1e-12 * abs(S.A).max())
    assert abs(S.A - S.A.T).max() <= 1e-14 * abs(S.A).max()


def test_increment_matrix_is_positive_definite(systems):
    S = systems(1, KINDS[2])
    lam = sla.eigsh(S.A.tocsc(), k=1, sigma=0, which="LM", return_eigenvectors=False)
    assert lam[0] > 0


@pytest.mark.parametrize("kind", KINDS, ids=kind_id)
def test_smooth_gradient_matches_finite_differences(systems, kind, rng):
    S = systems(1, kind)
    w = _random_iterate(S, rng)
    b = S.rhs(300.0)
    zero_diss = IterateW(w.u, w.q)
    g = S.smooth_gradient(w, b)
    d = _random_iterate(S, rng, feasible=False)
    h = 1e-3
    quad = lambda v: 0.5 * S.inner(v, S.apply_A(v)) - S.inner(b, v)
    fd = (quad(zero_diss.axpy(h, d)) - quad(zero_diss.axpy(-h, d))) / (2 * h)
    assert np.isclose(fd, S.inner(g, d), rtol=1e-7)


@pytest.mark.parametrize("kind", KINDS, ids=kind_id)
def test_energy_is_convex_along_segments(systems, kind, rng):
    S = systems(1, kind)
    b = S.rhs(400.0)
    for _ in range(5):
        v, w = _random_iterate(S, rng), _random_iterate(S, rng)
        t = rng.uniform()
        mid = v.scaled(1 - t) + w.scaled(t)
        assert S.energy(mid, b) <= (1 - t) * S.energy(v, b) + t * S.energy(w, b) + 1e-12


def test_dissipation_total_and_domain(systems, rng):
    S = systems(1, KINDS[2])
    w = _random_iterate(S, rng)
    assert np.isclose(S.dissipation_total(w.q), S.dissipation_terms(w.q).sum())
    w.q[3, S.d_p] = -1.0
    assert S.dissipation_total(w.q) == math.inf
    assert eval_L(S, w, S.rhs(1.0)) == math.inf
    assert np.isinf(S.dissipation_terms(w.q)[3])


def test_rhs_subtracts_previous_state(systems, rng):
    S = systems(1)
    w = _random_iterate(S, rng)
    b = assemble_rhs(S, w, 200.0)
    ref = S.load(200.0).flat() - S.A @ w.flat()
    ref[:S.n_u][S.dirichlet_mask] = 0.0
    assert np.allclose(b.flat(), ref)


def test_error_norm_of_constant_field(systems):
    S = systems(2)
    d = S.zero()
    d.u[0::2] = 1.0
    assert np.isclose(d.u @ d.u, S.n_u / 2)
    assert np.isclose(S.error_norm(d) ** 2, S.areas.sum(), rtol=1e-12)
    d = S.zero()
    d.q[:, 0] = 2.0
    assert np.isclose(S.error_norm(d) ** 2, 4.0 * S.areas.sum())


def test_iterate_arithmetic(rng):
    a = IterateW(rng.standard_normal(4), rng.standard_normal((2, 3)))
    b = IterateW(rng.standard_normal(4), rng.standard_normal((2, 3)))
    assert np.allclose((a + b - b).flat(), a.flat())
    assert np.allclose(a.axpy(2.0, b).flat(), a.flat() + 2 * b.flat())
    assert np.allclose(IterateW.from_flat(a.flat(), 4, 3).q, a.q)
    c = a.copy()
    c.u[0] += 1
    assert c.u[0] != a.u[0]


def test_isotropic_requires_k2(hierarchies):
    with pytest.raises(ValueError):
        BlockSystem(hierarchies(1).finest, BENCHMARK_PARAMS, DissipationKind(VON_MISES, True))


def test_matrix_market_dump(systems, tmp_path):
    S = systems(1)
    paths = S.dump_matrix_market(tmp_path)
    assert [p.name for p in paths] == ["E.mtx", "C.mtx", "A.mtx"]
    A = scipy.io.mmread(str(paths[2])).tocsr()
    assert abs(A - S.A).max() < 1e-6 * abs(S.A).max()


@pytest.mark.parametrize("kind", KINDS, ids=kind_id)
def test_block_sizes(systems, kind):
    S = systems(1, kind)
    assert S.n_block == 2 + int(kind.isotropic)
    assert S.n_dofs == S.n_u + S.n_block * S.n_elements
    assert S.params == params_for(kind)
