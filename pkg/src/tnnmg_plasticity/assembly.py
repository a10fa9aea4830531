"""Algebraic increment problem for P1 displacement / P0 plastic strain.

Unknowns are ordered with all displacement coefficients first (vertex-major,
``u[2 * i + k]`` is component ``k`` at vertex ``i``) followed by one block of
``n_block = d_p + h`` coefficients per element (``h = 1`` carries the
isotropic hardening variable).  The stiffness matrix has the block form::

    A = [[E,  C],
         [C^T, P]]

with ``P`` block diagonal.  All element integrands are constant, so one-point
quadrature is exact.  Homogeneous Dirichlet conditions are imposed by
symmetric elimination: constrained rows and columns of ``E`` are replaced by
unit vectors and the matching rows of ``C`` are dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.io
import scipy.sparse as sp

from .kernels import apply_block_operator, dissipation_sum
from .mesh import DIRICHLET_X, DIRICHLET_Y, NEUMANN_TOP, TriMesh
from .model import DevBasis, DissipationKind, MaterialParams, VON_MISES, dev_basis

DIM = 2
FEASIBILITY_TOL = 1e-12


def yield_scale(kind: DissipationKind) -> float:
    """Factor ``s`` with ``yield_measure(p) = s * |p|`` for 2D trace-free blocks.

    A trace-free symmetric 2x2 matrix has eigenvalues ``+-|X| / sqrt(2)``, so
    in two dimensions both dissipations are multiples of the Euclidean norm.
    """
    return 1.0 if kind.variant == VON_MISES else 1.0 / math.sqrt(2.0)


# ---------------------------------------------------------------------------
# element matrices

def element_stiffness(areas, grads, params: MaterialParams):
    """Local elasticity matrices, shape ``(m, 6, 6)`` in (vertex, component) order."""
    lam, mu = params.lam, params.mu
    gg = np.einsum("eak,ebl->eakbl", grads, grads)          # g_a,k g_b,l
    dot = np.einsum("eak,ebk->eab", grads, grads)           # g_a . g_b
    K = (lam * gg + mu * np.einsum("eab,kl->eakbl", dot, np.eye(DIM))
         + mu * np.einsum("eal,ebk->eakbl", grads, grads))
    return areas[:, None, None] * K.reshape(-1, 3 * DIM, 3 * DIM)


def element_coupling(areas, grads, params: MaterialParams, basis: DevBasis, n_block: int):
    """Local displacement/plastic couplings, shape ``(m, 6, n_block)``.

    Entry ``(a k, l)`` is ``-area * 2 mu (B_l g_a)_k``; the hardening column
    (if present) is zero.
    """
    Bg = np.einsum("lkj,eaj->eakl", basis.matrices, grads)   # (B_l g_a)_k
    out = np.zeros((len(areas), 3 * DIM, n_block))
    out[:, :, :basis.d_p] = (-2.0 * params.mu * areas)[:, None, None] * Bg.reshape(-1, 3 * DIM, basis.d_p)
    return out


def plastic_block_diagonal(areas, params: MaterialParams, d_p: int, n_block: int):
    """Diagonal of each ``P`` block, shape ``(m, n_block)``.

    Hooke's law on trace-free orthonormal basis matrices gives
    ``C B_k : B_l = 2 mu delta_kl``, so the blocks are diagonal.
    """
    diag = np.empty((len(areas), n_block))
    diag[:, :d_p] = (areas * (2.0 * params.mu + params.k1))[:, None]
    if n_block > d_p:
        diag[:, d_p] = areas * params.k2
    return diag


def scalar_stiffness_mass(mesh: TriMesh):
    """Scalar P1 stiffness and mass matrices (used for error norms)."""
    areas, grads = mesh.geometry()
    Kloc = areas[:, None, None] * np.einsum("eak,ebk->eab", grads, grads)
    Mloc = areas[:, None, None] / 12.0 * (np.ones((3, 3)) + np.eye(3))[None]
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    K = sp.csr_matrix((Kloc.ravel(), (rows, cols)), shape=(n, n))
    M = sp.csr_matrix((Mloc.ravel(), (rows, cols)), shape=(n, n))
    return K, M


def _local_dofs(triangles):
    return (DIM * triangles[:, :, None] + np.arange(DIM)[None, None, :]).reshape(-1, 3 * DIM)


def dirichlet_mask(mesh: TriMesh) -> np.ndarray:
    """Flags of constrained scalar displacement dofs (``u_1`` on DirichletX, ``u_2`` on DirichletY)."""
    mask = np.zeros(DIM * mesh.n_vertices, dtype=bool)
    mask[DIM * mesh.marked_vertices(DIRICHLET_X)] = True
    mask[DIM * mesh.marked_vertices(DIRICHLET_Y) + 1] = True
    return mask


def assemble_E(mesh: TriMesh, params: MaterialParams, dirichlet: Optional[np.ndarray] = None):
    """Displacement stiffness matrix; symmetric elimination if ``dirichlet`` is given."""
    areas, grads = mesh.geometry()
    Kloc = element_stiffness(areas, grads, params)
    dofs = _local_dofs(mesh.triangles)
    rows = np.repeat(dofs, 3 * DIM, axis=1).ravel()
    cols = np.tile(dofs, (1, 3 * DIM)).ravel()
    n = DIM * mesh.n_vertices
    E = sp.csr_matrix((Kloc.ravel(), (rows, cols)), shape=(n, n))
    E.sum_duplicates()
    E.sort_indices()
    if dirichlet is not None:
        E = apply_dirichlet(E, dirichlet)
    return E


def apply_dirichlet(E, mask):
    """Zero constrained rows and columns and put 1 on their diagonal (pattern kept)."""
    E = E.tocsr(copy=True)
    coo_rows = np.repeat(np.arange(E.shape[0]), np.diff(E.indptr))
    hit = mask[coo_rows] | mask[E.indices]
    E.data[hit] = 0.0
    E.data[hit & (coo_rows == E.indices)] = 1.0
    return E


def assemble_C(mesh: TriMesh, params: MaterialParams, basis: DevBasis, n_block: int,
               dirichlet: Optional[np.ndarray] = None):
    areas, grads = mesh.geometry()
    Cloc = element_coupling(areas, grads, params, basis, n_block)
    if dirichlet is not None:
        Cloc = Cloc * ~dirichlet[_local_dofs(mesh.triangles)][:, :, None]
    dofs = _local_dofs(mesh.triangles)
    m = mesh.n_triangles
    pcols = n_block * np.arange(m)[:, None] + np.arange(n_block)[None, :]
    rows = np.repeat(dofs, n_block, axis=1).ravel()
    cols = np.tile(pcols, (1, 3 * DIM)).ravel()
    C = sp.csr_matrix((Cloc.ravel(), (rows, cols)), shape=(DIM * mesh.n_vertices, n_block * m))
    C.sum_duplicates()
    C.sort_indices()
    return C


def assemble_P(mesh: TriMesh, params: MaterialParams, basis: DevBasis, n_block: int):
    """Block-diagonal plastic matrix as a dense array of blocks ``(m, n_block, n_block)``."""
    areas, _ = mesh.geometry()
    diag = plastic_block_diagonal(areas, params, basis.d_p, n_block)
    blocks = np.zeros((len(areas), n_block, n_block))
    idx = np.arange(n_block)
    blocks[:, idx, idx] = diag
    return blocks


def surface_load(mesh: TriMesh, marker: str = NEUMANN_TOP, traction=(0.0, 1.0)):
    """Load vector of a unit constant traction on the marked boundary edges.

    The trapezoidal rule is exact for P1 traces on straight edges: each
    endpoint receives half the edge length.
    """
    f = np.zeros(DIM * mesh.n_vertices)
    edges = mesh.boundary_edges[mesh.boundary_markers == marker]
    if len(edges) == 0:
        return f
    x = mesh.vertices
    half = 0.5 * np.linalg.norm(x[edges[:, 1]] - x[edges[:, 0]], axis=1)
    for k in range(DIM):
        if traction[k]:
            np.add.at(f, DIM * edges[:, 0] + k, traction[k] * half)
            np.add.at(f, DIM * edges[:, 1] + k, traction[k] * half)
    return f


# ---------------------------------------------------------------------------
# iterates and the assembled system

@dataclass
class IterateW:
    """Displacement coefficients ``u`` and per-element plastic blocks ``q``.

    ``q[:, :d_p]`` holds the plastic strain coordinates and ``q[:, d_p]``
    (isotropic hardening only) the hardening variable.
    """

    u: np.ndarray
    q: np.ndarray

    def copy(self) -> "IterateW":
        return IterateW(self.u.copy(), self.q.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.u, self.q.ravel()])

    @classmethod
    def from_flat(cls, v, n_u: int, n_block: int) -> "IterateW":
        v = np.asarray(v, dtype=float)
        return cls(v[:n_u].copy(), v[n_u:].reshape(-1, n_block).copy())

    def __add__(self, other: "IterateW") -> "IterateW":
        return IterateW(self.u + other.u, self.q + other.q)

    def __sub__(self, other: "IterateW") -> "IterateW":
        return IterateW(self.u - other.u, self.q - other.q)

    def scaled(self, rho: float) -> "IterateW":
        return IterateW(rho * self.u, rho * self.q)

    def axpy(self, rho: float, direction: "IterateW") -> "IterateW":
        return IterateW(self.u + rho * direction.u, self.q + rho * direction.q)


class BlockSystem:
    """Assembled increment problem on one mesh.

    Parameters
    ----------
    mesh : TriMesh
    params : MaterialParams
    kind : DissipationKind
        Yield law and hardening variant.  Isotropic hardening adds one
        coefficient per plastic block.
    """

    def __init__(self, mesh: TriMesh, params: MaterialParams, kind: DissipationKind):
        if kind.isotropic and params.k2 <= 0:
            raise ValueError("isotropic hardening requires k2 > 0")
        self.mesh = mesh
        self.params = params
        self.kind = kind
        self.basis = dev_basis(DIM)
        self.d_p = self.basis.d_p
        self.n_block = self.d_p + kind.block_size_extra
        self.areas, self.grads = mesh.geometry()
        self.dirichlet_mask = dirichlet_mask(mesh)
        self.free = ~self.dirichlet_mask
        self.n_u = DIM * mesh.n_vertices
        self.n_elements = mesh.n_triangles
        self.n_q = self.n_block * self.n_elements

        self.E = assemble_E(mesh, params, self.dirichlet_mask)
        self.C = assemble_C(mesh, params, self.basis, self.n_block, self.dirichlet_mask)
        self.CT = self.C.T.tocsr()
        self.P_blocks = assemble_P(mesh, params, self.basis, self.n_block)
        self.P_diag = plastic_block_diagonal(self.areas, params, self.d_p, self.n_block)
        self.alpha = self.P_diag[:, 0].copy()
        self.beta = self.P_diag[:, self.d_p].copy() if kind.isotropic else None
        self.weight = self.areas * params.sigma_c * yield_scale(kind)
        self.unit_load = surface_load(mesh)
        self.unit_load[self.dirichlet_mask] = 0.0
        self.local_dofs = np.ascontiguousarray(_local_dofs(mesh.triangles))
        self.local_coupling = element_coupling(self.areas, self.grads, params, self.basis, self.n_block)
        self.local_coupling *= ~self.dirichlet_mask[self.local_dofs][:, :, None]
        self._A = None
        self._error = None

    # -- sizes and containers ------------------------------------------------
    @property
    def n_dofs(self) -> int:
        return self.n_u + self.n_q

    def zero(self) -> IterateW:
        return IterateW(np.zeros(self.n_u), np.zeros((self.n_elements, self.n_block)))

    @property
    def A(self):
        """Full symmetric stiffness matrix (built on first use)."""
        if self._A is None:
            P = sp.block_diag(list(self.P_blocks), format="csr") if self.n_elements else None
            self._A = sp.bmat([[self.E, self.C], [self.CT, P]], format="csr")
        return self._A

    # -- products ----------------------------------------------------------
    def apply_A(self, w: IterateW) -> IterateW:
        out = IterateW(np.empty(self.n_u), np.empty((self.n_elements, self.n_block)))
        E = self.E
        apply_block_operator(E.indptr, E.indices, E.data, self.local_dofs, self.local_coupling,
                             self.P_diag, w.u, np.ascontiguousarray(w.q), out.u, out.q)
        return out

    def energy_norm(self, w: IterateW) -> float:
        Aw = self.apply_A(w)
        return math.sqrt(max(float(w.u @ Aw.u + np.sum(w.q * Aw.q)), 0.0))

    def inner(self, a: IterateW, b: IterateW) -> float:
        return float(a.u @ b.u + np.sum(a.q * b.q))

    # -- loads ---------------------------------------------------------------
    def load(self, load_scale: float) -> IterateW:
        return IterateW(load_scale * self.unit_load,
                        np.zeros((self.n_elements, self.n_block)))

    def rhs(self, load_scale: float, w_prev: Optional[IterateW] = None) -> IterateW:
        """``b = l(t) - A w_prev`` with Dirichlet entries removed."""
        b = self.load(load_scale)
        if w_prev is not None:
            Aw = self.apply_A(w_prev)
            b = IterateW(b.u - Aw.u, b.q - Aw.q)
            b.u[self.dirichlet_mask] = 0.0
        return b

    # -- functional ----------------------------------------------------------
    def dissipation_terms(self, q) -> np.ndarray:
        """Per-element ``area * D(B(p), eta)``, ``inf`` outside the domain.

        The hardening constraint ``m(p) <= eta`` is tested with a relative
        slack of :data:`FEASIBILITY_TOL` so that points produced by an exact
        projection onto the constraint are accepted despite rounding.
        """
        p = q[:, :self.d_p]
        m = yield_scale(self.kind) * np.linalg.norm(p, axis=1)
        val = self.areas * self.params.sigma_c * m
        if self.kind.isotropic:
            eta = q[:, self.d_p]
            ok = m <= eta + FEASIBILITY_TOL * (np.abs(eta) + m)
            val = np.where(ok, val, np.inf)
        return val

    def dissipation_total(self, q) -> float:
        """``sum_e area_e D(B(p_e), eta_e)`` (``inf`` outside the domain)."""
        return float(dissipation_sum(np.ascontiguousarray(q), self.weight, yield_scale(self.kind),
                                     self.kind.isotropic, FEASIBILITY_TOL))

    def energy(self, w: IterateW, b: IterateW) -> float:
        """Increment functional ``1/2 w.Aw - b.w + sum area D``; ``inf`` outside the domain."""
        diss = self.dissipation_total(w.q)
        if not math.isfinite(diss):
            return math.inf
        Aw = self.apply_A(w)
        return 0.5 * self.inner(w, Aw) - self.inner(b, w) + diss

    def smooth_gradient(self, w: IterateW, b: IterateW) -> IterateW:
        """Gradient ``A w - b`` of the quadratic part."""
        Aw = self.apply_A(w)
        return IterateW(Aw.u - b.u, Aw.q - b.q)

    # -- error norms -----------------------------------------------------------
    def error_norm(self, diff: IterateW) -> float:
        """Discrete ``H^1`` norm of the displacement plus ``L^2`` norm of the plastic blocks."""
        if self._error is None:
            K, M = scalar_stiffness_mass(self.mesh)
            self._error = (K + M).tocsr()
        G = self._error
        U = diff.u.reshape(-1, DIM)
        val = sum(float(U[:, k] @ (G @ U[:, k])) for k in range(DIM))
        val += float(np.sum(self.areas[:, None] * diff.q ** 2))
        return math.sqrt(max(val, 0.0))

    # -- debugging -----------------------------------------------------------
    def dump_matrix_market(self, directory) -> list:
        """Write ``E``, ``C`` and the full ``A`` in MatrixMarket coordinate format."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, mat in (("E", self.E), ("C", self.C), ("A", self.A)):
            path = directory / f"{name}.mtx"
            scipy.io.mmwrite(str(path), sp.coo_matrix(mat))
            paths.append(path)
        return paths


def eval_L(system: BlockSystem, w: IterateW, b: IterateW) -> float:
    """Extended-real value of the increment functional."""
    return system.energy(w, b)


def assemble_rhs(system: BlockSystem, w_prev: IterateW, load_scale: float) -> IterateW:
    """Right-hand side for the increment following ``w_prev`` under load ``load_scale``."""
    return system.rhs(load_scale, w_prev)

