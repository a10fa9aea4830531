"""Truncated Nonsmooth Newton Multigrid for the plasticity increment problem.

One iteration consists of

1. a nonlinear block Gauss-Seidel presmoother (exact 2x2 solves for the
   vertex displacements, then exact minimisation over each plastic block),
2. a Newton correction restricted to the plastic blocks where the
   dissipation is twice differentiable, computed by eliminating the plastic
   unknowns and applying one multigrid V-cycle to the Schur complement,
3. projection of the corrected iterate onto the domain of the dissipation,
4. a bisection line search along the projected correction.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from .assembly import FEASIBILITY_TOL, BlockSystem, IterateW, yield_scale
from .kernels import (block_gauss_seidel, block_matvec, csr_positions, line_search_2d,
                      local_minimize_2d, project_cone_2d, schur_data, truncated_blocks_2d)
from .model import NONSMOOTH_TOL, smooth_blocks
from .multigrid import GalerkinMultigrid, MultigridConfig, build_multigrid

ENERGY_SLACK = 1e-12


class MonotonicityError(AssertionError):
    """An iteration increased the energy beyond rounding."""


class FeasibilityError(AssertionError):
    """An iterate left the domain of the dissipation."""


# ---------------------------------------------------------------------------
# energy bookkeeping

def energy_from_product(system: BlockSystem, w: IterateW, Aw: IterateW, b: IterateW):
    """Energy of ``w`` given ``A w``, with a magnitude scale for rounding checks."""
    total = system.dissipation_total(w.q)
    quad = 0.5 * system.inner(w, Aw)
    lin = system.inner(b, w)
    return quad - lin + total, abs(quad) + abs(lin) + abs(total)


def check_decrease(new, old, scale, what):
    if not math.isfinite(new):
        raise FeasibilityError(f"{what}: iterate left the domain")
    if new > old + ENERGY_SLACK * scale + 1e-300:
        raise MonotonicityError(f"{what}: energy increased from {old!r} to {new!r}")


# ---------------------------------------------------------------------------
# step 1: nonlinear presmoothing

def local_plastic_solve(system: BlockSystem, u, b: IterateW) -> np.ndarray:
    """Exact minimisation over all plastic blocks for fixed displacement ``u``."""
    r = b.q - (system.CT @ u).reshape(-1, system.n_block)
    out = np.empty_like(r)
    iso = system.kind.isotropic
    beta = system.beta if iso else system.alpha
    r_eta = r[:, system.d_p] if iso else r[:, 0]
    local_minimize_2d(system.alpha, system.weight, np.ascontiguousarray(r[:, :system.d_p]),
                      beta, np.ascontiguousarray(r_eta), yield_scale(system.kind), iso, out)
    return out


def presmooth(system: BlockSystem, w: IterateW, b: IterateW, sweeps: int = 1) -> IterateW:
    """Nonlinear block Gauss-Seidel: vertex blocks first, then plastic blocks."""
    E = system.E
    u = w.u.copy()
    q = w.q
    for _ in range(sweeps):
        f = b.u - system.C @ q.ravel()
        block_gauss_seidel(E.indptr, E.indices, E.data, u, f, 1, True)
        q = local_plastic_solve(system, u, b)
    return IterateW(u, q)


# ---------------------------------------------------------------------------
# step 2: truncated linear correction

@dataclass
class InactiveSet:
    """Plastic blocks where the dissipation is twice continuously differentiable."""

    flags: np.ndarray

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.flags))

    def __len__(self):
        return len(self.flags)


def compute_inactive_set(system: BlockSystem, w: IterateW, tol: float = NONSMOOTH_TOL) -> InactiveSet:
    p = w.q[:, :system.d_p]
    eta = w.q[:, system.d_p] if system.kind.isotropic else None
    return InactiveSet(smooth_blocks(system.kind, system.basis, p, eta, tol))


@dataclass
class TruncatedSystem:
    """Newton system restricted to the inactive plastic blocks.

    ``P_tilde`` holds the plastic blocks plus dissipation Hessians on inactive
    blocks (zero on truncated ones), ``D`` their inverses (the block-diagonal
    pseudo-inverse), ``S_data`` the Schur complement ``E - C D C^T`` on the
    pattern of ``E``, and ``g1``, ``g2`` the negative truncated gradient.
    """

    system: BlockSystem
    inactive: InactiveSet
    P_tilde: np.ndarray
    D: np.ndarray
    S_data: np.ndarray
    g1: np.ndarray
    g2: np.ndarray

    def S_matrix(self):
        E = self.system.E
        return sp.csr_matrix((self.S_data, E.indices, E.indptr), shape=E.shape)

    def H_matrix(self):
        """Truncated Hessian ``[[E, C T], [T^T C^T, T^T P_tilde T]]`` (dense-free sparse)."""
        sys_ = self.system
        T = np.repeat(self.inactive.flags, sys_.n_block).astype(float)
        CT_ = sys_.C @ sp.diags(T)
        P = sp.block_diag(list(self.P_tilde), format="csr")
        return sp.bmat([[sys_.E, CT_], [CT_.T, P]], format="csr")


def local_positions(system: BlockSystem) -> np.ndarray:
    """Positions of every element's local (6 x 6) dof pairs in ``system.E.data``."""
    dofs = system.local_dofs
    nl = dofs.shape[1]
    rows = np.repeat(dofs, nl, axis=1).ravel()
    cols = np.tile(dofs, (1, nl)).ravel()
    pos = csr_positions(system.E.indptr, system.E.indices, rows, cols)
    return pos.reshape(-1, nl, nl)


def build_truncated_system(system: BlockSystem, w: IterateW, b: IterateW,
                           inactive: Optional[InactiveSet] = None,
                           positions: Optional[np.ndarray] = None,
                           smooth_grad: Optional[IterateW] = None) -> TruncatedSystem:
    """Truncated Newton system at ``w``.

    The inactive set is recomputed from ``w`` when not supplied.
    """
    if positions is None:
        positions = local_positions(system)
    if smooth_grad is None:
        smooth_grad = system.smooth_gradient(w, b)
    m, nb = system.n_elements, system.n_block
    flags = np.empty(m, dtype=bool)
    P_tilde = np.empty((m, nb, nb))
    D = np.empty((m, nb, nb))
    g2 = np.empty((m, nb))
    truncated_blocks_2d(np.ascontiguousarray(w.q), np.ascontiguousarray(smooth_grad.q),
                        system.P_diag, system.weight, yield_scale(system.kind),
                        system.kind.isotropic, NONSMOOTH_TOL, flags, P_tilde, D, g2)
    if inactive is not None:
        if not np.array_equal(inactive.flags, flags):
            raise ValueError("inactive set is inconsistent with the iterate")
    else:
        inactive = InactiveSet(flags)
    S_data = np.empty_like(system.E.data)
    schur_data(system.E.data, positions, system.local_coupling, D, flags, S_data)
    return TruncatedSystem(system, inactive, P_tilde, D, S_data, -smooth_grad.u, g2)


def schur_rhs(trunc: TruncatedSystem) -> np.ndarray:
    """``g1 - C D g2``."""
    Dg2 = np.empty_like(trunc.g2)
    block_matvec(trunc.D, trunc.g2, Dg2)
    return trunc.g1 - trunc.system.C @ Dg2.ravel()


def schur_rhs_and_solve_u(trunc: TruncatedSystem, multigrid: GalerkinMultigrid) -> np.ndarray:
    """Displacement correction from one V-cycle on the Schur complement."""
    multigrid.set_operator(trunc.S_data)
    return multigrid.vcycle(schur_rhs(trunc))


def recover_p_correction(trunc: TruncatedSystem, u_corr) -> np.ndarray:
    """Plastic correction ``D (g2 - C^T u)``; zero on truncated blocks."""
    sys_ = trunc.system
    r = trunc.g2 - (sys_.CT @ u_corr).reshape(-1, sys_.n_block)
    c = np.empty_like(r)
    block_matvec(trunc.D, r, c)
    return c


# ---------------------------------------------------------------------------
# steps 3 and 4

def project_correction(system: BlockSystem, w: IterateW, c: IterateW) -> IterateW:
    """Correction towards the projection of ``w + c`` onto the domain."""
    if not system.kind.isotropic:
        return c
    target = w.q + c.q
    proj = np.empty_like(target)
    project_cone_2d(target, yield_scale(system.kind), proj)
    return IterateW(c.u, proj - w.q)


def line_search(system: BlockSystem, w: IterateW, b: IterateW, direction: IterateW,
                smooth_grad: Optional[IterateW] = None, A_dir: Optional[IterateW] = None,
                rho_init: float = 2.0, max_bisect: int = 100) -> float:
    """Damping factor minimising ``rho -> L(w + rho direction)`` up to bisection accuracy."""
    if smooth_grad is None:
        smooth_grad = system.smooth_gradient(w, b)
    if A_dir is None:
        A_dir = system.apply_A(direction)
    a0 = system.inner(smooth_grad, direction)
    a1 = system.inner(direction, A_dir)
    if a1 <= 0.0 and not np.any(direction.q) and not np.any(direction.u):
        return 0.0
    return float(line_search_2d(a0, a1, w.q, direction.q, system.weight,
                                yield_scale(system.kind), system.kind.isotropic,
                                rho_init, max_bisect, FEASIBILITY_TOL))


# ---------------------------------------------------------------------------
# driver

@dataclass
class IterationRecord:
    iteration: int
    energy: float
    corr_norm: float
    rho: float
    inactive: int
    wall_ms: float
    err: float = math.nan


@dataclass
class SolveReport:
    """Per-iteration history of one increment solve."""

    solver: str
    records: List[IterationRecord] = field(default_factory=list)
    converged: bool = False
    history: Optional[List[IterateW]] = None
    linear_solver: str = ""

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def wall_ms(self) -> float:
        return float(sum(r.wall_ms for r in self.records))

    def compute_errors(self, system: BlockSystem, reference: IterateW, ref_tol: float) -> Optional[int]:
        """Fill ``err`` from stored iterates; return iterations needed to reach ``ref_tol``."""
        if self.history is None:
            return None
        hit = None
        for rec, w in zip(self.records, self.history):
            rec.err = system.error_norm(w - reference)
            if hit is None and rec.err < ref_tol:
                hit = rec.iteration
        return hit


class TNNMGSolver:
    """TNNMG increment solver bound to a system and a multigrid hierarchy.

    Parameters
    ----------
    system : BlockSystem
        Finest-level problem.
    hierarchy : MeshHierarchy, optional
        Nested meshes ending with ``system.mesh``.  Without one, the
        Schur complement is solved exactly by the coarse solver.
    config : MultigridConfig, optional
    check : bool
        Assert energy monotonicity and feasibility at every iteration.
    """

    name = "tnnmg"

    def __init__(self, system: BlockSystem, hierarchy=None, config: Optional[MultigridConfig] = None,
                 check: bool = True):
        self.system = system
        self.config = config or MultigridConfig()
        if hierarchy is None:
            self.multigrid = GalerkinMultigrid(system.E.indptr, system.E.indices, [],
                                               [system.dirichlet_mask], self.config)
        else:
            if hierarchy.finest.n_vertices != system.mesh.n_vertices:
                raise ValueError("hierarchy does not end with the system mesh")
            self.multigrid = build_multigrid(hierarchy, system.E, self.config)
        self.positions = local_positions(system)
        self.check = check

    def step(self, w: IterateW, b: IterateW, Aw: IterateW, energy: float):
        """One TNNMG iteration; returns ``(w_new, Aw_new, energy_new, info)``."""
        sys_ = self.system
        w_half = presmooth(sys_, w, b)
        Aw_half = sys_.apply_A(w_half)
        e_half, scale = energy_from_product(sys_, w_half, Aw_half, b)
        if self.check:
            check_decrease(e_half, energy, scale, "presmoother")

        grad = IterateW(Aw_half.u - b.u, Aw_half.q - b.q)
        trunc = build_truncated_system(sys_, w_half, b, None, self.positions, grad)
        cu = schur_rhs_and_solve_u(trunc, self.multigrid)
        cq = recover_p_correction(trunc, cu)
        c = project_correction(sys_, w_half, IterateW(cu, cq))

        Ac = sys_.apply_A(c)
        rho = line_search(sys_, w_half, b, c, grad, Ac)
        w_new = w_half.axpy(rho, c)
        Aw_new = sys_.apply_A(w_new)
        e_new, scale = energy_from_product(sys_, w_new, Aw_new, b)
        if self.check:
            check_decrease(e_new, e_half, scale, "line search")
        d = w_new - w
        corr = math.sqrt(max(sys_.inner(d, Aw_new - Aw), 0.0))
        return w_new, Aw_new, e_new, (corr, rho, trunc.inactive.count)

    def solve(self, b: IterateW, w0: Optional[IterateW] = None, tol: float = 1e-7,
              max_iter: int = 500, keep_history: bool = False):
        """Iterate until the energy norm of the iterate change is below ``tol``."""
        if tol <= 0:
            raise ValueError("tol must be positive")
        sys_ = self.system
        w = sys_.zero() if w0 is None else w0.copy()
        Aw = sys_.apply_A(w)
        energy, _ = energy_from_product(sys_, w, Aw, b)
        if not math.isfinite(energy):
            raise FeasibilityError("initial iterate is outside the domain")
        report = SolveReport(self.name, history=[] if keep_history else None,
                             linear_solver=f"multigrid V({self.config.pre_smooth},{self.config.post_smooth})")
        for it in range(1, max_iter + 1):
            t0 = time.perf_counter()
            w, Aw, energy, (corr, rho, n_inactive) = self.step(w, b, Aw, energy)
            wall = 1e3 * (time.perf_counter() - t0)
            report.records.append(IterationRecord(it, energy, corr, rho, n_inactive, wall))
            if keep_history:
                report.history.append(w.copy())
            if corr < tol:
                report.converged = True
                break
        return w, report


def tnnmg_step(solver: TNNMGSolver, w: IterateW, b: IterateW) -> IterateW:
    """Single iteration starting from ``w`` (convenience wrapper)."""
    Aw = solver.system.apply_A(w)
    energy, _ = energy_from_product(solver.system, w, Aw, b)
    return solver.step(w, b, Aw, energy)[0]


def solve_increment(system: BlockSystem, b: IterateW, w0: Optional[IterateW] = None,
                    tol: float = 1e-7, hierarchy=None, config: Optional[MultigridConfig] = None,
                    max_iter: int = 500, keep_history: bool = False):
    """Minimise the increment functional with TNNMG; returns ``(w, report)``."""
    solver = TNNMGSolver(system, hierarchy, config)
    return solver.solve(b, w0, tol, max_iter, keep_history)
