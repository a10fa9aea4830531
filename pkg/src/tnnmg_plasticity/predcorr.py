"""Predictor-corrector baseline with a consistent tangent predictor.

Each iteration solves a Newton-type system in which plastic blocks with
``p = 0`` (and blocks where the dissipation is not twice differentiable)
are frozen, damps the correction with the shared line search, and then
minimises exactly over every plastic block with the displacement fixed.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .assembly import BlockSystem, IterateW
from .kernels import csr_positions
from .model import NONSMOOTH_TOL, block_dissipation_gradient, block_dissipation_hessian, smooth_blocks
from .tnnmg import (IterationRecord, SolveReport, check_decrease, energy_from_product,
                    line_search, local_plastic_solve)


class FactorizationError(RuntimeError):
    pass


@dataclass
class SemiTruncatedSystem:
    """``H_pc = A + diag(Hessians on unfrozen blocks)`` and the matching gradient ``G``.

    ``frozen`` flags plastic blocks whose correction is constrained to zero.
    """

    H_pc: sp.csr_matrix
    G: np.ndarray
    frozen: np.ndarray

    def free_dofs(self, n_u: int, n_block: int) -> np.ndarray:
        q_free = np.repeat(~self.frozen, n_block)
        return np.concatenate([np.ones(n_u, dtype=bool), q_free])


class TangentPattern:
    """Fixed sparsity pattern of ``H_pc``: that of ``A`` plus full plastic blocks."""

    def __init__(self, system: BlockSystem):
        nb, m, n_u = system.n_block, system.n_elements, system.n_u
        elem = np.repeat(np.arange(m), nb * nb)
        rows = n_u + nb * elem + np.tile(np.repeat(np.arange(nb), nb), m)
        cols = n_u + nb * elem + np.tile(np.tile(np.arange(nb), nb), m)
        A = system.A.tocoo()
        pattern = sp.csr_matrix((np.ones(A.nnz + len(rows)),
                                 (np.concatenate([A.row, rows]), np.concatenate([A.col, cols]))),
                                shape=A.shape)
        pattern.sort_indices()
        self.shape = A.shape
        self.indptr = pattern.indptr.astype(np.int64)
        self.indices = pattern.indices.astype(np.int64)
        self.rows = np.repeat(np.arange(A.shape[0]), np.diff(self.indptr))
        self.diag = self.rows == self.indices
        self.base = np.zeros(len(self.indices))
        np.add.at(self.base, self._pos(A.row, A.col), A.data)
        self.block_pos = self._pos(rows, cols).reshape(m, nb, nb)

    def _pos(self, r, c):
        return csr_positions(self.indptr, self.indices, np.asarray(r, dtype=np.int64),
                             np.asarray(c, dtype=np.int64))

    def matrix(self, data, fmt="csr"):
        cls = sp.csr_matrix if fmt == "csr" else sp.csc_matrix
        return cls((data, self.indices, self.indptr), shape=self.shape)


def build_semi_truncated(system: BlockSystem, w: IterateW, b: IterateW,
                         smooth_grad: Optional[IterateW] = None,
                         pattern: Optional[TangentPattern] = None) -> SemiTruncatedSystem:
    if smooth_grad is None:
        smooth_grad = system.smooth_gradient(w, b)
    if pattern is None:
        pattern = TangentPattern(system)
    dp = system.d_p
    p = w.q[:, :dp]
    eta = w.q[:, dp] if system.kind.isotropic else None
    frozen = ~smooth_blocks(system.kind, system.basis, p, eta, NONSMOOTH_TOL)
    live = np.flatnonzero(~frozen)
    Gq = smooth_grad.q.copy()
    data = pattern.base.copy()
    if len(live):
        weight = system.areas[live] * system.params.sigma_c
        Gq[live, :dp] += block_dissipation_gradient(system.kind, system.basis, weight, p[live])
        hess = block_dissipation_hessian(system.kind, system.basis, weight, p[live])
        data[pattern.block_pos[live, :dp, :dp].ravel()] += hess.ravel()
    G = np.concatenate([smooth_grad.u, Gq.ravel()])
    return SemiTruncatedSystem(pattern.matrix(data), G, frozen)


def tangent_predictor(system: BlockSystem, w: IterateW, b: IterateW,
                      smooth_grad: Optional[IterateW] = None,
                      pattern: Optional[TangentPattern] = None) -> IterateW:
    """Solve ``H_pc c = -G`` exactly with the frozen blocks held at zero.

    Frozen unknowns are removed by symmetric elimination (unit rows and
    columns, zero right-hand side) before a sparse LU factorisation.
    """
    if pattern is None:
        pattern = TangentPattern(system)
    semi = build_semi_truncated(system, w, b, smooth_grad, pattern)
    fixed = ~semi.free_dofs(system.n_u, system.n_block)
    data = semi.H_pc.data.copy()
    hit = fixed[pattern.rows] | fixed[pattern.indices]
    data[hit] = 0.0
    data[hit & pattern.diag] = 1.0
    rhs = -semi.G
    rhs[fixed] = 0.0
    # the matrix is symmetric, so its CSR arrays are also valid CSC arrays
    H = pattern.matrix(data, fmt="csc")
    try:
        lu = sla.splu(H, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise FactorizationError(f"tangent factorisation failed: {exc}") from exc
    c = lu.solve(rhs)
    c[fixed] = 0.0
    return IterateW.from_flat(c, system.n_u, system.n_block)


def corrector(system: BlockSystem, w: IterateW, b: IterateW) -> IterateW:
    """Exact minimisation over every plastic block with the displacement fixed."""
    return IterateW(w.u.copy(), local_plastic_solve(system, w.u, b))


class PredictorCorrectorSolver:
    """Predictor-corrector increment solver with the same stopping rule as TNNMG."""

    name = "predcorr"

    def __init__(self, system: BlockSystem, check: bool = True):
        self.system = system
        self.check = check
        self.pattern = TangentPattern(system)

    def step(self, w: IterateW, b: IterateW, Aw: IterateW, energy: float):
        sys_ = self.system
        grad = IterateW(Aw.u - b.u, Aw.q - b.q)
        c = tangent_predictor(sys_, w, b, grad, self.pattern)
        rho = line_search(sys_, w, b, c, grad)
        w_half = w.axpy(rho, c)
        Aw_half = sys_.apply_A(w_half)
        e_half, scale = energy_from_product(sys_, w_half, Aw_half, b)
        if self.check:
            check_decrease(e_half, energy, scale, "predictor")
        w_new = corrector(sys_, w_half, b)
        Aw_new = sys_.apply_A(w_new)
        e_new, scale = energy_from_product(sys_, w_new, Aw_new, b)
        if self.check:
            check_decrease(e_new, e_half, scale, "corrector")
        d = w_new - w
        corr = math.sqrt(max(sys_.inner(d, Aw_new - Aw), 0.0))
        n_live = int(np.count_nonzero(np.linalg.norm(w_new.q[:, :sys_.d_p], axis=1) >= NONSMOOTH_TOL))
        return w_new, Aw_new, e_new, (corr, rho, n_live)

    def solve(self, b: IterateW, w0: Optional[IterateW] = None, tol: float = 1e-7,
              max_iter: int = 500, keep_history: bool = False):
        if tol <= 0:
            raise ValueError("tol must be positive")
        sys_ = self.system
        w = sys_.zero() if w0 is None else w0.copy()
        Aw = sys_.apply_A(w)
        energy, _ = energy_from_product(sys_, w, Aw, b)
        report = SolveReport(self.name, history=[] if keep_history else None,
                             linear_solver="sparse LU (SuperLU)")
        for it in range(1, max_iter + 1):
            t0 = time.perf_counter()
            w, Aw, energy, (corr, rho, n_live) = self.step(w, b, Aw, energy)
            wall = 1e3 * (time.perf_counter() - t0)
            report.records.append(IterationRecord(it, energy, corr, rho, n_live, wall))
            if keep_history:
                report.history.append(w.copy())
            if corr < tol:
                report.converged = True
                break
        return w, report


def pc_solve_increment(system: BlockSystem, b: IterateW, w0: Optional[IterateW] = None,
                       tol: float = 1e-7, max_iter: int = 500, keep_history: bool = False):
    """Minimise the increment functional with the predictor-corrector method."""
    return PredictorCorrectorSolver(system).solve(b, w0, tol, max_iter, keep_history)
