"""Geometric multigrid for vector-valued P1 operators on nested meshes.

Coarse operators are Galerkin products ``R A R^T`` with the P1
prolongation, masked so that constrained fine dofs receive nothing and
constrained coarse dofs contribute nothing.  The sparsity pattern of every
coarse operator depends only on the mesh hierarchy, so the triple product is
precomputed as one sparse linear map from fine to coarse matrix values.  A
new fine operator (for instance a Schur complement with a changing inactive
set) is then coarsened by a single sparse matrix-vector product.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .assembly import dirichlet_mask
from .kernels import block_gauss_seidel, csr_residual, fill_banded


@dataclass(frozen=True)
class MultigridConfig:
    """V-cycle parameters (block Gauss-Seidel smoothing, banded Cholesky coarse solve)."""

    pre_smooth: int = 3
    post_smooth: int = 3
    cycle: str = "V"
    coarse_solver: str = "cholesky"

    def __post_init__(self):
        if self.pre_smooth < 1 or self.post_smooth < 1:
            raise ValueError("smoothing counts must be at least 1")
        if self.cycle != "V":
            raise ValueError("only V-cycles are supported")
        if self.coarse_solver != "cholesky":
            raise ValueError("only the banded Cholesky coarse solver is supported")


def vector_prolongation(P_scalar, fine_mask, coarse_mask, dim=2):
    """Interleaved vector prolongation with constrained rows/columns removed."""
    P = sp.kron(P_scalar, sp.identity(dim), format="csr")
    P = sp.diags((~fine_mask).astype(float)) @ P @ sp.diags((~coarse_mask).astype(float))
    P = P.tocsr()
    P.eliminate_zeros()
    P.sort_indices()
    return P


def galerkin_map(indptr, indices, P, coarse_mask):
    """Linear map from fine matrix values to Galerkin coarse values.

    Returns ``(T, coarse_indptr, coarse_indices, dirichlet_diag_positions)``
    such that ``coarse.data = T @ fine.data`` before the constrained diagonal
    entries are set to 1.
    """
    n_f = len(indptr) - 1
    n_c = P.shape[1]
    nnz_f = indptr[-1]
    rows = np.repeat(np.arange(n_f), np.diff(indptr))
    cols = np.asarray(indices)
    fid = np.arange(nnz_f)

    # expand fine (r, s) over row r of P
    len_r = np.diff(P.indptr)[rows]
    f1 = np.repeat(fid, len_r)
    s1 = np.repeat(cols, len_r)
    start = np.repeat(P.indptr[rows], len_r)
    off = np.arange(len(f1)) - np.repeat(np.cumsum(len_r) - len_r, len_r)
    I = P.indices[start + off]
    wI = P.data[start + off]
    # expand over row s of P
    len_s = np.diff(P.indptr)[s1]
    f2 = np.repeat(f1, len_s)
    I2 = np.repeat(I, len_s)
    w2 = np.repeat(wI, len_s)
    start = np.repeat(P.indptr[s1], len_s)
    off = np.arange(len(f2)) - np.repeat(np.cumsum(len_s) - len_s, len_s)
    J = P.indices[start + off]
    w2 = w2 * P.data[start + off]

    diag = np.arange(n_c)
    keys = np.concatenate([I2 * n_c + J, diag * n_c + diag])
    ukeys = np.unique(keys)
    c_rows = ukeys // n_c
    c_cols = ukeys % n_c
    c_indptr = np.zeros(n_c + 1, dtype=np.int64)
    np.add.at(c_indptr, c_rows + 1, 1)
    c_indptr = np.cumsum(c_indptr)
    target = np.searchsorted(ukeys, I2 * n_c + J)
    T = sp.csr_matrix((w2, (target, f2)), shape=(len(ukeys), nnz_f))
    T.sum_duplicates()
    dpos = np.searchsorted(ukeys, diag[coarse_mask] * n_c + diag[coarse_mask])
    return T, c_indptr, c_cols.astype(np.int64), dpos


class BandedCholesky:
    """Exact Cholesky solver for a fixed sparsity pattern.

    The pattern is reordered by reverse Cuthill-McKee once; each
    factorisation scatters the values into LAPACK band storage.
    """

    def __init__(self, indptr, indices):
        n = len(indptr) - 1
        pattern = sp.csr_matrix((np.ones(len(indices)), indices, indptr), shape=(n, n))
        perm = reverse_cuthill_mckee(pattern, symmetric_mode=True).astype(np.int64)
        inv = np.empty(n, dtype=np.int64)
        inv[perm] = np.arange(n)
        rows = np.repeat(np.arange(n), np.diff(indptr))
        pi, pj = inv[rows], inv[np.asarray(indices)]
        lower = pi >= pj
        self.n = n
        self.perm = perm
        self.positions = np.flatnonzero(lower).astype(np.int64)
        self.band_rows = (pi - pj)[lower].astype(np.int64)
        self.band_cols = pj[lower].astype(np.int64)
        self.bandwidth = int(self.band_rows.max()) if n else 0
        self._band = np.zeros((self.bandwidth + 1, n))
        self._factor = None

    def factor(self, data):
        fill_banded(np.asarray(data, dtype=float), self.positions, self.band_rows, self.band_cols,
                    self._band)
        self._factor = scipy.linalg.cholesky_banded(self._band, lower=True, check_finite=False)

    def solve(self, f):
        x = scipy.linalg.cho_solve_banded((self._factor, True), f[self.perm], check_finite=False)
        out = np.empty_like(x)
        out[self.perm] = x
        return out


class GalerkinMultigrid:
    """V-cycle solver for operators sharing the fine pattern ``(indptr, indices)``.

    Parameters
    ----------
    indptr, indices : arrays
        CSR pattern of the finest operator (sorted indices).
    prolongations : list of sparse matrices
        Masked vector prolongations, coarse to fine; ``prolongations[l]``
        maps level ``l`` to ``l + 1``.
    masks : list of bool arrays
        Constrained dofs on each level (coarse first).
    config : MultigridConfig
    """

    def __init__(self, indptr, indices, prolongations, masks, config=None):
        self.config = config or MultigridConfig()
        self.n_levels = len(prolongations) + 1
        self.P = list(prolongations)
        self.R = [P.T.tocsr() for P in self.P]
        self.masks = list(masks)
        self.patterns = [None] * self.n_levels
        self.maps = [None] * self.n_levels
        self.patterns[-1] = (np.asarray(indptr, dtype=np.int64), np.asarray(indices, dtype=np.int64))
        for lev in range(self.n_levels - 1, 0, -1):
            ip, ix = self.patterns[lev]
            T, cip, cix, dpos = galerkin_map(ip, ix, self.P[lev - 1], self.masks[lev - 1])
            self.maps[lev] = (T, dpos)
            self.patterns[lev - 1] = (cip, cix)
        self.data = [None] * self.n_levels
        self._coarse = BandedCholesky(*self.patterns[0])

    @property
    def n_fine(self) -> int:
        return len(self.patterns[-1][0]) - 1

    def set_operator(self, data):
        """Install finest-level values and compute all coarse operators."""
        self.data[-1] = np.asarray(data, dtype=float)
        for lev in range(self.n_levels - 1, 0, -1):
            T, dpos = self.maps[lev]
            coarse = T @ self.data[lev]
            coarse[dpos] = 1.0
            self.data[lev - 1] = coarse
        self._coarse.factor(self.data[0])

    def matrix(self, level=-1):
        ip, ix = self.patterns[level]
        n = len(ip) - 1
        return sp.csr_matrix((self.data[level], ix, ip), shape=(n, n))

    def vcycle(self, f, x=None):
        """One V-cycle for ``A x = f`` (zero initial guess unless ``x`` given)."""
        return self._cycle(self.n_levels - 1, np.asarray(f, dtype=float),
                           None if x is None else np.array(x, dtype=float))

    def _cycle(self, lev, f, x):
        if lev == 0:
            return self._coarse.solve(f)
        cfg = self.config
        ip, ix = self.patterns[lev]
        data = self.data[lev]
        if x is None:
            x = np.zeros_like(f)
        block_gauss_seidel(ip, ix, data, x, f, cfg.pre_smooth, True)
        r = np.empty_like(f)
        csr_residual(ip, ix, data, x, f, r)
        xc = self._cycle(lev - 1, self.R[lev - 1] @ r, None)
        x += self.P[lev - 1] @ xc
        block_gauss_seidel(ip, ix, data, x, f, cfg.post_smooth, False)
        return x

    def solve(self, f, tol=1e-12, max_cycles=200):
        """Iterate V-cycles until the relative residual is below ``tol``."""
        A = self.matrix()
        x = np.zeros_like(f)
        nf = np.linalg.norm(f)
        if nf == 0:
            return x
        for _ in range(max_cycles):
            r = f - A @ x
            if np.linalg.norm(r) <= tol * nf:
                break
            x += self.vcycle(r)
        return x


def build_multigrid(hierarchy, fine_operator, config=None):
    """V-cycle solver on a mesh hierarchy for operators with the pattern of ``fine_operator``.

    Dirichlet masks on each level follow :func:`assembly.dirichlet_mask`.
    """
    masks = [dirichlet_mask(m) for m in hierarchy.levels]
    prolongs = [vector_prolongation(P, masks[i + 1], masks[i])
                for i, P in enumerate(hierarchy.prolongations)]
    A = fine_operator.tocsr()
    A.sort_indices()
    return GalerkinMultigrid(A.indptr, A.indices, prolongs, masks, config)
