"""Material laws for small-strain primal plasticity.

Plastic strains are trace-free symmetric matrices.  They are stored as
coefficient vectors with respect to a Frobenius-orthonormal basis of the
trace-free matrices, so Euclidean norms of coefficient vectors equal
Frobenius norms of the matrices they represent.

Two yield laws are supported, each with optional linear isotropic hardening:

* von Mises: dissipation ``sigma_c * |p|``
* Tresca: dissipation ``sigma_c * rho(p)`` with ``rho`` the spectral radius

With isotropic hardening the dissipation is ``+inf`` outside of
``{|p| <= eta}`` (resp. ``{rho(p) <= eta}``).  Infinite values are plain IEEE
``inf`` and are never replaced by large finite numbers.

Most functions come in two flavours: a single-block version operating on a
:class:`PlasticBlockState`, and a batched ``block_*`` version that works on
arrays of shape ``(n, d_p)`` and is used by the solvers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

#: Threshold below which a plastic strain is treated as zero, and below which
#: two eigenvalue magnitudes count as tied.
NONSMOOTH_TOL = 1e-10

VON_MISES = "vonmises"
TRESCA = "tresca"


@dataclass(frozen=True)
class MaterialParams:
    """Isotropic elasticity, yield stress and linear hardening moduli.

    Units are N/mm^2 throughout.  ``k2 = 0`` disables isotropic hardening.
    """

    lam: float
    mu: float
    sigma_c: float
    k1: float = 0.0
    k2: float = 0.0

    def __post_init__(self):
        if not self.lam > 0 or not self.mu > 0:
            raise ValueError("Lame parameters must be positive")
        if not self.sigma_c > 0:
            raise ValueError("yield stress must be positive")
        if self.k1 < 0 or self.k2 < 0:
            raise ValueError("hardening moduli must be nonnegative")


#: Square-with-a-hole benchmark material.
BENCHMARK_PARAMS = MaterialParams(lam=1e7, mu=6.5e6, sigma_c=450.0, k1=3e6, k2=0.0)


@dataclass(frozen=True)
class DissipationKind:
    variant: str = VON_MISES
    isotropic: bool = False

    def __post_init__(self):
        if self.variant not in (VON_MISES, TRESCA):
            raise ValueError(f"unknown yield law {self.variant!r}")

    @property
    def block_size_extra(self) -> int:
        """Number of scalar hardening unknowns per element (0 or 1)."""
        return 1 if self.isotropic else 0


@dataclass(frozen=True)
class DevBasis:
    """Orthonormal basis ``B_1..B_dp`` of the trace-free symmetric matrices."""

    d: int
    matrices: np.ndarray = field(repr=False)

    @property
    def d_p(self) -> int:
        return self.matrices.shape[0]

    def to_matrix(self, p):
        """Map coefficients ``(..., d_p)`` to matrices ``(..., d, d)``."""
        return np.einsum("...j,jkl->...kl", np.asarray(p, dtype=float), self.matrices)

    def from_matrix(self, X):
        """Frobenius products ``X : B_j``; inverse of :meth:`to_matrix` on S^d_0."""
        return np.einsum("...kl,jkl->...j", np.asarray(X, dtype=float), self.matrices)


def dev_basis(d: int) -> DevBasis:
    """Return the orthonormal trace-free basis for dimension 2 or 3."""
    s = 1.0 / math.sqrt(2.0)
    if d == 2:
        mats = [
            [[1.0, 0.0], [0.0, -1.0]],
            [[0.0, 1.0], [1.0, 0.0]],
        ]
    elif d == 3:
        r = 1.0 / math.sqrt(3.0)
        mats = [
            [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]],
            [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
            [[r, 0.0, 0.0], [0.0, r, 0.0], [0.0, 0.0, -2.0 * r]],
            [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            [[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]],
        ]
    else:
        raise ValueError(f"unsupported dimension {d}; expected 2 or 3")
    return DevBasis(d, s * np.array(mats))


def basis_for_dp(d_p: int) -> DevBasis:
    if d_p == 2:
        return dev_basis(2)
    if d_p == 5:
        return dev_basis(3)
    raise ValueError(f"no trace-free basis with {d_p} coefficients")


@dataclass(frozen=True)
class PlasticBlockState:
    """Plastic strain coefficients of one element, plus hardening scalar."""

    p: np.ndarray
    eta: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))


def hooke_apply(params: MaterialParams, strain):
    """Isotropic Hooke law ``lam tr(e) I + 2 mu e``."""
    strain = np.asarray(strain, dtype=float)
    d = strain.shape[-1]
    tr = np.trace(strain, axis1=-2, axis2=-1)
    return params.lam * tr[..., None, None] * np.eye(d) + 2.0 * params.mu * strain


# ---------------------------------------------------------------------------
# symmetric eigenvalue problems

def _eig2(X):
    a, b, c = X[..., 0, 0], X[..., 0, 1], X[..., 1, 1]
    m = 0.5 * (a + c)
    r = np.hypot(0.5 * (a - c), b)
    theta = 0.5 * np.arctan2(2.0 * b, a - c)
    ct, st = np.cos(theta), np.sin(theta)
    w = np.stack([m - r, m + r], axis=-1)
    V = np.empty(X.shape)
    V[..., 0, 1], V[..., 1, 1] = ct, st
    V[..., 0, 0], V[..., 1, 0] = -st, ct
    return w, V


def _jacobi3(A, tol=1e-15, max_sweeps=50):
    A = np.array(A, dtype=float)
    V = np.eye(3)
    scale = max(np.abs(A).max(), 1e-300)
    for _ in range(max_sweeps):
        off = abs(A[0, 1]) + abs(A[0, 2]) + abs(A[1, 2])
        if off <= tol * scale:
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            if abs(A[p, q]) <= 1e-300:
                continue
            tau = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
            t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
            c = 1.0 / math.sqrt(1.0 + t * t)
            s = t * c
            J = np.eye(3)
            J[p, p] = J[q, q] = c
            J[p, q], J[q, p] = s, -s
            A = J.T @ A @ J
            V = V @ J
    w = np.diag(A).copy()
    order = np.argsort(w)
    return w[order], V[:, order]


def _eig3_single(X):
    scale = np.linalg.norm(X)
    if scale == 0.0:
        return np.zeros(3), np.eye(3)
    A = X / scale
    m = np.trace(A) / 3.0
    K = A - m * np.eye(3)
    pp = np.sum(K * K) / 6.0
    q = np.linalg.det(K) / 2.0
    disc = pp ** 3 - q * q
    if pp <= 1e-12 or disc <= 1e-12:
        w, V = _jacobi3(A)
        return w * scale, V
    phi = math.acos(max(-1.0, min(1.0, q / pp ** 1.5))) / 3.0
    sp = 2.0 * math.sqrt(pp)
    l1 = m + sp * math.cos(phi)
    l3 = m + sp * math.cos(phi + 2.0 * math.pi / 3.0)
    l2 = 3.0 * m - l1 - l3
    w = np.array([l3, l2, l1])
    V = np.empty((3, 3))
    for i, lam in enumerate(w):
        M = A - lam * np.eye(3)
        cands = [np.cross(M[0], M[1]), np.cross(M[0], M[2]), np.cross(M[1], M[2])]
        v = max(cands, key=lambda x: x @ x)
        V[:, i] = v / np.linalg.norm(v)
    # re-orthogonalise against rounding
    V[:, 1] -= (V[:, 0] @ V[:, 1]) * V[:, 0]
    V[:, 1] /= np.linalg.norm(V[:, 1])
    V[:, 2] = np.cross(V[:, 0], V[:, 1]) * np.sign(np.cross(V[:, 0], V[:, 1]) @ V[:, 2])
    return w * scale, V


def sym_eig(X):
    """Eigen-decomposition of symmetric 2x2 or 3x3 matrices, batched.

    Eigenvalues are ascending; columns of the returned matrix are the
    eigenvectors.  2x2 uses the closed form, 3x3 the trigonometric formula on
    the Frobenius-normalised matrix with a Jacobi fallback near repeated
    eigenvalues.
    """
    X = np.asarray(X, dtype=float)
    d = X.shape[-1]
    if d == 2:
        return _eig2(X)
    if d != 3:
        raise ValueError("only 2x2 and 3x3 matrices are supported")
    flat = X.reshape(-1, 3, 3)
    w = np.empty(flat.shape[:2])
    V = np.empty(flat.shape)
    for i, A in enumerate(flat):
        w[i], V[i] = _eig3_single(A)
    return w.reshape(X.shape[:-1]), V.reshape(X.shape)


def _order_by_magnitude(w, V):
    # descending |lambda|, ties broken by descending value
    key = np.lexsort((-w, -np.abs(w)), axis=-1) if w.ndim == 1 else None
    if w.ndim == 1:
        return w[key], V[:, key]
    idx = np.empty(w.shape, dtype=int)
    for i in range(w.shape[0]):
        idx[i] = np.lexsort((-w[i], -np.abs(w[i])))
    ws = np.take_along_axis(w, idx, axis=-1)
    Vs = np.take_along_axis(V, idx[:, None, :], axis=-1)
    return ws, Vs


def tresca_spectral_radius(p, basis: DevBasis):
    """Spectral radius of ``B(p)`` with the sorted eigen-decomposition.

    Returns ``(rho, eigenvalues, eigenvectors)``, eigenvalues ordered by
    descending magnitude (ties: larger value first), eigenvectors as columns
    in the same order.
    """
    w, V = sym_eig(basis.to_matrix(p))
    w, V = _order_by_magnitude(w, V)
    return float(abs(w[0])), w, V


def tresca_subgradient(p, basis: DevBasis, sigma_c: float = 1.0):
    """One subgradient of ``sigma_c * rho(B(p))`` in coefficient space."""
    _, w, V = tresca_spectral_radius(p, basis)
    sign = 1.0 if w[0] >= 0.0 else -1.0
    u = V[:, 0]
    return sigma_c * sign * basis.from_matrix(np.outer(u, u))


def vonmises_steepest_descent_at_zero(r_k):
    """Unit steepest-descent direction of a von Mises local functional at 0."""
    r_k = np.asarray(r_k, dtype=float)
    nrm = np.linalg.norm(r_k)
    if nrm == 0.0:
        raise ValueError("zero residual: p = 0 is already stationary")
    return r_k / nrm


def deviator(X):
    X = np.asarray(X, dtype=float)
    d = X.shape[-1]
    tr = np.trace(X, axis1=-2, axis2=-1)
    return X - (tr / d)[..., None, None] * np.eye(d)


def vonmises_local_min(params: MaterialParams, R, sigma_c_eff: Optional[float] = None):
    """Minimiser over trace-free P of ``1/2 (C + k1) P:P - P:R + sigma_c |P|``."""
    sigma_c = params.sigma_c if sigma_c_eff is None else sigma_c_eff
    RD = deviator(R)
    nrm = np.linalg.norm(RD)
    if nrm <= sigma_c:
        return np.zeros_like(RD)
    return (nrm - sigma_c) / (2.0 * params.mu + params.k1) * RD / nrm


# ---------------------------------------------------------------------------
# dissipation and its derivatives (batched over blocks)

def block_yield_measure(kind: DissipationKind, basis: DevBasis, p):
    """``|p|`` (von Mises) or ``rho(B(p))`` (Tresca) for ``p`` of shape (n, d_p)."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    if kind.variant == VON_MISES:
        return np.linalg.norm(p, axis=1)
    if basis.d == 2:
        # trace-free 2x2 matrices have eigenvalues +-|X|/sqrt(2)
        return np.linalg.norm(p, axis=1) / math.sqrt(2.0)
    w, _ = sym_eig(basis.to_matrix(p))
    return np.abs(w).max(axis=1)


def block_dissipation(kind: DissipationKind, basis: DevBasis, sigma_c, p, eta=None):
    """Dissipation per block; ``inf`` where the hardening constraint fails."""
    m = block_yield_measure(kind, basis, p)
    val = sigma_c * m
    if kind.isotropic:
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        val = np.where(m <= eta, val, np.inf)
    return val


def dissipation(kind: DissipationKind, params: MaterialParams, state: PlasticBlockState,
                basis: Optional[DevBasis] = None) -> float:
    """Dissipation of a single block (may be ``math.inf``)."""
    basis = basis or basis_for_dp(state.p.size)
    eta = None
    if kind.isotropic:
        eta = 0.0 if state.eta is None else state.eta
    return float(block_dissipation(kind, basis, params.sigma_c, state.p[None, :], eta)[0])


def block_dissipation_gradient(kind: DissipationKind, basis: DevBasis, weight, p):
    """Gradient of ``weight * yield_measure`` at blocks where it is differentiable.

    Callers must only use entries for blocks with nonzero ``p`` (von Mises) or
    a simple maximal-magnitude eigenvalue (Tresca); other entries hold one
    valid subgradient.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    weight = np.broadcast_to(np.asarray(weight, dtype=float), (p.shape[0],))
    if kind.variant == VON_MISES or basis.d == 2:
        nrm = np.linalg.norm(p, axis=1)
        safe = np.where(nrm > 0, nrm, 1.0)
        g = p / safe[:, None]
        g[nrm == 0] = 0.0
        if kind.variant == TRESCA:
            g /= math.sqrt(2.0)
        return weight[:, None] * g
    out = np.empty_like(p)
    for i in range(p.shape[0]):
        out[i] = tresca_subgradient(p[i], basis, weight[i])
    return out


def block_dissipation_hessian(kind: DissipationKind, basis: DevBasis, weight, p):
    """Hessian of ``weight * yield_measure`` in coefficient space, shape (n, d_p, d_p).

    Only meaningful where the yield measure is twice differentiable (see
    :func:`smooth_blocks`).
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    n, dp = p.shape
    weight = np.broadcast_to(np.asarray(weight, dtype=float), (n,))
    if kind.variant == VON_MISES or basis.d == 2:
        nrm = np.linalg.norm(p, axis=1)
        safe = np.where(nrm > 0, nrm, 1.0)
        u = p / safe[:, None]
        H = (np.eye(dp)[None] - u[:, :, None] * u[:, None, :]) / safe[:, None, None]
        if kind.variant == TRESCA:
            H /= math.sqrt(2.0)
        return weight[:, None, None] * H
    H = np.zeros((n, dp, dp))
    for i in range(n):
        _, w, V = tresca_spectral_radius(p[i], basis)
        s = 1.0 if w[0] >= 0 else -1.0
        uj = V[:, 0]
        for k in range(1, basis.d):
            a = np.einsum("a,jab,b->j", V[:, k], basis.matrices, uj)
            H[i] += 2.0 * np.outer(a, a) / (w[0] - w[k])
        H[i] *= s * weight[i]
    return H


def smooth_blocks(kind: DissipationKind, basis: DevBasis, p, eta=None, tol=NONSMOOTH_TOL):
    """Blocks where the local dissipation term is C^2 at ``(p, eta)``.

    A block qualifies if ``|p| >= tol``; for Tresca in 3D the two largest
    eigenvalue magnitudes must also differ by at least ``tol``; with isotropic
    hardening the point must lie strictly inside the constraint,
    ``yield_measure(p) < eta - tol``.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    flags = np.linalg.norm(p, axis=1) >= tol
    if kind.variant == TRESCA and basis.d == 3:
        w, _ = sym_eig(basis.to_matrix(p))
        mags = np.sort(np.abs(w), axis=1)
        flags &= (mags[:, -1] - mags[:, -2]) >= tol
    if kind.isotropic:
        flags &= block_yield_measure(kind, basis, p) < np.asarray(eta, dtype=float) - tol
    return flags


def block_directional_derivative(kind: DissipationKind, basis: DevBasis, weight, p, c):
    """One-sided derivative of ``weight * yield_measure`` at ``p`` along ``c``."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    weight = np.broadcast_to(np.asarray(weight, dtype=float), (p.shape[0],))
    if kind.variant == VON_MISES or basis.d == 2:
        nrm = np.linalg.norm(p, axis=1)
        safe = np.where(nrm > 0, nrm, 1.0)
        dd = np.where(nrm > 0, np.einsum("ij,ij->i", p, c) / safe, np.linalg.norm(c, axis=1))
        if kind.variant == TRESCA:
            dd = dd / math.sqrt(2.0)
        return weight * dd
    out = np.empty(p.shape[0])
    X = basis.to_matrix(p)
    Hc = basis.to_matrix(c)
    for i in range(p.shape[0]):
        w, V = sym_eig(X[i])
        rho = np.abs(w).max()
        if rho == 0.0:
            out[i] = weight[i] * np.abs(sym_eig(Hc[i])[0]).max()
            continue
        tol = 1e-12 * rho
        cands = []
        top = w >= rho - tol
        if top.any():
            U = V[:, top]
            cands.append(np.linalg.eigvalsh(U.T @ Hc[i] @ U).max())
        bot = -w >= rho - tol
        if bot.any():
            U = V[:, bot]
            cands.append(-np.linalg.eigvalsh(U.T @ Hc[i] @ U).min())
        out[i] = weight[i] * max(cands)
    return out


# ---------------------------------------------------------------------------
# reduction of block problems to a scalar "radius" variable

def _box_zero_sum_projection(y, t):
    """Project rows of ``y`` onto ``{x : |x_i| <= t, sum(x) = 0}``.

    Returns ``(x, mu)`` with ``x = clip(y - mu, -t, t)``; assumes each row of
    ``y`` sums to zero up to rounding.
    """
    t = np.asarray(t, dtype=float)[:, None]
    bp = np.sort(np.concatenate([y - t, y + t], axis=1), axis=1)
    f = np.clip(y[:, None, :] - bp[:, :, None], -t[:, :, None], t[:, :, None]).sum(axis=2)
    k = np.argmax(f <= 0.0, axis=1)
    k = np.maximum(k, 1)
    rows = np.arange(y.shape[0])
    f0, f1 = f[rows, k - 1], f[rows, k]
    b0, b1 = bp[rows, k - 1], bp[rows, k]
    denom = f0 - f1
    frac = np.where(denom > 0, f0 / np.where(denom > 0, denom, 1.0), 0.0)
    mu = np.where(f0 <= 0.0, b0, b0 + frac * (b1 - b0))
    return np.clip(y - mu[:, None], -t, t), mu


class _RadialReduction:
    """Spectral or Euclidean reduction of a block to a radius ``t``.

    For a quadratic ``1/2 alpha |x|^2 - x.r`` with ``alpha`` a multiple of the
    identity, minimisation over ``{m(x) <= t}`` (``m`` = Euclidean norm or
    spectral radius) has the closed form given by :meth:`point` and its value
    decreases in ``t`` at the rate returned by :meth:`slope`.
    """

    def __init__(self, kind, basis, y):
        self.kind = kind
        self.basis = basis
        if kind.variant == VON_MISES:
            self.y = y
            self.ny = np.linalg.norm(y, axis=1)
            self.U = None
        else:
            w, V = sym_eig(basis.to_matrix(y))
            self.y = w
            self.U = V
            self.ny = np.abs(w).max(axis=1)

    def point(self, t):
        if self.U is None:
            scale = np.where(self.ny > t, t / np.where(self.ny > 0, self.ny, 1.0), 1.0)
            return self.y * scale[:, None]
        x, _ = _box_zero_sum_projection(self.y, t)
        X = np.einsum("nij,nj,nkj->nik", self.U, x, self.U)
        return self.basis.from_matrix(X)

    def slope(self, t):
        """Derivative of ``min_{m(x)<=t} 1/2|x - y|^2`` with respect to ``t``."""
        if self.U is None:
            return -np.maximum(self.ny - t, 0.0)
        _, mu = _box_zero_sum_projection(self.y, t)
        return -np.maximum(np.abs(self.y - mu[:, None]) - t[:, None], 0.0).sum(axis=1)


def _bisect_increasing(fprime, hi, iters=200):
    """Smallest root of a nondecreasing function on ``[0, hi]`` (vectorised)."""
    lo = np.zeros_like(hi)
    done = fprime(lo) >= 0.0
    hi = np.where(done, 0.0, hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pos = fprime(mid) >= 0.0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
        if np.all(hi - lo <= 4e-16 * np.maximum(hi, 1e-300)):
            break
    return hi


def local_block_minimize(kind: DissipationKind, basis: DevBasis, alpha, weight, r_p,
                         beta=None, r_eta=None):
    """Exact minimisers of the element-local plastic problems.

    Minimises, independently for every row,

        1/2 alpha |p|^2 + 1/2 beta eta^2 - p.r_p - eta r_eta + weight * m(p)

    subject to ``m(p) <= eta`` when ``kind.isotropic``, where ``m`` is the
    Euclidean norm (von Mises) or the spectral radius of ``B(p)`` (Tresca).

    Returns ``(p, eta)``; ``eta`` is ``None`` without isotropic hardening.
    """
    r_p = np.atleast_2d(np.asarray(r_p, dtype=float))
    n = r_p.shape[0]
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (n,))
    weight = np.broadcast_to(np.asarray(weight, dtype=float), (n,))

    if kind.variant == VON_MISES and not kind.isotropic:
        nrm = np.linalg.norm(r_p, axis=1)
        mag = np.maximum(nrm - weight, 0.0) / alpha
        safe = np.where(nrm > 0, nrm, 1.0)
        return r_p * (mag / safe)[:, None], None

    y = r_p / alpha[:, None]
    red = _RadialReduction(kind, basis, y)
    if kind.isotropic:
        beta = np.broadcast_to(np.asarray(beta, dtype=float), (n,))
        r_eta = np.broadcast_to(np.asarray(r_eta, dtype=float), (n,))
        if np.any(beta <= 0):
            raise ValueError("isotropic hardening needs k2 > 0")
        eta_free = r_eta / beta

        def slope(t):
            return alpha * red.slope(t) + weight + np.where(t >= eta_free, beta * t - r_eta, 0.0)

        hi = np.maximum(np.maximum(red.ny, eta_free), 0.0) * (1.0 + 1e-12) + 1e-300
    else:
        def slope(t):
            return alpha * red.slope(t) + weight

        hi = red.ny * (1.0 + 1e-12) + 1e-300
    t = _bisect_increasing(slope, hi)
    p = red.point(t)
    eta = None
    if kind.isotropic:
        # lift eta by the rounding error of m(p) so the result is exactly feasible
        eta = np.maximum(np.maximum(t, eta_free), block_yield_measure(kind, basis, p))
    return p, eta


def block_project_domain(kind: DissipationKind, basis: DevBasis, p, eta=None):
    """Euclidean projection of ``(p, eta)`` rows onto the effective domain."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    if not kind.isotropic:
        return p.copy(), None if eta is None else np.array(eta, dtype=float)
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    if kind.variant == VON_MISES:
        nrm = np.linalg.norm(p, axis=1)
        inside = nrm <= eta
        polar = nrm <= -eta
        s = 0.5 * (nrm + eta)
        safe = np.where(nrm > 0, nrm, 1.0)
        p_new = np.where(inside[:, None], p, p * (s / safe)[:, None])
        p_new[polar] = 0.0
        eta_new = np.where(inside, eta, np.where(polar, 0.0, s))
        return p_new, eta_new
    # Tresca: minimise 1/2|x - p|^2 + 1/2(s - eta)^2 over rho(x) <= s
    red = _RadialReduction(kind, basis, p)
    inside = red.ny <= eta

    def slope(s):
        return red.slope(s) + (s - eta)

    hi = np.maximum(red.ny, np.maximum(eta, 0.0)) * (1.0 + 1e-12) + 1e-300
    s = _bisect_increasing(slope, hi)
    p_new = red.point(s)
    p_new[inside] = p[inside]
    eta_new = np.where(inside, eta, s)
    return p_new, eta_new


def project_domain(kind: DissipationKind, state: PlasticBlockState,
                   basis: Optional[DevBasis] = None) -> PlasticBlockState:
    """Closest point of the effective domain of the dissipation."""
    if not kind.isotropic:
        return state
    basis = basis or basis_for_dp(state.p.size)
    p, eta = block_project_domain(kind, basis, state.p[None, :], [state.eta])
    return PlasticBlockState(p[0], float(eta[0]))


# ---------------------------------------------------------------------------
# support-function lower bounds

def _hexagon_vertices(s0):
    return s0 * np.array([[1, 0], [1, 1], [0, 1], [-1, 0], [-1, -1], [0, -1]], dtype=float)


def _unit_samples(dim, n, rng):
    if dim == 2:
        th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        return np.column_stack([np.cos(th), np.sin(th)])
    z = rng.standard_normal((n, dim))
    return z / np.linalg.norm(z, axis=1)[:, None]


def support_function_oracle(kind: DissipationKind, params: MaterialParams,
                            state: PlasticBlockState, n_samples: int = 1000,
                            rng=None, basis: Optional[DevBasis] = None) -> float:
    """Lower bound on the dissipation by sampling admissible generalised stresses.

    Stresses are sampled directly from the elastic region (never from the
    closed-form dissipation).  For Tresca the stress samples are diagonal in
    the eigenbasis of ``B(p)``; in 3D the reduced-coordinate hexagon vertices
    are always included, so the kinematic Tresca bound is exact.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    basis = basis or basis_for_dp(state.p.size)
    p = state.p
    if kind.isotropic:
        gs = -params.sigma_c * np.concatenate([[0.0], np.geomspace(1e-3, 1e6, 19)])
        eta = 0.0 if state.eta is None else state.eta
    else:
        gs = np.array([0.0])
        eta = 0.0
    best = -np.inf
    for g in gs:
        radius = params.sigma_c - g
        if kind.variant == VON_MISES:
            S = radius * _unit_samples(p.size, n_samples, rng)
            vals = S @ p
        else:
            X = basis.to_matrix(p)
            w, V = sym_eig(X)
            if basis.d == 2:
                red = np.array([[radius], [-radius]])
                red = np.vstack([red, radius * rng.uniform(-1, 1, size=(n_samples, 1))])
                sig = np.column_stack([red[:, 0], np.zeros(len(red))])
            else:
                verts = _hexagon_vertices(radius)
                lam = rng.uniform(size=(n_samples, 6))
                lam /= lam.sum(axis=1)[:, None]
                inner = lam @ verts
                red = np.vstack([verts, inner])
                sig = np.column_stack([red, np.zeros(len(red))])
            vals = sig @ w
            # generic admissible stresses in rotated frames as extra samples
            R = np.linalg.qr(rng.standard_normal((min(n_samples, 50), basis.d, basis.d)))[0]
            diag = sig[: len(R)]
            Sig = np.einsum("nij,nj,nkj->nik", R, diag, R)
            vals = np.concatenate([vals, np.einsum("nij,ij->n", Sig, X)])
        best = max(best, float(vals.max()) + g * eta)
    return best
