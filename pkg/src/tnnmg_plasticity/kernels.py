"""Compiled inner loops shared by the solvers.

Sparse matrices are passed as raw CSR arrays ``(indptr, indices, data)``.
Displacement unknowns come in 2x2 vertex blocks.  In two dimensions every
supported dissipation is ``weight * |p|`` on a plastic block, optionally
constrained by ``s |p| <= eta``; the closed forms below rely on that.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def block_gauss_seidel(indptr, indices, data, x, f, n_sweeps, forward):
    """In-place 2x2 block Gauss-Seidel sweeps for ``A x = f``."""
    nb = x.shape[0] // 2
    for _ in range(n_sweeps):
        for step in range(nb):
            i = step if forward else nb - 1 - step
            i0 = 2 * i
            i1 = i0 + 1
            r0 = f[i0]
            r1 = f[i1]
            a00 = 0.0
            a01 = 0.0
            a10 = 0.0
            a11 = 0.0
            for k in range(indptr[i0], indptr[i0 + 1]):
                j = indices[k]
                if j == i0:
                    a00 = data[k]
                elif j == i1:
                    a01 = data[k]
                else:
                    r0 -= data[k] * x[j]
            for k in range(indptr[i1], indptr[i1 + 1]):
                j = indices[k]
                if j == i0:
                    a10 = data[k]
                elif j == i1:
                    a11 = data[k]
                else:
                    r1 -= data[k] * x[j]
            det = a00 * a11 - a01 * a10
            x[i0] = (a11 * r0 - a01 * r1) / det
            x[i1] = (a00 * r1 - a10 * r0) / det


@njit(cache=True)
def csr_residual(indptr, indices, data, x, f, out):
    """``out = f - A x``."""
    for i in range(f.shape[0]):
        s = f[i]
        for k in range(indptr[i], indptr[i + 1]):
            s -= data[k] * x[indices[k]]
        out[i] = s


@njit(cache=True)
def csr_positions(indptr, indices, rows, cols):
    """Index into ``data`` of each ``(rows[k], cols[k])`` entry; -1 if absent."""
    out = np.empty(rows.shape[0], dtype=np.int64)
    for k in range(rows.shape[0]):
        r = rows[k]
        lo = indptr[r]
        hi = indptr[r + 1]
        c = cols[k]
        while lo < hi:
            mid = (lo + hi) // 2
            if indices[mid] < c:
                lo = mid + 1
            else:
                hi = mid
        if lo < indptr[r + 1] and indices[lo] == c:
            out[k] = lo
        else:
            out[k] = -1
    return out


@njit(cache=True)
def schur_data(E_data, positions, local_coupling, D, active, out):
    """Values of ``E - C D C^T`` on the pattern of ``E``.

    ``positions[e, a, b]`` locates local dof pair ``(a, b)`` of element ``e``
    in ``E_data``; ``D[e]`` is the (pseudo-)inverse plastic block, used only
    where ``active[e]``.
    """
    out[:] = E_data
    m, nl, nb = local_coupling.shape
    CD = np.empty((nl, nb))
    for e in range(m):
        if not active[e]:
            continue
        for a in range(nl):
            for l in range(nb):
                s = 0.0
                for k in range(nb):
                    s += local_coupling[e, a, k] * D[e, k, l]
                CD[a, l] = s
        for a in range(nl):
            for b in range(nl):
                s = 0.0
                for l in range(nb):
                    s += CD[a, l] * local_coupling[e, b, l]
                out[positions[e, a, b]] -= s


# ---------------------------------------------------------------------------
# plastic blocks in two dimensions

@njit(cache=True)
def local_minimize_2d(alpha, weight, r, beta, r_eta, s, isotropic, out):
    """Exact block minimisers.

    Minimises ``1/2 alpha |p|^2 - p.r + weight |p|`` per row of ``r`` (written
    to ``out[:, :2]``).  With ``isotropic`` the term
    ``1/2 beta eta^2 - eta r_eta`` and the constraint ``s |p| <= eta`` are
    added and ``eta`` goes to ``out[:, 2]``.
    """
    for e in range(r.shape[0]):
        r0 = r[e, 0]
        r1 = r[e, 1]
        nr = np.sqrt(r0 * r0 + r1 * r1)
        t = max(nr - weight[e], 0.0) / alpha[e]
        if isotropic:
            eta = r_eta[e] / beta[e]
            if s * t > eta:
                t = max(nr - weight[e] + s * r_eta[e], 0.0) / (alpha[e] + beta[e] * s * s)
                eta = s * t
            out[e, 2] = eta
        if t > 0.0:
            out[e, 0] = t * r0 / nr
            out[e, 1] = t * r1 / nr
        else:
            out[e, 0] = 0.0
            out[e, 1] = 0.0


@njit(cache=True)
def project_cone_2d(q, s, out):
    """Euclidean projection of rows ``(p0, p1, eta)`` onto ``{s |p| <= eta}``."""
    a = 1.0 / s
    for e in range(q.shape[0]):
        p0 = q[e, 0]
        p1 = q[e, 1]
        eta = q[e, 2]
        nrm = np.sqrt(p0 * p0 + p1 * p1)
        if nrm <= a * eta:
            out[e, 0] = p0
            out[e, 1] = p1
            out[e, 2] = eta
            continue
        tau = (a * nrm + eta) / (1.0 + a * a)
        if tau <= 0.0:
            out[e, 0] = 0.0
            out[e, 1] = 0.0
            out[e, 2] = 0.0
        else:
            out[e, 0] = tau * a * p0 / nrm
            out[e, 1] = tau * a * p1 / nrm
            out[e, 2] = tau


@njit(cache=True)
def _directional(a0, a1, rho, q, c, weight, s, isotropic, feas_tol):
    """Right derivative of the line function at ``rho`` and domain membership."""
    g = a0 + rho * a1
    for e in range(q.shape[0]):
        c0 = c[e, 0]
        c1 = c[e, 1]
        if c0 == 0.0 and c1 == 0.0 and not isotropic:
            continue
        x0 = q[e, 0] + rho * c0
        x1 = q[e, 1] + rho * c1
        nx = np.sqrt(x0 * x0 + x1 * x1)
        if isotropic:
            eta = q[e, 2] + rho * c[e, 2]
            if s * nx > eta + feas_tol * (abs(eta) + s * nx):
                return g, False
        if nx > 0.0:
            g += weight[e] * (x0 * c0 + x1 * c1) / nx
        else:
            g += weight[e] * np.sqrt(c0 * c0 + c1 * c1)
    return g, True


@njit(cache=True)
def line_search_2d(a0, a1, q, c, weight, s, isotropic, rho_init, max_bisect, feas_tol):
    """Bisection for the minimiser of ``rho -> L(w + rho c)`` on ``rho >= 0``.

    ``a0`` and ``a1`` are the linear and quadratic coefficients of the
    smooth part.  The bracket starts at ``rho_init`` and doubles until the
    right derivative is nonnegative or the point leaves the domain.  Returns
    the left end of the final bracket, where the derivative is negative, or
    0 if the direction is not a descent direction.
    """
    g0, ok = _directional(a0, a1, 0.0, q, c, weight, s, isotropic, feas_tol)
    if not ok or g0 >= 0.0:
        return 0.0
    lo = 0.0
    hi = rho_init
    for _ in range(64):
        g, ok = _directional(a0, a1, hi, q, c, weight, s, isotropic, feas_tol)
        if not ok or g >= 0.0:
            break
        lo = hi
        hi *= 2.0
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        g, ok = _directional(a0, a1, mid, q, c, weight, s, isotropic, feas_tol)
        if ok and g < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return lo


@njit(cache=True)
def apply_block_operator(indptr, indices, data, local_dofs, local_coupling, P_diag, u, q,
                         out_u, out_q):
    """``[E C; C^T P] [u; q]`` with ``C`` given by element-local blocks."""
    n = u.shape[0]
    for i in range(n):
        s = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            s += data[k] * u[indices[k]]
        out_u[i] = s
    m, nl, nb = local_coupling.shape
    for e in range(m):
        for l in range(nb):
            s = P_diag[e, l] * q[e, l]
            for a in range(nl):
                s += local_coupling[e, a, l] * u[local_dofs[e, a]]
            out_q[e, l] = s
        for a in range(nl):
            s = 0.0
            for l in range(nb):
                s += local_coupling[e, a, l] * q[e, l]
            out_u[local_dofs[e, a]] += s


@njit(cache=True)
def dissipation_sum(q, weight, s, isotropic, feas_tol):
    """``sum_e weight_e |p_e|``; ``inf`` if a hardening constraint ``s|p| <= eta`` fails."""
    total = 0.0
    for e in range(q.shape[0]):
        nrm = np.sqrt(q[e, 0] * q[e, 0] + q[e, 1] * q[e, 1])
        if isotropic:
            eta = q[e, 2]
            if s * nrm > eta + feas_tol * (abs(eta) + s * nrm):
                return np.inf
        total += weight[e] * nrm
    return total


@njit(cache=True)
def truncated_blocks_2d(q, smooth_grad_q, P_diag, weight, s, isotropic, tol,
                        flags, P_tilde, D, g2):
    """Inactive flags, Newton blocks, their inverses and the truncated negative gradient.

    On an inactive block ``P_tilde = P + weight (I - n n^T) / |p|`` on the
    plastic coordinates (``n = p / |p|``) and ``g2 = -(grad + weight n)``;
    everything is zero on truncated blocks.
    """
    m, nb = q.shape
    for e in range(m):
        p0 = q[e, 0]
        p1 = q[e, 1]
        nrm = np.sqrt(p0 * p0 + p1 * p1)
        ok = nrm >= tol
        if ok and isotropic:
            ok = s * nrm < q[e, 2] - tol
        flags[e] = ok
        for i in range(nb):
            g2[e, i] = 0.0
            for j in range(nb):
                P_tilde[e, i, j] = 0.0
                D[e, i, j] = 0.0
        if not ok:
            continue
        n0 = p0 / nrm
        n1 = p1 / nrm
        h = weight[e] / nrm
        a = P_diag[e, 0]
        P_tilde[e, 0, 0] = a + h * (1.0 - n0 * n0)
        P_tilde[e, 0, 1] = -h * n0 * n1
        P_tilde[e, 1, 0] = -h * n0 * n1
        P_tilde[e, 1, 1] = a + h * (1.0 - n1 * n1)
        # eigenvalues a (along n) and a + h (across n)
        inv_a = 1.0 / a
        inv_b = 1.0 / (a + h)
        D[e, 0, 0] = inv_a * n0 * n0 + inv_b * (1.0 - n0 * n0)
        D[e, 0, 1] = (inv_a - inv_b) * n0 * n1
        D[e, 1, 0] = D[e, 0, 1]
        D[e, 1, 1] = inv_a * n1 * n1 + inv_b * (1.0 - n1 * n1)
        g2[e, 0] = -(smooth_grad_q[e, 0] + weight[e] * n0)
        g2[e, 1] = -(smooth_grad_q[e, 1] + weight[e] * n1)
        if isotropic:
            P_tilde[e, 2, 2] = P_diag[e, 2]
            D[e, 2, 2] = 1.0 / P_diag[e, 2]
            g2[e, 2] = -smooth_grad_q[e, 2]


@njit(cache=True)
def block_matvec(D, x, out):
    """``out[e] = D[e] @ x[e]``."""
    m, nb, _ = D.shape
    for e in range(m):
        for i in range(nb):
            s = 0.0
            for j in range(nb):
                s += D[e, i, j] * x[e, j]
            out[e, i] = s


@njit(cache=True)
def fill_banded(data, positions, band_rows, band_cols, out):
    """Scatter CSR values into LAPACK lower banded storage."""
    out[:, :] = 0.0
    for k in range(positions.shape[0]):
        out[band_rows[k], band_cols[k]] = data[positions[k]]


def warmup():
    """Compile all kernels on tiny inputs (keeps JIT time out of measurements)."""
    indptr = np.array([0, 2, 4], dtype=np.int64)
    indices = np.array([0, 1, 0, 1], dtype=np.int64)
    data = np.array([2.0, 0.0, 0.0, 2.0])
    x = np.zeros(2)
    f = np.ones(2)
    block_gauss_seidel(indptr, indices, data, x, f, 1, True)
    csr_residual(indptr, indices, data, x, f, np.empty(2))
    csr_positions(indptr, indices, np.array([0], dtype=np.int64), np.array([1], dtype=np.int64))
    schur_data(data, np.zeros((1, 2, 2), dtype=np.int64), np.zeros((1, 2, 2)),
               np.zeros((1, 2, 2)), np.ones(1, dtype=np.bool_), np.empty(4))
    one = np.ones(1)
    q3 = np.ones((1, 3))
    local_minimize_2d(one, one, q3[:, :2], one, one, 1.0, True, np.empty((1, 3)))
    project_cone_2d(q3, 1.0, np.empty((1, 3)))
    line_search_2d(-1.0, 1.0, q3, q3, one, 1.0, True, 2.0, 100, 1e-12)
    line_search_2d(-1.0, 1.0, q3[:, :2].copy(), q3[:, :2].copy(), one, 1.0, False, 2.0, 60, 1e-12)
    ld = np.zeros((1, 2), dtype=np.int64)
    apply_block_operator(indptr, indices, data, ld, np.zeros((1, 2, 2)), np.ones((1, 2)), x,
                         np.ones((1, 2)), np.empty(2), np.empty((1, 2)))
    dissipation_sum(q3, one, 1.0, True, 1e-12)
    truncated_blocks_2d(q3, q3, q3, one, 1.0, True, 1e-10, np.empty(1, dtype=np.bool_),
                        np.empty((1, 3, 3)), np.empty((1, 3, 3)), np.empty((1, 3)))
    block_matvec(np.ones((1, 2, 2)), np.ones((1, 2)), np.empty((1, 2)))
    fill_banded(data, np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64),
                np.zeros(1, dtype=np.int64), np.empty((2, 2)))
