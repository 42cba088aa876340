"""Compiled time-marching kernels.

Forward step (m -> m+1), component i with parent p = k(i):

    (I - tau*Lap - tau*diag(c_i^{m+1})) z_i^{m+1}
        = z_i^m + tau * a_i^m * z_p^m + tau * src_i^{m+1}

The backward march is the exact transpose of this affine map, which makes
the discrete duality identity hold to rounding.
"""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def thomas_heat(r, tau, cdiag, rhs, out, cp, dp):
    """Solve (1 + 2r - tau*c_j) x_j - r x_{j-1} - r x_{j+1} = rhs_j, Dirichlet ends.

    Returns False when a pivot vanishes.
    """
    n = rhs.shape[0]
    b = 1.0 + 2.0 * r - tau * cdiag[0]
    if b == 0.0:
        return False
    cp[0] = -r / b
    dp[0] = rhs[0] / b
    for j in range(1, n):
        b = 1.0 + 2.0 * r - tau * cdiag[j] + r * cp[j - 1]
        if b == 0.0:
            return False
        cp[j] = -r / b
        dp[j] = (rhs[j] + r * dp[j - 1]) / b
    out[n - 1] = dp[n - 1]
    for j in range(n - 2, -1, -1):
        out[j] = dp[j] - cp[j] * out[j + 1]
    return True


@njit(cache=True, nogil=True)
def forward_march(z0, a, c, parent, src, has_src, ctrl, ctrl_lo, has_ctrl, tau, h):
    ncomp, nx = z0.shape
    nt = a.shape[1] - 1
    r = tau / (h * h)
    Z = np.empty((nt + 1, ncomp, nx))
    Z[0] = z0
    rhs = np.empty(nx)
    cp = np.empty(nx)
    dp = np.empty(nx)
    nw = ctrl.shape[1]
    for m in range(nt):
        for i in range(ncomp):
            for j in range(nx):
                rhs[j] = Z[m, i, j]
            p = parent[i]
            if p >= 0:
                for j in range(nx):
                    rhs[j] += tau * a[i, m, j] * Z[m, p, j]
            if has_src:
                for j in range(nx):
                    rhs[j] += tau * src[m + 1, i, j]
            if has_ctrl and i == 0:
                for j in range(nw):
                    rhs[ctrl_lo + j] += tau * ctrl[m + 1, j]
            ok = thomas_heat(r, tau, c[i, m + 1], rhs, Z[m + 1, i], cp, dp)
            if not ok:
                raise ZeroDivisionError("singular tridiagonal step")
    return Z


@njit(cache=True, nogil=True)
def adjoint_march(pT, a, c, parent, g, has_g, tau, h):
    """Backward march; level 0 holds the multiplier paired with z(0)."""
    ncomp, nx = pT.shape
    nt = a.shape[1] - 1
    r = tau / (h * h)
    R = np.empty((nt + 1, ncomp, nx))
    rhs = np.empty(nx)
    cp = np.empty(nx)
    dp = np.empty(nx)
    for i in range(ncomp):
        for j in range(nx):
            rhs[j] = pT[i, j]
        if has_g:
            for j in range(nx):
                rhs[j] += tau * g[nt, i, j]
        ok = thomas_heat(r, tau, c[i, nt], rhs, R[nt, i], cp, dp)
        if not ok:
            raise ZeroDivisionError("singular tridiagonal step")
    for m in range(nt - 1, 0, -1):
        for i in range(ncomp):
            for j in range(nx):
                rhs[j] = R[m + 1, i, j]
            for l in range(ncomp):
                if parent[l] == i:
                    for j in range(nx):
                        rhs[j] += tau * a[l, m, j] * R[m + 1, l, j]
            if has_g:
                for j in range(nx):
                    rhs[j] += tau * g[m, i, j]
            ok = thomas_heat(r, tau, c[i, m], rhs, R[m, i], cp, dp)
            if not ok:
                raise ZeroDivisionError("singular tridiagonal step")
    for i in range(ncomp):
        for j in range(nx):
            R[0, i, j] = R[1, i, j]
        for l in range(ncomp):
            if parent[l] == i:
                for j in range(nx):
                    R[0, i, j] += tau * a[l, 0, j] * R[1, l, j]
    return R


@njit(cache=True, nogil=True)
def thomas_general(lower, diag, upper, rhs):
    """Plain Thomas algorithm; lower[0] and upper[-1] are ignored."""
    n = rhs.shape[0]
    cp = np.empty(n)
    dp = np.empty(n)
    x = np.empty(n)
    b = diag[0]
    cp[0] = upper[0] / b
    dp[0] = rhs[0] / b
    for j in range(1, n):
        b = diag[j] - lower[j] * cp[j - 1]
        cp[j] = upper[j] / b
        dp[j] = (rhs[j] - lower[j] * dp[j - 1]) / b
    x[n - 1] = dp[n - 1]
    for j in range(n - 2, -1, -1):
        x[j] = dp[j] - cp[j] * x[j + 1]
    return x
