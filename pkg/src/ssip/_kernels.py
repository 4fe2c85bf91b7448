"""Small dense linear-algebra kernels for the per-region updates.

Region blocks are a handful of columns wide, where numpy.linalg call
overhead dwarfs the arithmetic. These loops are compiled with numba and
contain no random number generation.
"""

import math

import numba
import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


@numba.njit(cache=True)
def _chol_inplace(A, k):
    # lower Cholesky of the leading k x k block; returns False if not PD
    for j in range(k):
        s = A[j, j]
        for q in range(j):
            s -= A[j, q] * A[j, q]
        if not s > 0.0:
            return False
        d = math.sqrt(s)
        A[j, j] = d
        for i in range(j + 1, k):
            s = A[i, j]
            for q in range(j):
                s -= A[i, q] * A[j, q]
            A[i, j] = s / d
    return True


@numba.njit(cache=True)
def log_marginal(G, b, yWy, base, active, mu, tau2):
    """-0.5 * (log|Sigma| + r' Sigma^-1 r + m log 2pi) with Sigma = diag(v) + X_a T X_a'.

    ``base`` is m log 2pi + sum log v. Returns nan if M is not PD.
    """
    k = active.shape[0]
    if k == 0:
        return -0.5 * (base + yWy)
    M = np.empty((k, k))
    c = np.empty(k)
    rWr = yWy
    logdet = base
    for a in range(k):
        ia = active[a]
        Gmu = 0.0
        for q in range(k):
            g = G[ia, active[q]]
            M[a, q] = g
            Gmu += g * mu[active[q]]
        c[a] = b[ia] - Gmu
        rWr += -2.0 * b[ia] * mu[ia] + mu[ia] * Gmu
        M[a, a] += 1.0 / tau2[ia]
        logdet += math.log(tau2[ia])
    if not _chol_inplace(M, k):
        return np.nan
    quad = rWr
    for i in range(k):
        s = c[i]
        for q in range(i):
            s -= M[i, q] * c[q]
        c[i] = s / M[i, i]
        quad -= c[i] * c[i]
        logdet += 2.0 * math.log(M[i, i])
    return -0.5 * (logdet + quad)


@numba.njit(cache=True)
def beta_draw(G, b, active, mu, tau2, eps):
    """Active-block draw M^-1 (b_a + T^-1 mu_a) + L^-T eps, M = G_aa + T^-1 = L L'.

    Returns an empty array if M is not PD.
    """
    k = active.shape[0]
    M = np.empty((k, k))
    rhs = np.empty(k)
    for a in range(k):
        ia = active[a]
        for q in range(k):
            M[a, q] = G[ia, active[q]]
        M[a, a] += 1.0 / tau2[ia]
        rhs[a] = b[ia] + mu[ia] / tau2[ia]
    if not _chol_inplace(M, k):
        return np.empty(0)
    # forward: L y = rhs
    for i in range(k):
        s = rhs[i]
        for q in range(i):
            s -= M[i, q] * rhs[q]
        rhs[i] = s / M[i, i]
    # backward: L' x = y + eps
    out = np.empty(k)
    for i in range(k - 1, -1, -1):
        s = rhs[i] + eps[i]
        for q in range(i + 1, k):
            s -= M[q, i] * out[q]
        out[i] = s / M[i, i]
    return out
