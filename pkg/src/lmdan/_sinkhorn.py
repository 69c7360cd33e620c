"""Log-domain Sinkhorn kernels (numba loop and vectorized numpy twin).

Alternating potential updates on log P[i,j] = f[i] + g[j] - cost[i,j]/eps.
After every column update the column marginals are exact by construction,
so the stopping test only needs the row residual. Both implementations
follow the same update order and are deterministic.
"""

import numpy as np

from ._accel import NUMBA_ENABLED, njit


@njit(cache=True)
def sinkhorn_log_kernel(cost, a, b, eps, f, g, max_iter, tol):
    n, m = cost.shape
    K = -cost / eps
    log_a = np.log(a)
    log_b = np.log(b)
    row_lse = np.empty(n)
    for i in range(n):
        hi = -np.inf
        for j in range(m):
            t = K[i, j] + g[j]
            if t > hi:
                hi = t
        s = 0.0
        for j in range(m):
            s += np.exp(K[i, j] + g[j] - hi)
        row_lse[i] = np.log(s) + hi

    iters = 0
    converged = 0
    while iters < max_iter:
        iters += 1
        for i in range(n):
            f[i] = log_a[i] - row_lse[i]
        for j in range(m):
            hi = -np.inf
            for i in range(n):
                t = K[i, j] + f[i]
                if t > hi:
                    hi = t
            s = 0.0
            for i in range(n):
                s += np.exp(K[i, j] + f[i] - hi)
            g[j] = log_b[j] - (np.log(s) + hi)
        err = 0.0
        for i in range(n):
            hi = -np.inf
            for j in range(m):
                t = K[i, j] + g[j]
                if t > hi:
                    hi = t
            s = 0.0
            for j in range(m):
                s += np.exp(K[i, j] + g[j] - hi)
            row_lse[i] = np.log(s) + hi
            err += abs(np.exp(f[i] + row_lse[i]) - a[i])
        if err < tol:
            converged = 1
            break

    plan = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            plan[i, j] = np.exp(f[i] + g[j] + K[i, j])
    return plan, f, g, iters, converged


def sinkhorn_log_numpy(cost, a, b, eps, f, g, max_iter, tol):
    K = -cost / eps
    log_a = np.log(a)
    log_b = np.log(b)

    def lse_rows(x):
        hi = x.max(axis=1)
        return np.log(np.exp(x - hi[:, None]).sum(axis=1)) + hi

    def lse_cols(x):
        hi = x.max(axis=0)
        return np.log(np.exp(x - hi[None, :]).sum(axis=0)) + hi

    row_lse = lse_rows(K + g[None, :])
    iters = 0
    converged = 0
    while iters < max_iter:
        iters += 1
        f = log_a - row_lse
        g = log_b - lse_cols(K + f[:, None])
        row_lse = lse_rows(K + g[None, :])
        err = np.abs(np.exp(f + row_lse) - a).sum()
        if err < tol:
            converged = 1
            break

    plan = np.exp(f[:, None] + g[None, :] + K)
    return plan, f, g, iters, converged


sinkhorn_log = sinkhorn_log_kernel if NUMBA_ENABLED else sinkhorn_log_numpy
