"""Compiled inner loops of the ISTA/FISTA reference solvers.

The loops are tiny vector updates, so numpy's per-call overhead dominates a
plain implementation. Status codes: 0 converged or out of budget, 1 diverged.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _matvec_into(out, c, m, lo, hi, v):
    # out = c + m[lo:hi] @ v, skipping zero entries of v (codes are sparse)
    for r in range(hi - lo):
        out[r] = c[lo + r]
    for k in range(v.shape[0]):
        vk = v[k]
        if vk != 0.0:
            for r in range(hi - lo):
                out[r] += m[lo + r, k] * vk


@njit(cache=True)
def _shrink_into(out, v, theta):
    # v - clip(v, -theta, theta); zero inside the band, +0 not -0
    for k in range(v.shape[0]):
        out[k] = v[k] - min(max(v[k], -theta[k]), theta[k])


@njit(cache=True)
def _energy(resid, z, alpha):
    sq = 0.0
    for r in range(resid.shape[0]):
        sq += resid[r] * resid[r]
    l1 = 0.0
    for k in range(z.shape[0]):
        l1 += abs(z[k])
    return 0.5 * sq + alpha * l1


@njit(cache=True)
def _max_step(a, b):
    step = 0.0
    for k in range(a.shape[0]):
        step = max(step, abs(a[k] - b[k]))
    return step


@njit(cache=True)
def ista_loop(m, c, theta, alpha, max_iters, tol, div_tol, energies):
    """m = [S; -D] (Fortran order), c = [W_e x; x]. Fills energies[0..it]."""
    K = theta.shape[0]
    rows = m.shape[0]
    z = np.zeros(K)
    z_new = np.zeros(K)
    u = np.empty(rows)
    _matvec_into(u, c, m, 0, rows, z)
    energies[0] = _energy(u[K:], z, alpha)
    it = 0
    for it in range(1, max_iters + 1):
        _shrink_into(z_new, u[:K], theta)
        _matvec_into(u, c, m, 0, rows, z_new)
        e = _energy(u[K:], z_new, alpha)
        energies[it] = e
        if e > energies[it - 1] + div_tol:
            return z, it, 1
        step = _max_step(z_new, z)
        z[:] = z_new
        if step < tol:
            break
    return z, it, 0


@njit(cache=True)
def fista_loop(m, c, theta, alpha, max_iters, tol, div_tol, energies):
    """Same layout as ista_loop; divergence is judged on 10-step energy means."""
    K = theta.shape[0]
    rows = m.shape[0]
    z = np.zeros(K)
    z_new = np.zeros(K)
    y = np.zeros(K)
    v = np.empty(K)
    resid = np.empty(rows - K)
    _matvec_into(resid, c, m, K, rows, z)
    energies[0] = _energy(resid, z, alpha)
    t = 1.0
    baseline = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        _matvec_into(v, c, m, 0, K, y)
        _shrink_into(z_new, v, theta)
        t_new = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        beta = (t - 1.0) / t_new
        for k in range(K):
            y[k] = z_new[k] + beta * (z_new[k] - z[k])
        _matvec_into(resid, c, m, K, rows, z_new)
        energies[it] = _energy(resid, z_new, alpha)
        count = it + 1
        if count >= 20:
            if not energies[it - 9:it + 1].sum() / 10.0 <= baseline + div_tol:
                return z, it, 1
        elif count == 10:
            baseline = energies[:10].sum() / 10.0
        step = _max_step(z_new, z)
        z[:] = z_new
        t = t_new
        if step < tol:
            break
    return z, it, 0
