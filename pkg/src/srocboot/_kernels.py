"""Compiled inner loops: REML objective, Nelder-Mead, SROC quadrature.

Every function here is ``nogil`` so bootstrap replicates can run on threads.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

LOG_SIGMA_LO = -12.0
LOG_SIGMA_HI = 5.0
ATANH_RHO_LO = -12.0
ATANH_RHO_HI = 12.0


@njit(cache=True, nogil=True)
def reml_loglik(sig_a, sig_b, rho, ya, yb, sa, sb):
    """Restricted log-likelihood (no constants) and the GLS quantities.

    Returns (loglik, mu_a, mu_b, m11, m12, m22) where M = sum_i V_i^{-1}.
    loglik is NaN when some V_i or M is not positive definite.
    """
    n = ya.shape[0]
    # REML is invariant to a common shift of y; centring avoids cancellation.
    ca = 0.0
    cb = 0.0
    for i in range(n):
        ca += ya[i]
        cb += yb[i]
    ca /= n
    cb /= n

    va = sig_a * sig_a
    vb = sig_b * sig_b
    c = rho * sig_a * sig_b
    logdet = 0.0
    q = 0.0
    m11 = 0.0
    m12 = 0.0
    m22 = 0.0
    u1 = 0.0
    u2 = 0.0
    for i in range(n):
        v11 = va + sa[i]
        v22 = vb + sb[i]
        det = v11 * v22 - c * c
        if not (det > 0.0) or not (v11 > 0.0):
            return math.nan, math.nan, math.nan, math.nan, math.nan, math.nan
        w11 = v22 / det
        w22 = v11 / det
        w12 = -c / det
        logdet += math.log(det)
        m11 += w11
        m12 += w12
        m22 += w22
        a = ya[i] - ca
        b = yb[i] - cb
        wa = w11 * a + w12 * b
        wb = w12 * a + w22 * b
        u1 += wa
        u2 += wb
        q += a * wa + b * wb
    det_m = m11 * m22 - m12 * m12
    if not (det_m > 0.0):
        return math.nan, math.nan, math.nan, math.nan, math.nan, math.nan
    mu1 = (m22 * u1 - m12 * u2) / det_m
    mu2 = (m11 * u2 - m12 * u1) / det_m
    q -= u1 * mu1 + u2 * mu2
    ll = -0.5 * (logdet + q) - 0.5 * math.log(det_m)
    return ll, mu1 + ca, mu2 + cb, m11, m12, m22


@njit(cache=True, nogil=True)
def _clamp(v, lo, hi):
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


@njit(cache=True, nogil=True)
def objective(t, ya, yb, sa, sb):
    """Negative REML in (log sigma_a, log sigma_b, atanh rho) with a box penalty."""
    ta = _clamp(t[0], LOG_SIGMA_LO, LOG_SIGMA_HI)
    tb = _clamp(t[1], LOG_SIGMA_LO, LOG_SIGMA_HI)
    tr = _clamp(t[2], ATANH_RHO_LO, ATANH_RHO_HI)
    pen = (t[0] - ta) ** 2 + (t[1] - tb) ** 2 + (t[2] - tr) ** 2
    ll = reml_loglik(math.exp(ta), math.exp(tb), math.tanh(tr), ya, yb, sa, sb)[0]
    if not math.isfinite(ll):
        return math.inf
    return -ll + pen


@njit(cache=True, nogil=True)
def _sort_simplex(sim, fs):
    # insertion sort in place; the simplex has n + 1 = 4 vertices
    m = fs.shape[0]
    for i in range(1, m):
        j = i
        while j > 0 and fs[j] < fs[j - 1]:
            fs[j], fs[j - 1] = fs[j - 1], fs[j]
            for k in range(sim.shape[1]):
                sim[j, k], sim[j - 1, k] = sim[j - 1, k], sim[j, k]
            j -= 1


@njit(cache=True, nogil=True)
def _move(out, centroid, towards, coef):
    # out = centroid + coef * (towards - centroid)
    for k in range(out.shape[0]):
        out[k] = centroid[k] + coef * (towards[k] - centroid[k])


@njit(cache=True, nogil=True)
def nelder_mead(x0, step, ya, yb, sa, sb, ftol, xtol, maxiter):
    """Standard Nelder-Mead (reflect 1, expand 2, contract 1/2, shrink 1/2).

    Converged when the spread of simplex values is < ftol and the simplex
    diameter (max pairwise Euclidean distance) is < xtol.
    Returns (x_best, f_best, converged, iterations).
    """
    n = x0.shape[0]
    sim = np.empty((n + 1, n))
    fs = np.empty(n + 1)
    centroid = np.empty(n)
    xr = np.empty(n)
    xe = np.empty(n)
    xc = np.empty(n)
    sim[0] = x0
    for k in range(n):
        sim[k + 1] = x0
        sim[k + 1, k] += step
    for k in range(n + 1):
        fs[k] = objective(sim[k], ya, yb, sa, sb)

    converged = False
    it = 0
    while it < maxiter:
        _sort_simplex(sim, fs)
        if fs[n] - fs[0] < ftol:
            diam = 0.0
            for i in range(n + 1):
                for j in range(i + 1, n + 1):
                    d = 0.0
                    for k in range(n):
                        d += (sim[i, k] - sim[j, k]) ** 2
                    if d > diam:
                        diam = d
            if math.sqrt(diam) < xtol:
                converged = True
                break
        it += 1

        for k in range(n):
            acc = 0.0
            for i in range(n):
                acc += sim[i, k]
            centroid[k] = acc / n

        _move(xr, centroid, sim[n], -1.0)
        fr = objective(xr, ya, yb, sa, sb)
        if fr < fs[0]:
            _move(xe, centroid, sim[n], -2.0)
            fe = objective(xe, ya, yb, sa, sb)
            if fe < fr:
                sim[n] = xe
                fs[n] = fe
            else:
                sim[n] = xr
                fs[n] = fr
            continue
        if fr < fs[n - 1]:
            sim[n] = xr
            fs[n] = fr
            continue
        if fr < fs[n]:
            _move(xc, centroid, xr, 0.5)
            fc = objective(xc, ya, yb, sa, sb)
            if fc <= fr:
                sim[n] = xc
                fs[n] = fc
                continue
        else:
            _move(xc, centroid, sim[n], 0.5)
            fc = objective(xc, ya, yb, sa, sb)
            if fc < fs[n]:
                sim[n] = xc
                fs[n] = fc
                continue
        for i in range(1, n + 1):
            for k in range(n):
                sim[i, k] = sim[0, k] + 0.5 * (sim[i, k] - sim[0, k])
            fs[i] = objective(sim[i], ya, yb, sa, sb)

    _sort_simplex(sim, fs)
    return sim[0].copy(), fs[0], converged, it


@njit(cache=True, nogil=True)
def multistart(starts, step, ya, yb, sa, sb, ftol, xtol, maxiter):
    """Run Nelder-Mead from each row of ``starts``; per-start results."""
    k = starts.shape[0]
    xs = np.empty((k, starts.shape[1]))
    fs = np.empty(k)
    conv = np.zeros(k, dtype=np.bool_)
    iters = np.zeros(k, dtype=np.int64)
    for s in range(k):
        x, f, c, it = nelder_mead(starts[s], step, ya, yb, sa, sb, ftol, xtol, maxiter)
        xs[s] = x
        fs[s] = f
        conv[s] = c
        iters[s] = it
    return xs, fs, conv, iters


@njit(cache=True, nogil=True)
def sroc_sens(x, intercept, slope):
    """expit(intercept + slope * logit(x)), extended by its limits at 0 and 1."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    z = intercept + slope * (math.log(x) - math.log1p(-x))
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def weighted_sroc_sum(intercept, slope, z, w):
    """sum_k w[k] * expit(intercept + slope * z[k]) for a precomputed rule on the logit scale."""
    total = 0.0
    for k in range(z.shape[0]):
        t = intercept + slope * z[k]
        if t >= 0.0:
            total += w[k] / (1.0 + math.exp(-t))
        else:
            e = math.exp(t)
            total += w[k] * e / (1.0 + e)
    return total
