"""Compiled single-pass loss recursions used as estimation objectives.

Each kernel mirrors the vectorized path code in ``escaviar``/``dcc`` and
returns ``inf`` where those would reject the candidate.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def stage1_loss(alpha_q, beta, q, gamma0, r, alpha, sample_var, v0):
    omega = (q * q * (1.0 - beta) - alpha_q) * sample_var
    if omega <= 0.0:
        return np.inf
    ratio = math.sqrt(1.0 + math.exp(gamma0))
    q2 = q * q * v0
    total = 0.0
    for t in range(r.size):
        if t > 0:
            q2 = omega + alpha_q * r[t - 1] * r[t - 1] + beta * q2
        if not q2 > 0.0:
            return np.inf
        Q = -math.sqrt(q2)
        es = ratio * Q
        u = r[t] - Q
        ind = 1.0 if r[t] <= Q else 0.0
        total += -math.log((alpha - 1.0) / es) - u * (alpha - ind) / (alpha * es)
    if not math.isfinite(total):
        return np.inf
    return total


@njit(cache=True)
def stage2_loss(a, b, q, gamma0, outer, S, R0, wh, iu, ju, r, alpha):
    T, m = outer.shape
    n = wh.shape[1]
    c = -math.sqrt(q * q * (1.0 + math.exp(gamma0)))
    R = R0.copy()
    diag = np.empty(n)
    g = np.empty(n)
    k0 = 1.0 - a - b
    total = 0.0
    for t in range(T):
        if t > 0:
            for k in range(m):
                R[k] = k0 * S[k] + a * outer[t - 1, k] + b * R[k]
        for k in range(m):
            if iu[k] == ju[k]:
                diag[iu[k]] = R[k]
        for i in range(n):
            g[i] = wh[t, i] / math.sqrt(diag[i])
        v = 0.0
        for k in range(m):
            i = iu[k]
            j = ju[k]
            if i == j:
                v += g[i] * g[i] * R[k]
            else:
                v += 2.0 * g[i] * g[j] * R[k]
        if not v > 0.0:
            return np.inf
        sd = math.sqrt(v)
        Q = q * sd
        es = c * sd
        ind = 1.0 if r[t] <= Q else 0.0
        total += -math.log((alpha - 1.0) / es) - (r[t] - Q) * (alpha - ind) / (alpha * es)
    if not math.isfinite(total):
        return np.inf
    return total
