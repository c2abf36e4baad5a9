"""Numba-jitted implementation of the hierarchical EMA memory.

Mirrors ``cms_np``; serial over the batch for deterministic accumulation.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _sig(z):
    if z >= 0.0:
        return 1.0 / (1.0 + np.exp(-z))
    ez = np.exp(z)
    return ez / (1.0 + ez)


@njit(cache=True)
def _fwd_kernel(x, rproj, wproj, gates, gammas, valid, chunk, m0, y, mfin):
    B, T, D = x.shape
    nl = rproj.shape[0]
    n_chunks = (T + chunk - 1) // chunk
    for b in range(B):
        m = m0[b].copy()  # (nl, D)
        for c in range(n_chunks):
            t0 = c * chunk
            t1 = min(T, t0 + chunk)
            r = np.empty((nl, D))
            for l in range(nl):
                rv = np.dot(m[l], rproj[l])
                for i in range(D):
                    r[l, i] = rv[i]
            nv = 0
            u = np.zeros(D)
            for t in range(t0, t1):
                for i in range(D):
                    acc = 0.0
                    for l in range(nl):
                        acc += _sig(gates[l, i] * x[b, t, i]) * r[l, i]
                    y[b, t, i] = acc
                if valid[b, t]:
                    nv += 1
                    for i in range(D):
                        u[i] += x[b, t, i]
            if nv > 0:
                for i in range(D):
                    u[i] /= nv
                for l in range(nl):
                    pu = np.dot(u, wproj[l])
                    for i in range(D):
                        m[l, i] = gammas[l] * m[l, i] + (1.0 - gammas[l]) * pu[i]
        for l in range(nl):
            for i in range(D):
                mfin[b, l, i] = m[l, i]


@njit(cache=True)
def _bwd_kernel(x, rproj, wproj, gates, gammas, valid, chunk, m0, gy, gx, grproj, gwproj, ggates):
    B, T, D = x.shape
    nl = rproj.shape[0]
    n_chunks = (T + chunk - 1) // chunk
    for b in range(B):
        # recompute pre-chunk states
        pre = np.empty((n_chunks, nl, D))
        m = m0[b].copy()
        for c in range(n_chunks):
            t0 = c * chunk
            t1 = min(T, t0 + chunk)
            for l in range(nl):
                for i in range(D):
                    pre[c, l, i] = m[l, i]
            nv = 0
            u = np.zeros(D)
            for t in range(t0, t1):
                if valid[b, t]:
                    nv += 1
                    for i in range(D):
                        u[i] += x[b, t, i]
            if nv > 0:
                for i in range(D):
                    u[i] /= nv
                for l in range(nl):
                    pu = np.dot(u, wproj[l])
                    for i in range(D):
                        m[l, i] = gammas[l] * m[l, i] + (1.0 - gammas[l]) * pu[i]

        gm = np.zeros((nl, D))
        for c in range(n_chunks - 1, -1, -1):
            t0 = c * chunk
            t1 = min(T, t0 + chunk)
            nv = 0
            u = np.zeros(D)
            for t in range(t0, t1):
                if valid[b, t]:
                    nv += 1
                    for i in range(D):
                        u[i] += x[b, t, i]
            if nv > 0:
                for i in range(D):
                    u[i] /= nv
                gu = np.zeros(D)
                for l in range(nl):
                    coef = 1.0 - gammas[l]
                    for i in range(D):
                        ge = coef * gm[l, i]
                        for d in range(D):
                            gwproj[l, d, i] += u[d] * ge
                            gu[d] += wproj[l, d, i] * ge
                        gm[l, i] *= gammas[l]
                for t in range(t0, t1):
                    if valid[b, t]:
                        for i in range(D):
                            gx[b, t, i] += gu[i] / nv
            # read backward
            gr = np.zeros((nl, D))
            for l in range(nl):
                rv = np.dot(pre[c, l], rproj[l])
                for t in range(t0, t1):
                    for i in range(D):
                        a = _sig(gates[l, i] * x[b, t, i])
                        gr[l, i] += a * gy[b, t, i]
                        d = gy[b, t, i] * rv[i] * a * (1.0 - a)
                        gx[b, t, i] += d * gates[l, i]
                        ggates[l, i] += d * x[b, t, i]
            for l in range(nl):
                gp = np.dot(rproj[l], gr[l])
                for i in range(D):
                    gm[l, i] += gp[i]
                    for d in range(D):
                        grproj[l, i, d] += pre[c, l, i] * gr[l, d]


def cms_fwd(x, rproj, wproj, gates, gammas, valid, chunk, m0):
    B, T, D = x.shape
    nl = rproj.shape[0]
    y = np.empty((B, T, D))
    mfin = np.empty((B, nl, D))
    _fwd_kernel(x, rproj, wproj, gates, gammas, valid, chunk, m0, y, mfin)
    return y, mfin


def cms_bwd(x, rproj, wproj, gates, gammas, valid, chunk, m0, gy):
    gx = np.zeros_like(x)
    grproj = np.zeros_like(rproj)
    gwproj = np.zeros_like(wproj)
    ggates = np.zeros_like(gates)
    _bwd_kernel(x, rproj, wproj, gates, gammas, valid, chunk, m0, gy, gx, grproj, gwproj, ggates)
    return gx, grproj, gwproj, ggates
