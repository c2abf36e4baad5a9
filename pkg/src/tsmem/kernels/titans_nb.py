"""Numba-jitted implementation of the short-term memory recurrence.

Loop structure mirrors ``titans_np`` exactly; see that module for the math.
Kernels are serial over the batch so gradient accumulation into shared weight
buffers stays deterministic.
"""

from __future__ import annotations

import numpy as np
from numba import njit

NORM_EPS = 1e-12


@njit(cache=True)
def _fwd_kernel(x, wq, wk, wv, alpha, eta, theta, valid, chunk, m0, s0, y, mfin, sfin):
    B, T, D = x.shape
    for b in range(B):
        M = m0[b].copy()
        S = s0[b].copy()
        for t in range(T):
            xt = x[b, t]
            q = np.dot(xt, wq)
            k = np.dot(xt, wk)
            v = np.dot(xt, wv)
            nrm2 = NORM_EPS
            for i in range(D):
                nrm2 += k[i] * k[i]
            rinv = 1.0 / np.sqrt(nrm2)
            if valid[b, t]:
                kn = k * rinv
                mk = np.dot(M, kn)
                for i in range(D):
                    si = v[i] - mk[i]
                    for jj in range(D):
                        S[i, jj] = eta * S[i, jj] + si * kn[jj]
                for i in range(D):
                    for jj in range(D):
                        M[i, jj] = (1.0 - alpha) * M[i, jj] + theta * S[i, jj]
            yv = np.dot(M, q)
            for i in range(D):
                y[b, t, i] = yv[i]
        for i in range(D):
            for jj in range(D):
                mfin[b, i, jj] = M[i, jj]
                sfin[b, i, jj] = S[i, jj]


@njit(cache=True)
def _bwd_kernel(x, wq, wk, wv, alpha, eta, theta, valid, chunk, m0, s0, gy, gx, gwq, gwk, gwv, gscal):
    B, T, D = x.shape
    n_chunks = (T + chunk - 1) // chunk
    for b in range(B):
        # chunk-boundary states, recomputed per batch element
        mb = np.empty((n_chunks, D, D))
        sb = np.empty((n_chunks, D, D))
        M = m0[b].copy()
        S = s0[b].copy()
        for t in range(T):
            if t % chunk == 0:
                c = t // chunk
                for i in range(D):
                    for jj in range(D):
                        mb[c, i, jj] = M[i, jj]
                        sb[c, i, jj] = S[i, jj]
            if valid[b, t]:
                xt = x[b, t]
                k = np.dot(xt, wk)
                v = np.dot(xt, wv)
                nrm2 = NORM_EPS
                for i in range(D):
                    nrm2 += k[i] * k[i]
                rinv = 1.0 / np.sqrt(nrm2)
                kn = k * rinv
                mk = np.dot(M, kn)
                for i in range(D):
                    si = v[i] - mk[i]
                    for jj in range(D):
                        S[i, jj] = eta * S[i, jj] + si * kn[jj]
                for i in range(D):
                    for jj in range(D):
                        M[i, jj] = (1.0 - alpha) * M[i, jj] + theta * S[i, jj]

        GM = np.zeros((D, D))
        GS = np.zeros((D, D))
        for c in range(n_chunks - 1, -1, -1):
            t0 = c * chunk
            t1 = min(T, t0 + chunk)
            cs = t1 - t0
            mtr = np.empty((cs + 1, D, D))
            strj = np.empty((cs + 1, D, D))
            qs = np.empty((cs, D))
            ks = np.empty((cs, D))
            vs = np.empty((cs, D))
            rs = np.empty(cs)
            ss = np.empty((cs, D))
            for i in range(D):
                for jj in range(D):
                    mtr[0, i, jj] = mb[c, i, jj]
                    strj[0, i, jj] = sb[c, i, jj]
            for j in range(cs):
                t = t0 + j
                xt = x[b, t]
                q = np.dot(xt, wq)
                k = np.dot(xt, wk)
                v = np.dot(xt, wv)
                nrm2 = NORM_EPS
                for i in range(D):
                    nrm2 += k[i] * k[i]
                rinv = 1.0 / np.sqrt(nrm2)
                for i in range(D):
                    qs[j, i] = q[i]
                    ks[j, i] = k[i]
                    vs[j, i] = v[i]
                rs[j] = rinv
                if valid[b, t]:
                    kn = k * rinv
                    mk = np.dot(mtr[j], kn)
                    for i in range(D):
                        ss[j, i] = v[i] - mk[i]
                    for i in range(D):
                        for jj in range(D):
                            strj[j + 1, i, jj] = eta * strj[j, i, jj] + ss[j, i] * kn[jj]
                            mtr[j + 1, i, jj] = (1.0 - alpha) * mtr[j, i, jj] + theta * strj[j + 1, i, jj]
                else:
                    for i in range(D):
                        ss[j, i] = 0.0
                        for jj in range(D):
                            mtr[j + 1, i, jj] = mtr[j, i, jj]
                            strj[j + 1, i, jj] = strj[j, i, jj]

            for j in range(cs - 1, -1, -1):
                t = t0 + j
                gyt = gy[b, t]
                gq = np.dot(gyt, mtr[j + 1])
                for i in range(D):
                    for jj in range(D):
                        GM[i, jj] += gyt[i] * qs[j, jj]
                gk = np.zeros(D)
                gv = np.zeros(D)
                if valid[b, t]:
                    rinv = rs[j]
                    kn = ks[j] * rinv
                    ga = 0.0
                    gt = 0.0
                    for i in range(D):
                        for jj in range(D):
                            ga -= GM[i, jj] * mtr[j, i, jj]
                            gt += GM[i, jj] * strj[j + 1, i, jj]
                            GS[i, jj] += theta * GM[i, jj]
                    ge = 0.0
                    for i in range(D):
                        for jj in range(D):
                            ge += GS[i, jj] * strj[j, i, jj]
                    gscal[0] += ga
                    gscal[1] += ge
                    gscal[2] += gt
                    gsur = np.dot(GS, kn)
                    gkn = np.dot(ss[j], GS) - np.dot(gsur, mtr[j])
                    for i in range(D):
                        for jj in range(D):
                            GM[i, jj] = (1.0 - alpha) * GM[i, jj] - gsur[i] * kn[jj]
                            GS[i, jj] = eta * GS[i, jj]
                    dot = 0.0
                    for i in range(D):
                        dot += ks[j, i] * gkn[i]
                    for i in range(D):
                        gk[i] = rinv * gkn[i] - dot * rinv * rinv * rinv * ks[j, i]
                        gv[i] = gsur[i]
                gxt = np.dot(wq, gq) + np.dot(wk, gk) + np.dot(wv, gv)
                xt = x[b, t]
                for i in range(D):
                    gx[b, t, i] += gxt[i]
                    for jj in range(D):
                        gwq[i, jj] += xt[i] * gq[jj]
                        gwk[i, jj] += xt[i] * gk[jj]
                        gwv[i, jj] += xt[i] * gv[jj]


def titans_fwd(x, wq, wk, wv, alpha, eta, theta, valid, chunk, m0, s0):
    B, T, D = x.shape
    y = np.empty((B, T, D))
    mfin = np.empty((B, D, D))
    sfin = np.empty((B, D, D))
    _fwd_kernel(x, wq, wk, wv, alpha, eta, theta, valid, chunk, m0, s0, y, mfin, sfin)
    return y, mfin, sfin


def titans_bwd(x, wq, wk, wv, alpha, eta, theta, valid, chunk, m0, s0, gy):
    B, T, D = x.shape
    gx = np.zeros_like(x)
    gwq = np.zeros((D, D))
    gwk = np.zeros((D, D))
    gwv = np.zeros((D, D))
    gscal = np.zeros(3)
    _bwd_kernel(x, wq, wk, wv, alpha, eta, theta, valid, chunk, m0, s0, gy, gx, gwq, gwk, gwv, gscal)
    return gx, gwq, gwk, gwv, gscal[0], gscal[1], gscal[2]
