"""Pure-numpy implementation of the short-term associative memory recurrence.

Per token, in order: project query/key/value, l2-normalize the key, form the
surprise (prediction error) against the current memory readout, fold it into
a momentum accumulator, write the accumulator into the decaying memory
matrix, then read with the query. Update precedes read; tokens flagged
invalid never write but still read.

This is the fallback backend; the numba twin in ``titans_nb`` implements the
same recurrence with explicit loops. Select with the TSMEM_NUMBA env flag.
"""

from __future__ import annotations

import numpy as np

NORM_EPS = 1e-12


def _matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    # (B,D,D) @ (B,D) -> (B,D)
    return np.einsum("bij,bj->bi", m, v)


def _vecmat(v: np.ndarray, m: np.ndarray) -> np.ndarray:
    # (B,D) @ (B,D,D) -> (B,D)  (i.e. m^T v per batch element)
    return np.einsum("bi,bij->bj", v, m)


def titans_fwd(x, wq, wk, wv, alpha, eta, theta, valid, chunk, m0, s0):
    B, T, D = x.shape
    y = np.empty((B, T, D))
    M = m0.copy()
    S = s0.copy()
    for t in range(T):
        xt = x[:, t, :]
        q = xt @ wq
        k = xt @ wk
        v = xt @ wv
        rinv = 1.0 / np.sqrt((k * k).sum(axis=1) + NORM_EPS)
        kn = k * rinv[:, None]
        s = v - _matvec(M, kn)
        s_new = eta * S + s[:, :, None] * kn[:, None, :]
        m_new = (1.0 - alpha) * M + theta * s_new
        w = valid[:, t].astype(bool)
        M[w] = m_new[w]
        S[w] = s_new[w]
        y[:, t, :] = _matvec(M, q)
    return y, M, S


def titans_bwd(x, wq, wk, wv, alpha, eta, theta, valid, chunk, m0, s0, gy):
    B, T, D = x.shape
    n_chunks = (T + chunk - 1) // chunk

    # Recompute chunk-boundary states; per-token states are rebuilt per chunk
    # below so peak memory stays at O(B * chunk * D^2) instead of O(B * T * D^2).
    mb = np.empty((B, n_chunks, D, D))
    sb = np.empty((B, n_chunks, D, D))
    M = m0.copy()
    S = s0.copy()
    for t in range(T):
        if t % chunk == 0:
            c = t // chunk
            mb[:, c] = M
            sb[:, c] = S
        xt = x[:, t, :]
        k = xt @ wk
        v = xt @ wv
        rinv = 1.0 / np.sqrt((k * k).sum(axis=1) + NORM_EPS)
        kn = k * rinv[:, None]
        s = v - _matvec(M, kn)
        s_new = eta * S + s[:, :, None] * kn[:, None, :]
        m_new = (1.0 - alpha) * M + theta * s_new
        w = valid[:, t].astype(bool)
        M[w] = m_new[w]
        S[w] = s_new[w]

    gx = np.zeros_like(x)
    gwq = np.zeros((D, D))
    gwk = np.zeros((D, D))
    gwv = np.zeros((D, D))
    galpha = 0.0
    geta = 0.0
    gtheta = 0.0
    GM = np.zeros((B, D, D))
    GS = np.zeros((B, D, D))

    for c in range(n_chunks - 1, -1, -1):
        t0 = c * chunk
        t1 = min(T, t0 + chunk)
        cs = t1 - t0
        # Rebuild the per-token state trajectory inside the chunk.
        mtr = np.empty((cs + 1, B, D, D))
        str_ = np.empty((cs + 1, B, D, D))
        qs = np.empty((cs, B, D))
        ks = np.empty((cs, B, D))
        vs = np.empty((cs, B, D))
        rs = np.empty((cs, B))
        ss = np.empty((cs, B, D))
        mtr[0] = mb[:, c]
        str_[0] = sb[:, c]
        for j in range(cs):
            t = t0 + j
            xt = x[:, t, :]
            qs[j] = xt @ wq
            ks[j] = xt @ wk
            vs[j] = xt @ wv
            rs[j] = 1.0 / np.sqrt((ks[j] * ks[j]).sum(axis=1) + NORM_EPS)
            kn = ks[j] * rs[j][:, None]
            ss[j] = vs[j] - _matvec(mtr[j], kn)
            s_new = eta * str_[j] + ss[j][:, :, None] * kn[:, None, :]
            m_new = (1.0 - alpha) * mtr[j] + theta * s_new
            w = valid[:, t].astype(bool)[:, None, None]
            mtr[j + 1] = np.where(w, m_new, mtr[j])
            str_[j + 1] = np.where(w, s_new, str_[j])

        for j in range(cs - 1, -1, -1):
            t = t0 + j
            gyt = gy[:, t, :]
            w = valid[:, t].astype(bool)
            wf = w[:, None, None]
            # y_t = M_t q_t
            gq = _vecmat(gyt, mtr[j + 1])
            GM += gyt[:, :, None] * qs[j][:, None, :]
            kn = ks[j] * rs[j][:, None]
            # write-path chain, valid rows only
            galpha -= (GM * mtr[j])[w].sum()
            gtheta += (GM * str_[j + 1])[w].sum()
            gs_state = GS + theta * GM
            geta += (gs_state * str_[j])[w].sum()
            gsur = _matvec(gs_state, kn)
            gkn = _vecmat(ss[j], gs_state) - _vecmat(gsur, mtr[j])
            gm_prev = (1.0 - alpha) * GM - gsur[:, :, None] * kn[:, None, :]
            GM = np.where(wf, gm_prev, GM)
            GS = np.where(wf, eta * gs_state, GS)
            # key normalization: kn = k / sqrt(|k|^2 + eps)
            dot = (ks[j] * gkn).sum(axis=1)
            gk = rs[j][:, None] * gkn - (dot * rs[j] ** 3)[:, None] * ks[j]
            gk[~w] = 0.0
            gv = gsur.copy()
            gv[~w] = 0.0
            xt = x[:, t, :]
            gx[:, t, :] += gq @ wq.T + gk @ wk.T + gv @ wv.T
            gwq += xt.T @ gq
            gwk += xt.T @ gk
            gwv += xt.T @ gv
    return gx, gwq, gwk, gwv, galpha, geta, gtheta
