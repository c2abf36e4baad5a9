"""Pure-numpy implementation of the hierarchical EMA memory.

Tokens are processed in the same chunks as the short-term memory. Every token
reads the per-level states as they stood before its own chunk (reads are
causal); after a chunk, each level's state decays toward the projected mean
of the chunk's valid tokens. Chunks with no valid token write nothing.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def cms_fwd(x, rproj, wproj, gates, gammas, valid, chunk, m0):
    B, T, D = x.shape
    nl = rproj.shape[0]
    y = np.empty((B, T, D))
    m = m0.copy()  # (B, nl, D)
    n_chunks = (T + chunk - 1) // chunk
    for c in range(n_chunks):
        t0 = c * chunk
        t1 = min(T, t0 + chunk)
        xs = x[:, t0:t1, :]
        # reads against the pre-chunk state
        r = np.einsum("bld,lde->ble", m, rproj)  # (B, nl, D)
        a = _sigmoid(xs[:, :, None, :] * gates[None, None, :, :])  # (B, cs, nl, D)
        y[:, t0:t1, :] = (a * r[:, None, :, :]).sum(axis=2)
        # write: decay toward the projected mean of the chunk's valid tokens
        vmask = valid[:, t0:t1].astype(np.float64)
        nv = vmask.sum(axis=1)
        has = nv > 0
        u = (xs * vmask[:, :, None]).sum(axis=1) / np.maximum(nv, 1.0)[:, None]
        pu = np.einsum("bd,lde->ble", u, wproj)
        m_new = gammas[None, :, None] * m + (1.0 - gammas)[None, :, None] * pu
        m = np.where(has[:, None, None], m_new, m)
    return y, m


def cms_bwd(x, rproj, wproj, gates, gammas, valid, chunk, m0, gy):
    B, T, D = x.shape
    nl = rproj.shape[0]
    n_chunks = (T + chunk - 1) // chunk

    # recompute pre-chunk states
    pre = np.empty((n_chunks, B, nl, D))
    m = m0.copy()
    for c in range(n_chunks):
        t0 = c * chunk
        t1 = min(T, t0 + chunk)
        pre[c] = m
        xs = x[:, t0:t1, :]
        vmask = valid[:, t0:t1].astype(np.float64)
        nv = vmask.sum(axis=1)
        has = nv > 0
        u = (xs * vmask[:, :, None]).sum(axis=1) / np.maximum(nv, 1.0)[:, None]
        pu = np.einsum("bd,lde->ble", u, wproj)
        m_new = gammas[None, :, None] * m + (1.0 - gammas)[None, :, None] * pu
        m = np.where(has[:, None, None], m_new, m)

    gx = np.zeros_like(x)
    grproj = np.zeros_like(rproj)
    gwproj = np.zeros_like(wproj)
    ggates = np.zeros_like(gates)
    gm = np.zeros((B, nl, D))

    for c in range(n_chunks - 1, -1, -1):
        t0 = c * chunk
        t1 = min(T, t0 + chunk)
        xs = x[:, t0:t1, :]
        p = pre[c]
        vmask = valid[:, t0:t1].astype(np.float64)
        nv = vmask.sum(axis=1)
        has = nv > 0
        u = (xs * vmask[:, :, None]).sum(axis=1) / np.maximum(nv, 1.0)[:, None]
        # write backward (series with a valid token only)
        gm_eff = gm * has[:, None, None]
        coef = (1.0 - gammas)[None, :, None]
        gwproj += np.einsum("bd,ble->lde", u, coef * gm_eff)
        gu = np.einsum("ble,lde->bd", coef * gm_eff, wproj)
        share = gu / np.maximum(nv, 1.0)[:, None]
        gx[:, t0:t1, :] += share[:, None, :] * vmask[:, :, None]
        gm = np.where(has[:, None, None], gammas[None, :, None] * gm, gm)
        # read backward
        r = np.einsum("bld,lde->ble", p, rproj)
        a = _sigmoid(xs[:, :, None, :] * gates[None, None, :, :])
        gys = gy[:, t0:t1, :]
        gr = (a * gys[:, :, None, :]).sum(axis=1)  # (B, nl, D)
        dact = gys[:, :, None, :] * r[:, None, :, :] * a * (1.0 - a)
        gx[:, t0:t1, :] += (dact * gates[None, None, :, :]).sum(axis=2)
        ggates += (dact * xs[:, :, None, :]).sum(axis=(0, 1))
        grproj += np.einsum("bld,ble->lde", p, gr)
        gm += np.einsum("ble,lde->bld", gr, rproj)
    return gx, grproj, gwproj, ggates
