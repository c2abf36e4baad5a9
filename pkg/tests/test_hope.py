import numpy as np
import pytest

from tsmem import kernels as K
from tsmem.bench import flops_encoder
from tsmem.config import ModelConfig
from tsmem.gradcheck import finite_diff_check
from tsmem.hope import (
    CmsParams,
    HopeBlockParams,
    TitansParams,
    TitansState,
    cms_decay_schedule,
    cms_forward,
    encode,
    hope_block,
    titans_forward,
)
from tsmem.rng import RngState
from tsmem.tensor import Tensor, gelu, layer_norm, no_grad


def reference_titans(x, wq, wk, wv, alpha, eta, theta, valid, m0=None, s0=None):
    """Independent per-sample, per-token oracle for the memory recurrence."""
    b, t, d = x.shape
    y = np.zeros_like(x)
    mfin = np.zeros((b, d, d))
    sfin = np.zeros((b, d, d))
    for i in range(b):
        m = np.zeros((d, d)) if m0 is None else m0[i].copy()
        s = np.zeros((d, d)) if s0 is None else s0[i].copy()
        for j in range(t):
            q, k, v = x[i, j] @ wq, x[i, j] @ wk, x[i, j] @ wv
            kn = k / np.sqrt(k @ k + 1e-12)
            if valid[i, j]:
                sur = v - m @ kn
                s = eta * s + np.outer(sur, kn)
                m = (1 - alpha) * m + theta * s
            y[i, j] = m @ q
        mfin[i], sfin[i] = m, s
    return y, mfin, sfin


def reference_cms(x, rproj, wproj, gates, gammas, valid, chunk, m0=None):
    b, t, d = x.shape
    nl = rproj.shape[0]
    y = np.zeros_like(x)
    mfin = np.zeros((b, nl, d))
    for i in range(b):
        m = np.zeros((nl, d)) if m0 is None else m0[i].copy()
        for t0 in range(0, t, chunk):
            t1 = min(t, t0 + chunk)
            r = np.array([m[l] @ rproj[l] for l in range(nl)])
            for j in range(t0, t1):
                a = 1.0 / (1.0 + np.exp(-gates * x[i, j]))
                y[i, j] = (a * r).sum(axis=0)
            vj = [j for j in range(t0, t1) if valid[i, j]]
            if vj:
                u = x[i, vj].mean(axis=0)
                for l in range(nl):
                    m[l] = gammas[l] * m[l] + (1 - gammas[l]) * (u @ wproj[l])
        mfin[i] = m
    return y, mfin


def _rand_setup(seed=0, b=2, t=9, d=6, chunk=4):
    rng = RngState(seed)
    x = rng.normal((b, t, d), 0, 0.7)
    wq, wk, wv = (rng.normal((d, d), 0, 0.4) for _ in range(3))
    valid = np.ones((b, t), dtype=bool)
    valid[1, 6:] = False
    return rng, x, wq, wk, wv, valid


def test_titans_matches_reference_loop():
    rng, x, wq, wk, wv, valid = _rand_setup()
    y, mfin, sfin = K.titans_fwd(x, wq, wk, wv, 0.2, 0.7, 0.3, valid.astype(np.uint8), 4,
                                 np.zeros((2, 6, 6)), np.zeros((2, 6, 6)))
    ry, rm, rs = reference_titans(x, wq, wk, wv, 0.2, 0.7, 0.3, valid)
    assert np.allclose(y, ry, atol=1e-12)
    assert np.allclose(mfin, rm, atol=1e-12)
    assert np.allclose(sfin, rs, atol=1e-12)


def test_titans_zero_write_rate_freezes_memory():
    rng, x, wq, wk, wv, valid = _rand_setup(1)
    m0 = rng.normal((2, 6, 6), 0, 0.5)
    s0 = rng.normal((2, 6, 6), 0, 0.5)
    # theta=0 and alpha=0: no writes, no forgetting -> y_t = M0 q_t throughout
    y, final = titans_forward(
        Tensor(x), Tensor(wq), Tensor(wk), Tensor(wv),
        Tensor(0.0), Tensor(0.5), Tensor(0.0), valid, 4, TitansState(m0.copy(), s0.copy()),
    )
    frozen = np.einsum("bij,btj->bti", m0, x @ wq)
    assert np.allclose(y.data, frozen, atol=1e-12)
    assert np.array_equal(final.memory, m0)
    # theta=0 with zero init: memory stays exactly zero regardless of alpha
    y0, final0 = titans_forward(
        Tensor(x), Tensor(wq), Tensor(wk), Tensor(wv),
        Tensor(0.3), Tensor(0.5), Tensor(0.0), valid, 4,
    )
    assert np.abs(y0.data).max() == 0.0
    assert np.abs(final0.memory).max() == 0.0


def test_titans_single_token_hand_rule():
    # from zero state, one token: y1 = theta * (k_hat . q) * v
    rng = RngState(3)
    d = 5
    x = rng.normal((1, 1, d), 0, 1.0)
    wq, wk, wv = (rng.normal((d, d), 0, 0.6) for _ in range(3))
    theta = 0.37
    y, _ = titans_forward(
        Tensor(x), Tensor(wq), Tensor(wk), Tensor(wv),
        Tensor(0.25), Tensor(0.9), Tensor(theta), np.ones((1, 1), dtype=bool), 8,
    )
    q, k, v = x[0, 0] @ wq, x[0, 0] @ wk, x[0, 0] @ wv
    kn = k / np.sqrt(k @ k + 1e-12)
    assert np.allclose(y.data[0, 0], theta * (kn @ q) * v, atol=1e-12)


def test_titans_repeated_token_shrinks_surprise():
    # two identical tokens: ||s2|| = |1 - theta| * ||s1|| < ||s1|| for theta in (0,1)
    rng = RngState(4)
    d = 6
    xt = rng.normal((d,), 0, 1.0)
    wk = rng.normal((d, d), 0, 0.5)
    wv = rng.normal((d, d), 0, 0.5)
    for theta in (0.1, 0.5, 0.9):
        k = xt @ wk
        kn = k / np.sqrt(k @ k + 1e-12)
        v = xt @ wv
        m = np.zeros((d, d))
        s = np.zeros((d, d))
        norms = []
        for _ in range(2):
            sur = v - m @ kn
            norms.append(np.linalg.norm(sur))
            s = 0.5 * s + np.outer(sur, kn)
            m = (1 - 0.0) * m + theta * s
        assert norms[1] < norms[0]
        assert np.isclose(norms[1] / norms[0], abs(1 - theta * (kn @ kn)), atol=1e-9)


def test_cms_matches_reference_loop():
    rng, x, _, _, _, valid = _rand_setup(5)
    nl, d = 4, 6
    rp = rng.normal((nl, d, d), 0, 0.4)
    wp = rng.normal((nl, d, d), 0, 0.4)
    gates = rng.normal((nl, d), 0, 0.6)
    gammas = cms_decay_schedule(nl)
    y, mfin = K.cms_fwd(x, rp, wp, gates, gammas, valid.astype(np.uint8), 4, np.zeros((2, nl, d)))
    ry, rm = reference_cms(x, rp, wp, gates, gammas, valid, 4)
    assert np.allclose(y, ry, atol=1e-12)
    assert np.allclose(mfin, rm, atol=1e-12)


def test_cms_decay_schedule_and_edge_cases():
    gammas = cms_decay_schedule(4)
    assert np.allclose(gammas, [0.5, 0.75, 0.875, 0.9375])
    assert (np.diff(gammas) > 0).all()
    with pytest.raises(ValueError):
        CmsParams(Tensor(np.zeros((2, 3, 3))), Tensor(np.zeros((2, 3, 3))), Tensor(np.zeros((2, 3))), np.array([0.9, 0.5]))

    rng = RngState(6)
    d, nl = 4, 2
    x = rng.normal((1, 4, d), 0, 1.0)
    valid = np.ones((1, 4), dtype=bool)
    rp = rng.normal((nl, d, d), 0, 0.5)
    wp = rng.normal((nl, d, d), 0, 0.5)
    gates = rng.normal((nl, d), 0, 0.5)
    # gamma -> 1: states frozen at zero init, outputs identically zero
    y, mfin = K.cms_fwd(x, rp, wp, gates, np.array([1.0 - 1e-15, 1.0 - 1e-16]), valid.astype(np.uint8), 2, np.zeros((1, nl, d)))
    assert np.abs(y).max() < 1e-12 and np.abs(mfin).max() < 1e-12


def test_cms_two_chunk_ema_by_hand():
    rng = RngState(7)
    d = 3
    x = rng.normal((1, 4, d), 0, 1.0)
    valid = np.ones((1, 4), dtype=bool)
    rp = np.zeros((1, d, d))
    wp = rng.normal((1, d, d), 0, 1.0)
    gates = np.zeros((1, d))
    # gamma = 0: state equals the latest chunk's projected mean exactly
    _, m0 = K.cms_fwd(x, rp, wp, gates, np.array([1e-300]), valid.astype(np.uint8), 2, np.zeros((1, 1, d)))
    u2 = x[0, 2:4].mean(axis=0)
    assert np.allclose(m0[0, 0], u2 @ wp[0], atol=1e-12)
    # gamma = 0.5: two-step EMA by hand
    _, m5 = K.cms_fwd(x, rp, wp, gates, np.array([0.5]), valid.astype(np.uint8), 2, np.zeros((1, 1, d)))
    u1 = x[0, 0:2].mean(axis=0)
    hand = 0.5 * (0.5 * 0.0 + 0.5 * (u1 @ wp[0])) + 0.5 * (u2 @ wp[0])
    assert np.allclose(m5[0, 0], hand, atol=1e-12)


def _tiny_block(d=8, rng=None, dropout=0.0):
    rng = rng or RngState(8)
    return HopeBlockParams.init(d, 4, 3, rng, ffn_mult=2, dropout=dropout)


def test_block_zero_weights_is_identity():
    rng = RngState(9)
    d = 8
    params = _tiny_block(d)
    for name, p in params.parameters():
        if name.endswith(("wq", "wk", "wv", "rproj", "wproj", "gate", "w1", "w2", "b1", "b2")):
            p.data[...] = 0.0
    x = rng.normal((2, 6, d), 0, 1.0)
    valid = np.ones((2, 6), dtype=bool)
    y = hope_block(Tensor(x), params, valid, training=False)
    assert np.array_equal(y.data, x)


def test_block_gradient_check():
    rng = RngState(10)
    d = 8
    params = _tiny_block(d, rng.spawn("p"))
    x = Tensor(rng.normal((1, 4, d), 0, 0.7), requires_grad=True)
    valid = np.ones((1, 4), dtype=bool)
    target = rng.normal((1, 4, d))

    def loss():
        y = hope_block(x, params, valid, training=False)
        return ((y - Tensor(target)) ** 2).mean()

    rep = finite_diff_check(loss, [("x", x)] + list(params.parameters()), h=1e-5, tol=1e-4)
    assert rep.passed, "\n".join(rep.summary_lines())


def test_encode_depth_zero_and_determinism():
    rng = RngState(11)
    tokens = Tensor(rng.normal((2, 5, 8), 0, 1.0))
    valid = np.ones((2, 5), dtype=bool)
    out = encode(tokens, valid, [], training=False)
    assert out.h is tokens
    assert np.array_equal(out.h_cls.data, tokens.data[:, 0, :])

    blocks = [_tiny_block(8, RngState(12).spawn(f"b{i}")) for i in range(2)]
    with no_grad():
        h1 = encode(tokens, valid, blocks, training=False).h.data
        h2 = encode(tokens, valid, blocks, training=False).h.data
    assert np.array_equal(h1, h2)


def test_encode_causality_chunkwise_bitwise():
    rng = RngState(13)
    d, t, chunk = 8, 12, 3
    blocks = [HopeBlockParams.init(d, 4, chunk, rng.spawn(f"b{i}"), 2, 0.0) for i in range(2)]
    tokens = rng.normal((1, t, d), 0, 1.0)
    valid = np.ones((1, t), dtype=bool)
    with no_grad():
        base = encode(Tensor(tokens), valid, blocks, training=False).h.data
    for trial in range(20):
        pos = int(rng.uniform((), 1, t).item())
        perturbed = tokens.copy()
        perturbed[0, pos] += rng.normal((d,), 0, 0.5)
        with no_grad():
            out = encode(Tensor(perturbed), valid, blocks, training=False).h.data
        boundary = (pos // chunk) * chunk
        assert np.array_equal(out[:, :boundary], base[:, :boundary])


def test_encoder_reduces_to_ffn_stack_when_writes_disabled():
    rng = RngState(14)
    d, t = 8, 7
    x = rng.normal((2, t, d), 0, 0.8)
    valid = np.ones((2, t), dtype=bool)
    params = _tiny_block(d, rng.spawn("blk"))
    # disable all memory writes: theta -> 0 and gamma -> 1
    params.titans.theta_raw = Tensor(-745.0, requires_grad=True)  # sigmoid underflows to 0
    params.cms.gammas = np.array([1.0, 1.0, 1.0, 1.0]) - 1e-16

    y = hope_block(Tensor(x), params, valid, training=False)

    h = layer_norm(Tensor(x), params.ln3_g, params.ln3_b, 1e-5)
    ffn = gelu(h @ params.w1 + params.b1) @ params.w2 + params.b2
    ref = x + ffn.data
    assert np.allclose(y.data, ref, atol=1e-12)


def test_all_parameters_receive_gradients():
    rng = RngState(15)
    d, t = 8, 9
    params = _tiny_block(d, rng.spawn("blk"))
    x = Tensor(rng.normal((2, t, d), 0, 0.7))
    valid = np.ones((2, t), dtype=bool)
    target = rng.normal((2, t, d))
    y = hope_block(x, params, valid, training=False)
    loss = ((y - Tensor(target)) ** 2).mean()
    from tsmem.tensor import backward

    backward(loss)
    for name, p in params.parameters():
        assert p.grad is not None, f"{name} got no gradient"
        assert np.abs(p.grad).max() > 0, f"{name} gradient is identically zero"


def test_flop_count_scales_linearly():
    cfg = ModelConfig()
    for t in (32, 64, 128):
        ratio = flops_encoder(2 * t, cfg) / flops_encoder(t, cfg)
        assert 1.9 <= ratio <= 2.1


def test_padding_never_writes_memory():
    rng = RngState(16)
    d = 6
    x = rng.normal((1, 6, d), 0, 1.0)
    valid = np.array([[True, True, True, False, False, False]])
    _, mfin, sfin = K.titans_fwd(x, *(rng.normal((d, d), 0, 0.4) for _ in range(3)), 0.2, 0.6, 0.3,
                                 valid.astype(np.uint8), 2, np.zeros((1, d, d)), np.zeros((1, d, d)))
    x2 = x.copy()
    x2[0, 3:] = 99.0  # junk in padded region must not reach memory
    rng2 = RngState(16)
    ws = [rng2.normal((d, d), 0, 0.4) for _ in range(3)]
    a, m1, s1 = K.titans_fwd(x, *ws, 0.2, 0.6, 0.3, valid.astype(np.uint8), 2, np.zeros((1, d, d)), np.zeros((1, d, d)))
    b, m2, s2 = K.titans_fwd(x2, *ws, 0.2, 0.6, 0.3, valid.astype(np.uint8), 2, np.zeros((1, d, d)), np.zeros((1, d, d)))
    assert np.array_equal(m1, m2) and np.array_equal(s1, s2)
    assert np.array_equal(a[:, :3], b[:, :3])
