"""The dual-memory encoder: stacked blocks of short-term associative memory,
hierarchical EMA memory, and a GELU feed-forward, residually composed with
pre-normalization. Cost is linear in token count.

The two recurrences run through hand-written forward/backward kernels (see
``tsmem.kernels``); everything else is built from the autodiff primitives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .rng import RngState
from .tensor import Tensor, dropout, gelu, layer_norm, record_op, sigmoid

LN_EPS = 1e-5


def cms_decay_schedule(levels: int) -> np.ndarray:
    """Geometric decay per level: gamma_l = 1 - 2^-l, strictly slower higher up."""
    return 1.0 - 2.0 ** -np.arange(1, levels + 1, dtype=np.float64)


# -- parameter containers ---------------------------------------------------------


def _glorot(rng: RngState, fan_in: int, fan_out: int, shape) -> Tensor:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return Tensor(rng.normal(shape, 0.0, std), requires_grad=True)


@dataclass
class TitansParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    alpha_raw: Tensor  # sigmoid -> forgetting rate in (0,1)
    eta_raw: Tensor  # sigmoid -> momentum in (0,1)
    theta_raw: Tensor  # sigmoid -> write rate in (0,1)
    chunk_size: int

    @staticmethod
    def init(d: int, chunk_size: int, rng: RngState) -> "TitansParams":
        def raw(p):
            return Tensor(np.log(p / (1.0 - p)), requires_grad=True)

        return TitansParams(
            wq=_glorot(rng, d, d, (d, d)),
            wk=_glorot(rng, d, d, (d, d)),
            wv=_glorot(rng, d, d, (d, d)),
            alpha_raw=raw(0.1),
            eta_raw=raw(0.6),
            theta_raw=raw(0.25),
            chunk_size=chunk_size,
        )

    def gates(self) -> tuple[Tensor, Tensor, Tensor]:
        return sigmoid(self.alpha_raw), sigmoid(self.eta_raw), sigmoid(self.theta_raw)

    def parameters(self):
        yield "wq", self.wq
        yield "wk", self.wk
        yield "wv", self.wv
        yield "alpha_raw", self.alpha_raw
        yield "eta_raw", self.eta_raw
        yield "theta_raw", self.theta_raw


@dataclass
class TitansState:
    memory: np.ndarray  # (B, D, D)
    momentum: np.ndarray  # (B, D, D)

    @staticmethod
    def zeros(batch: int, d: int) -> "TitansState":
        return TitansState(np.zeros((batch, d, d)), np.zeros((batch, d, d)))


@dataclass
class CmsParams:
    rproj: Tensor  # (levels, D, D) read projections
    wproj: Tensor  # (levels, D, D) write projections
    gate: Tensor  # (levels, D) per-level input gates
    gammas: np.ndarray  # (levels,) fixed decay schedule, strictly increasing

    def __post_init__(self):
        g = np.asarray(self.gammas)
        if not (np.all(g > 0) and np.all(g < 1) and np.all(np.diff(g) > 0)):
            raise ValueError(f"decay schedule must be strictly increasing in (0,1), got {g}")

    @staticmethod
    def init(d: int, levels: int, rng: RngState) -> "CmsParams":
        return CmsParams(
            rproj=_glorot(rng, d, d, (levels, d, d)),
            wproj=_glorot(rng, d, d, (levels, d, d)),
            gate=Tensor(rng.normal((levels, d), 0.0, 0.02), requires_grad=True),
            gammas=cms_decay_schedule(levels),
        )

    def parameters(self):
        yield "rproj", self.rproj
        yield "wproj", self.wproj
        yield "gate", self.gate


@dataclass
class HopeBlockParams:
    titans: TitansParams
    cms: CmsParams
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    ln3_g: Tensor
    ln3_b: Tensor
    dropout: float = 0.1

    @staticmethod
    def init(d: int, levels: int, chunk_size: int, rng: RngState, ffn_mult: int = 4, dropout: float = 0.1) -> "HopeBlockParams":
        h = ffn_mult * d
        return HopeBlockParams(
            titans=TitansParams.init(d, chunk_size, rng.spawn("titans")),
            cms=CmsParams.init(d, levels, rng.spawn("cms")),
            w1=_glorot(rng.spawn("ffn"), d, h, (d, h)),
            b1=Tensor(np.zeros(h), requires_grad=True),
            w2=_glorot(rng.spawn("ffn2"), h, d, (h, d)),
            b2=Tensor(np.zeros(d), requires_grad=True),
            ln1_g=Tensor(np.ones(d), requires_grad=True),
            ln1_b=Tensor(np.zeros(d), requires_grad=True),
            ln2_g=Tensor(np.ones(d), requires_grad=True),
            ln2_b=Tensor(np.zeros(d), requires_grad=True),
            ln3_g=Tensor(np.ones(d), requires_grad=True),
            ln3_b=Tensor(np.zeros(d), requires_grad=True),
            dropout=dropout,
        )

    def parameters(self):
        for name, p in self.titans.parameters():
            yield f"titans.{name}", p
        for name, p in self.cms.parameters():
            yield f"cms.{name}", p
        for name in ("w1", "b1", "w2", "b2", "ln1_g", "ln1_b", "ln2_g", "ln2_b", "ln3_g", "ln3_b"):
            yield name, getattr(self, name)


@dataclass
class EncoderOutput:
    h: Tensor  # (B, N+1, D)
    h_cls: Tensor  # (B, D)


# -- memory sublayers -------------------------------------------------------------


def _as_valid(valid: np.ndarray, b: int, t: int) -> np.ndarray:
    valid = np.asarray(valid)
    if valid.shape != (b, t):
        raise ValueError(f"valid mask shape {valid.shape} does not match tokens ({b}, {t})")
    return np.ascontiguousarray(valid.astype(np.uint8))


def titans_forward(
    x: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    alpha: Tensor,
    eta: Tensor,
    theta: Tensor,
    valid: np.ndarray,
    chunk_size: int,
    init: TitansState | None = None,
) -> tuple[Tensor, TitansState]:
    """Run the short-term memory over a (B, T, D) batch.

    ``alpha``/``eta``/``theta`` are scalar tensors already squashed into (0,1)
    (tests may pass boundary constants directly). Invalid tokens never write
    to memory but still produce readouts. Returned final states are plain
    arrays and carry no gradient.
    """
    b, t, d = x.shape
    for name, w in (("wq", wq), ("wk", wk), ("wv", wv)):
        if w.shape != (d, d):
            raise ValueError(f"{name} shape {w.shape} does not match model width {d}")
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    v8 = _as_valid(valid, b, t)
    if init is None:
        init = TitansState.zeros(b, d)
    a, e, th = float(alpha.item()), float(eta.item()), float(theta.item())
    y, mfin, sfin = K.titans_fwd(
        x.data, wq.data, wk.data, wv.data, a, e, th, v8, chunk_size, init.memory, init.momentum
    )

    def backward(g):
        gx, gwq, gwk, gwv, ga, ge, gth = K.titans_bwd(
            x.data, wq.data, wk.data, wv.data, a, e, th, v8, chunk_size, init.memory, init.momentum, g
        )
        if x.requires_grad:
            x.accumulate_grad(gx)
        if wq.requires_grad:
            wq.accumulate_grad(gwq)
        if wk.requires_grad:
            wk.accumulate_grad(gwk)
        if wv.requires_grad:
            wv.accumulate_grad(gwv)
        if alpha.requires_grad:
            alpha.accumulate_grad(np.asarray(ga))
        if eta.requires_grad:
            eta.accumulate_grad(np.asarray(ge))
        if theta.requires_grad:
            theta.accumulate_grad(np.asarray(gth))

    out = record_op(y, (x, wq, wk, wv, alpha, eta, theta), backward)
    return out, TitansState(mfin, sfin)


def cms_forward(
    x: Tensor,
    params: CmsParams,
    valid: np.ndarray,
    chunk_size: int,
    init: np.ndarray | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Run the hierarchical EMA memory over a (B, T, D) batch.

    Every token gates a read of the per-level states as they stood before its
    own chunk; after each chunk the states decay toward the projected mean of
    the chunk's valid tokens. Returns (outputs, final per-level states).
    """
    b, t, d = x.shape
    levels = params.rproj.shape[0]
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    v8 = _as_valid(valid, b, t)
    m0 = np.zeros((b, levels, d)) if init is None else np.asarray(init, dtype=np.float64)
    if m0.shape != (b, levels, d):
        raise ValueError(f"init state shape {m0.shape} does not match ({b}, {levels}, {d})")
    gammas = np.ascontiguousarray(params.gammas, dtype=np.float64)
    y, mfin = K.cms_fwd(x.data, params.rproj.data, params.wproj.data, params.gate.data, gammas, v8, chunk_size, m0)

    def backward(g):
        gx, grp, gwp, gg = K.cms_bwd(
            x.data, params.rproj.data, params.wproj.data, params.gate.data, gammas, v8, chunk_size, m0, g
        )
        if x.requires_grad:
            x.accumulate_grad(gx)
        if params.rproj.requires_grad:
            params.rproj.accumulate_grad(grp)
        if params.wproj.requires_grad:
            params.wproj.accumulate_grad(gwp)
        if params.gate.requires_grad:
            params.gate.accumulate_grad(gg)

    out = record_op(y, (x, params.rproj, params.wproj, params.gate), backward)
    return out, mfin


# -- block and encoder -------------------------------------------------------------


def hope_block(
    x: Tensor,
    params: HopeBlockParams,
    valid: np.ndarray,
    rng: RngState | None = None,
    training: bool = False,
) -> Tensor:
    """One encoder block: pre-norm residual Titans, CMS, then GELU FFN."""
    p = params.dropout if training else 0.0
    alpha, eta, theta = params.titans.gates()
    h = layer_norm(x, params.ln1_g, params.ln1_b, LN_EPS)
    t_out, _ = titans_forward(
        h, params.titans.wq, params.titans.wk, params.titans.wv, alpha, eta, theta, valid, params.titans.chunk_size
    )
    x = x + dropout(t_out, p, rng, training)
    h = layer_norm(x, params.ln2_g, params.ln2_b, LN_EPS)
    c_out, _ = cms_forward(h, params.cms, valid, params.titans.chunk_size)
    x = x + dropout(c_out, p, rng, training)
    h = layer_norm(x, params.ln3_g, params.ln3_b, LN_EPS)
    f = gelu(h @ params.w1 + params.b1) @ params.w2 + params.b2
    return x + dropout(f, p, rng, training)


def encode(
    tokens: Tensor,
    valid: np.ndarray,
    blocks: list[HopeBlockParams],
    rng: RngState | None = None,
    training: bool = False,
) -> EncoderOutput:
    """Apply the block stack with fresh zero memory states per batch.

    ``valid`` flags real tokens (CLS plus non-padding patches); padded slots
    are excluded from all memory writes but still read.
    """
    h = tokens
    for block in blocks:
        h = hope_block(h, block, valid, rng, training)
    return EncoderOutput(h=h, h_cls=h[:, 0, :])
