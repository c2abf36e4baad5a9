"""Linear-cost benchmark and backend comparison.

``bench_encoder`` measures forward wall time of the encoder at growing token
counts next to an analytic FLOP estimate: both should scale linearly. A
quadratic-attention stub is bundled as the contrast case, and
``compare_backends`` times the numba kernels against the pure-numpy
fallbacks on identical inputs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .hope import HopeBlockParams, encode
from .rng import RngState
from .tensor import Tensor, no_grad


def flops_block(n_tokens: int, cfg: ModelConfig) -> int:
    """Analytic forward FLOP count of one encoder block at ``n_tokens`` tokens."""
    d = cfg.d_model
    h = cfg.ffn_mult * d
    levels = cfg.cms_levels
    n_chunks = (n_tokens + cfg.chunk_size - 1) // cfg.chunk_size
    ln = 3 * 8 * d * n_tokens
    titans = n_tokens * (6 * d * d + 2 * d * d + 3 * d * d + 3 * d * d + 2 * d * d + 8 * d)
    cms_reads = n_tokens * levels * 6 * d
    cms_proj = n_chunks * levels * 4 * d * d
    cms_mean = n_tokens * d
    ffn = n_tokens * (2 * d * h + 8 * h + 2 * h * d)
    residual = 3 * d * n_tokens
    return ln + titans + cms_reads + cms_proj + cms_mean + ffn + residual


def flops_encoder(n_patch_tokens: int, cfg: ModelConfig) -> int:
    """Forward FLOPs of the whole stack for N patch tokens plus the CLS slot."""
    return cfg.depth * flops_block(n_patch_tokens + 1, cfg)


def quadratic_attention_stub(x: np.ndarray) -> np.ndarray:
    """Single full-attention layer over raw tokens: the O(T^2) contrast case."""
    scale = 1.0 / np.sqrt(x.shape[-1])
    scores = np.matmul(x, np.swapaxes(x, -1, -2)) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    return np.matmul(weights, x)


def _median_time(fn, repeats: int) -> float:
    # calibrate an inner loop so each sample is long enough to time reliably
    fn()
    t0 = time.perf_counter()
    fn()
    pilot = time.perf_counter() - t0
    inner = max(1, int(0.005 / max(pilot, 1e-7)))
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter() - t0) / inner)
    return float(np.median(samples))


@dataclass
class BenchRow:
    tokens: int
    seconds: float
    flops: int


def bench_encoder(lengths: list[int], cfg: ModelConfig, repeats: int = 20, batch: int = 8) -> list[BenchRow]:
    """Median forward wall time of the encoder at each patch-token count."""
    rng = RngState(0)
    blocks = [
        HopeBlockParams.init(cfg.d_model, cfg.cms_levels, cfg.chunk_size, rng.spawn(f"b{i}"), cfg.ffn_mult, cfg.dropout)
        for i in range(cfg.depth)
    ]
    rows = []
    for n in lengths:
        tokens = Tensor(rng.spawn(f"x{n}").normal((batch, n + 1, cfg.d_model), 0.0, 0.5))
        valid = np.ones((batch, n + 1), dtype=bool)

        def run(tokens=tokens, valid=valid):
            with no_grad():
                encode(tokens, valid, blocks, training=False)

        rows.append(BenchRow(tokens=n, seconds=_median_time(run, repeats), flops=flops_encoder(n, cfg)))
    return rows


def bench_quadratic(lengths: list[int], repeats: int = 20, batch: int = 8, width: int = 32) -> list[BenchRow]:
    """Time the O(T^2) stub; width/batch chosen so the T^2 terms dominate."""
    rng = RngState(0)
    rows = []
    for n in lengths:
        x = rng.spawn(f"q{n}").normal((batch, n + 1, width), 0.0, 0.5)

        def run(x=x):
            quadratic_attention_stub(x)

        rows.append(BenchRow(tokens=n, seconds=_median_time(run, repeats), flops=0))
    return rows


def compare_backends(cfg: ModelConfig, batch: int = 8, tokens: int = 33, repeats: int = 10) -> list[dict]:
    """Time the jitted kernels against the numpy fallbacks on identical inputs."""
    from .kernels import cms_np, titans_np

    try:
        from .kernels import cms_nb, titans_nb
    except ImportError:
        titans_nb = cms_nb = None

    rng = RngState(1)
    d = cfg.d_model
    x = rng.normal((batch, tokens, d), 0.0, 0.5)
    gy = rng.normal((batch, tokens, d), 0.0, 0.5)
    wq, wk, wv = (rng.normal((d, d), 0.0, 0.1) for _ in range(3))
    valid = np.ones((batch, tokens), dtype=np.uint8)
    m0 = np.zeros((batch, d, d))
    s0 = np.zeros((batch, d, d))
    levels = cfg.cms_levels
    rp = rng.normal((levels, d, d), 0.0, 0.1)
    wp = rng.normal((levels, d, d), 0.0, 0.1)
    gates = rng.normal((levels, d), 0.0, 0.1)
    gammas = 1.0 - 2.0 ** -np.arange(1, levels + 1, dtype=np.float64)
    mm0 = np.zeros((batch, levels, d))

    cases = {
        "titans_fwd": lambda mod: lambda: mod.titans_fwd(x, wq, wk, wv, 0.1, 0.6, 0.25, valid, cfg.chunk_size, m0, s0),
        "titans_bwd": lambda mod: lambda: mod.titans_bwd(x, wq, wk, wv, 0.1, 0.6, 0.25, valid, cfg.chunk_size, m0, s0, gy),
        "cms_fwd": lambda mod: lambda: mod.cms_fwd(x, rp, wp, gates, gammas, valid, cfg.chunk_size, mm0),
        "cms_bwd": lambda mod: lambda: mod.cms_bwd(x, rp, wp, gates, gammas, valid, cfg.chunk_size, mm0, gy),
    }
    mods = {"titans": (titans_np, titans_nb), "cms": (cms_np, cms_nb)}
    out = []
    for name, make in cases.items():
        np_mod, nb_mod = mods[name.split("_")[0]]
        t_np = _median_time(make(np_mod), repeats)
        t_nb = _median_time(make(nb_mod), repeats) if nb_mod is not None else float("nan")
        out.append({"kernel": name, "numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb if nb_mod else float("nan")})
    return out
