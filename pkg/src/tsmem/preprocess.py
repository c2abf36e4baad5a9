"""Per-instance normalization, patch tokenization, and the dual masking
machinery (stochastic training mask + padding mask).

Series arrive right-padded with zeros; a boolean prefix mask flags observed
timesteps. Normalization statistics are computed over the valid region only
and stashed so the transform stays invertible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import RngState
from .tensor import Tensor, broadcast_to, concat

REVIN_EPS = 1e-5


@dataclass
class SeriesBatch:
    """A batch of univariate series, zero-filled past each true length."""

    values: np.ndarray  # (B, L) float64
    valid: np.ndarray  # (B, L) bool, prefix mask per row
    labels: np.ndarray | None = None  # (B,) int64

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != self.valid.shape or self.values.ndim != 2:
            raise ValueError(f"values {self.values.shape} and valid {self.valid.shape} must both be (B, L)")
        counts = self.valid.sum(axis=1)
        if (counts < 2).any():
            raise ValueError("every series needs at least 2 valid timesteps")
        # prefix property: no valid step may follow an invalid one
        first_invalid = np.where(self.valid, 0, 1).argmax(axis=1)
        full = self.valid.all(axis=1)
        limit = np.where(full, self.valid.shape[1], first_invalid)
        if (counts != limit).any():
            raise ValueError("valid mask must be a prefix (series are right-padded)")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.values.shape[0],):
                raise ValueError("labels must be one integer per series")

    @property
    def batch_size(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def lengths(self) -> np.ndarray:
        return self.valid.sum(axis=1)

    def take(self, idx: np.ndarray) -> "SeriesBatch":
        labels = None if self.labels is None else self.labels[idx]
        return SeriesBatch(self.values[idx], self.valid[idx], labels)


@dataclass
class RevinStats:
    """Stashed per-series statistics plus the affine parameters that were applied."""

    mean: np.ndarray  # (B,)
    std: np.ndarray  # (B,), population std over valid region, floored at eps
    gamma: Tensor
    beta: Tensor


@dataclass
class PatchedBatch:
    tokens: Tensor  # (B, N+1, D), slot 0 is CLS
    padding_mask: np.ndarray  # (B, N) bool, patch overlaps >= 1 valid step
    train_mask: np.ndarray  # (B, N) bool, subset of padding_mask
    revin: RevinStats
    raw_patches: Tensor  # (B, N, P) normalized pre-embedding values (reconstruction targets)

    @property
    def token_valid(self) -> np.ndarray:
        """Validity over all N+1 token slots; the CLS slot is always real."""
        b = self.padding_mask.shape[0]
        return np.concatenate([np.ones((b, 1), dtype=bool), self.padding_mask], axis=1)


def revin_normalize(
    batch: SeriesBatch, gamma: Tensor, beta: Tensor, eps: float = REVIN_EPS
) -> tuple[Tensor, RevinStats]:
    """Standardize each series over its valid region, then apply the affine.

    Padding positions stay exactly zero. The pre-affine valid region has mean
    0 and population std 1 (std floored at ``eps`` so constant series map to
    zeros instead of blowing up).
    """
    if eps <= 0:
        raise ValueError("revin_normalize: eps must be positive")
    v = batch.valid
    vf = v.astype(np.float64)
    counts = vf.sum(axis=1)
    mean = (batch.values * vf).sum(axis=1) / counts
    var = (((batch.values - mean[:, None]) ** 2) * vf).sum(axis=1) / counts
    std = np.maximum(np.sqrt(var), eps)
    z = np.where(v, (batch.values - mean[:, None]) / std[:, None], 0.0)
    out = (gamma * Tensor(z) + beta) * Tensor(vf)
    return out, RevinStats(mean=mean, std=std, gamma=gamma, beta=beta)


def revin_denormalize(z, stats: RevinStats):
    """Exact inverse of :func:`revin_normalize` on valid positions.

    Requires an invertible affine: gamma must be nonzero.
    """
    g = float(stats.gamma.item())
    b = float(stats.beta.item())
    if g == 0.0:
        raise ValueError("revin_denormalize: gamma is zero, affine not invertible")
    if isinstance(z, Tensor):
        if z.shape[0] != stats.mean.shape[0]:
            raise ValueError(f"batch size {z.shape[0]} does not match stats ({stats.mean.shape[0]})")
        zhat = (z - b) * (1.0 / g)
        return zhat * Tensor(stats.std[:, None]) + Tensor(np.broadcast_to(stats.mean[:, None], z.shape).copy())
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != stats.mean.shape[0]:
        raise ValueError(f"batch size {z.shape[0]} does not match stats ({stats.mean.shape[0]})")
    return ((z - b) / g) * stats.std[:, None] + stats.mean[:, None]


def patchify(normalized: Tensor, valid: np.ndarray, patch_len: int) -> tuple[Tensor, np.ndarray]:
    """Split into non-overlapping length-P patches, dropping the remainder.

    Returns the (B, N, P) patch values and a (B, N) mask flagging patches
    that overlap at least one valid timestep.
    """
    b, length = normalized.shape
    if length < patch_len:
        raise ValueError(f"series length {length} is shorter than patch length {patch_len}")
    n = length // patch_len
    raw = normalized[:, : n * patch_len].reshape((b, n, patch_len))
    padding_mask = valid[:, : n * patch_len].reshape(b, n, patch_len).any(axis=2)
    return raw, padding_mask


def embed_and_position(raw_patches: Tensor, w_embed: Tensor, pos: Tensor, cls: Tensor) -> Tensor:
    """Project patches to width D, prepend the CLS slot, add positions."""
    b, n, p = raw_patches.shape
    d = w_embed.shape[1]
    if w_embed.shape[0] != p:
        raise ValueError(f"embedding expects patches of length {w_embed.shape[0]}, got {p}")
    if pos.shape != (n + 1, d):
        raise ValueError(f"positional table {pos.shape} does not match {(n + 1, d)}")
    if cls.shape != (d,):
        raise ValueError(f"cls token {cls.shape} does not match width {d}")
    patch_tokens = raw_patches @ w_embed + pos[1:, :]
    cls_token = broadcast_to((cls + pos[0, :]).reshape((1, 1, d)), (b, 1, d))
    return concat([cls_token, patch_tokens], axis=1)


def _round_half_away(x: float) -> int:
    return int(np.floor(x + 0.5))


def sample_train_mask(padding_mask: np.ndarray, ratio: float, rng: RngState) -> np.ndarray:
    """Mask exactly round(ratio * valid patches) per series, never touching padding."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"mask ratio must be in [0, 1), got {ratio}")
    b, n = padding_mask.shape
    mask = np.zeros((b, n), dtype=bool)
    if ratio == 0.0:
        return mask
    for i in range(b):
        valid_idx = np.flatnonzero(padding_mask[i])
        count = _round_half_away(ratio * valid_idx.size)
        if count > 0:
            pick = rng.permutation(valid_idx.size)[:count]
            mask[i, valid_idx[pick]] = True
    return mask


def apply_train_mask(tokens: Tensor, train_mask: np.ndarray, mask_token: Tensor) -> Tensor:
    """Replace masked patch embeddings with the learned mask token (CLS untouched)."""
    b, n1, d = tokens.shape
    full = np.zeros((b, n1, 1))
    full[:, 1:, 0] = train_mask.astype(np.float64)
    keep = Tensor(1.0 - full)
    return tokens * keep + mask_token.reshape((1, 1, d)) * Tensor(full)


@dataclass
class PreprocessParams:
    """Learnable preprocessing state: affine, patch embedding, positions, CLS, mask token."""

    gamma: Tensor
    beta: Tensor
    w_embed: Tensor
    pos: Tensor
    cls: Tensor
    mask_token: Tensor

    @staticmethod
    def init(patch_len: int, n_patches: int, d: int, rng: RngState) -> "PreprocessParams":
        std = np.sqrt(2.0 / (patch_len + d))
        return PreprocessParams(
            gamma=Tensor(1.0, requires_grad=True),
            beta=Tensor(0.0, requires_grad=True),
            w_embed=Tensor(rng.normal((patch_len, d), 0.0, std), requires_grad=True),
            pos=Tensor(rng.normal((n_patches + 1, d), 0.0, 0.02), requires_grad=True),
            cls=Tensor(rng.normal((d,), 0.0, 0.02), requires_grad=True),
            mask_token=Tensor(rng.normal((d,), 0.0, 0.02), requires_grad=True),
        )

    def parameters(self):
        yield "gamma", self.gamma
        yield "beta", self.beta
        yield "w_embed", self.w_embed
        yield "pos", self.pos
        yield "cls", self.cls
        yield "mask_token", self.mask_token


def prepare(
    batch: SeriesBatch,
    params: PreprocessParams,
    patch_len: int,
    mask_ratio: float = 0.0,
    rng: RngState | None = None,
    eps: float = REVIN_EPS,
) -> PatchedBatch:
    """Full preprocessing pipeline: normalize, patchify, embed, optionally mask."""
    normalized, stats = revin_normalize(batch, params.gamma, params.beta, eps)
    raw_patches, padding_mask = patchify(normalized, batch.valid, patch_len)
    tokens = embed_and_position(raw_patches, params.w_embed, params.pos, params.cls)
    if mask_ratio > 0.0:
        if rng is None:
            raise ValueError("masking needs an RngState")
        train_mask = sample_train_mask(padding_mask, mask_ratio, rng)
        tokens = apply_train_mask(tokens, train_mask, params.mask_token)
    else:
        train_mask = np.zeros_like(padding_mask)
    return PatchedBatch(
        tokens=tokens,
        padding_mask=padding_mask,
        train_mask=train_mask,
        revin=stats,
        raw_patches=raw_patches,
    )
