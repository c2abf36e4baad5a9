"""Output heads and training objectives.

Three heads sit on the encoder: masked-patch reconstruction, a contrastive
projection (discarded after pretraining), and the hybrid classifier that
concatenates the CLS state with standardized statistical features. The
pretraining objective is a weighted sum of masked reconstruction error and a
symmetric NT-Xent contrastive loss over paired augmented views.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .preprocess import SeriesBatch
from .rng import RngState
from .tensor import Tensor, concat, dropout, gelu, layer_norm, log_softmax, tsqrt

LN_EPS = 1e-5


def _glorot(rng: RngState, fan_in: int, fan_out: int, shape=None) -> Tensor:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return Tensor(rng.normal(shape or (fan_in, fan_out), 0.0, std), requires_grad=True)


@dataclass
class ReconHeadParams:
    w_rec: Tensor  # (D, P)
    bias: Tensor  # (P,)

    @staticmethod
    def init(d: int, patch_len: int, rng: RngState) -> "ReconHeadParams":
        return ReconHeadParams(w_rec=_glorot(rng, d, patch_len), bias=Tensor(np.zeros(patch_len), requires_grad=True))

    def parameters(self):
        yield "w_rec", self.w_rec
        yield "bias", self.bias


@dataclass
class ProjHeadParams:
    w1: Tensor  # (D, D)
    b1: Tensor
    w2: Tensor  # (D, D_proj)
    b2: Tensor

    @staticmethod
    def init(d: int, d_proj: int, rng: RngState) -> "ProjHeadParams":
        return ProjHeadParams(
            w1=_glorot(rng, d, d),
            b1=Tensor(np.zeros(d), requires_grad=True),
            w2=_glorot(rng, d, d_proj),
            b2=Tensor(np.zeros(d_proj), requires_grad=True),
        )

    def parameters(self):
        yield "w1", self.w1
        yield "b1", self.b1
        yield "w2", self.w2
        yield "b2", self.b2


@dataclass
class HybridHeadParams:
    ln_g: Tensor  # (D+K,)
    ln_b: Tensor
    w_out: Tensor  # (D+K, C)
    bias: Tensor  # (C,)
    dropout: float = 0.4

    @staticmethod
    def init(d: int, k: int, num_classes: int, rng: RngState, dropout: float = 0.4) -> "HybridHeadParams":
        width = d + k
        return HybridHeadParams(
            ln_g=Tensor(np.ones(width), requires_grad=True),
            ln_b=Tensor(np.zeros(width), requires_grad=True),
            w_out=_glorot(rng, width, num_classes),
            bias=Tensor(np.zeros(num_classes), requires_grad=True),
            dropout=dropout,
        )

    def parameters(self):
        yield "ln_g", self.ln_g
        yield "ln_b", self.ln_b
        yield "w_out", self.w_out
        yield "bias", self.bias


# -- objectives -------------------------------------------------------------------


def mtsm_loss(h: Tensor, recon: ReconHeadParams, raw_patches: Tensor, train_mask: np.ndarray) -> Tensor:
    """Mean squared reconstruction error over masked patch elements.

    Patch tokens (CLS excluded) are mapped back to patch space; only masked
    positions contribute. Targets are the normalized patch values and stay on
    the graph, so the instance-norm affine is differentiated through both its
    paths. An empty mask yields 0 with a warning.
    """
    mask = np.asarray(train_mask, dtype=np.float64)
    total = mask.sum()
    if total == 0:
        warnings.warn("mtsm_loss: empty training mask, loss defined as 0", stacklevel=2)
        return Tensor(0.0)
    patch_len = raw_patches.shape[-1]
    pred = h[:, 1:, :] @ recon.w_rec + recon.bias
    err = (pred - raw_patches) ** 2
    weighted = err * Tensor(mask[:, :, None])
    return weighted.sum() * (1.0 / (total * patch_len))


def augment(batch: SeriesBatch, rng: RngState) -> SeriesBatch:
    """Jitter with scaled Gaussian noise (2% of series std) and random scaling.

    Noise std is proportional to each series' own std over its valid region;
    the multiplicative scale is uniform in [0.8, 1.2] per series. Padding and
    the valid mask are untouched.
    """
    vf = batch.valid.astype(np.float64)
    counts = vf.sum(axis=1)
    mean = (batch.values * vf).sum(axis=1) / counts
    var = (((batch.values - mean[:, None]) ** 2) * vf).sum(axis=1) / counts
    sigma = np.sqrt(var)
    noise = rng.normal(batch.values.shape) * (0.02 * sigma)[:, None]
    scale = rng.uniform((batch.batch_size, 1), 0.8, 1.2)
    values = np.where(batch.valid, scale * (batch.values + noise), 0.0)
    return SeriesBatch(values, batch.valid.copy(), None if batch.labels is None else batch.labels.copy())


def l2_normalize_rows(z: Tensor, eps: float = 1e-12) -> Tensor:
    norms = tsqrt((z**2).sum(axis=-1, keepdims=True) + eps)
    return z / norms


def project(h_cls: Tensor, params: ProjHeadParams) -> Tensor:
    """Contrastive projection: two-layer GELU MLP, then row l2-normalization."""
    hidden = gelu(h_cls @ params.w1 + params.b1)
    return l2_normalize_rows(hidden @ params.w2 + params.b2)


def info_nce(z: Tensor, tau: float) -> Tensor:
    """Symmetric NT-Xent over 2B paired rows (row i pairs with row i+B).

    Rows must arrive l2-normalized; similarity is the dot product. Each
    anchor's denominator spans every other row (itself excluded).
    """
    rows = z.shape[0]
    if rows % 2 != 0 or rows < 4:
        raise ValueError(f"info_nce needs 2B rows with B >= 2, got {rows}")
    norms = np.sqrt((z.data**2).sum(axis=1))
    if np.abs(norms - 1.0).max() > 1e-6:
        raise ValueError("info_nce: rows are not l2-normalized")
    b = rows // 2
    logits = (z @ z.T) * (1.0 / tau) + Tensor(np.diag(np.full(rows, -1e9)))
    logp = log_softmax(logits)
    pair = np.zeros((rows, rows))
    idx = np.arange(b)
    pair[idx, idx + b] = 1.0
    pair[idx + b, idx] = 1.0
    return -(logp * Tensor(pair)).sum() * (1.0 / rows)


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda1 == 0 and self.lambda2 == 0:
            raise ValueError("at least one loss weight must be positive")


def total_pretrain_loss(mtsm: Tensor, nce: Tensor, weights: LossWeights) -> Tensor:
    return mtsm * weights.lambda1 + nce * weights.lambda2


def classify(
    h_cls: Tensor,
    f_ts: Tensor,
    head: HybridHeadParams,
    rng: RngState | None = None,
    training: bool = False,
) -> Tensor:
    """Hybrid head: concat CLS state with standardized features, LN, dropout, linear."""
    width = head.w_out.shape[0]
    if h_cls.shape[-1] + f_ts.shape[-1] != width:
        raise ValueError(
            f"head expects width {width}, got CLS {h_cls.shape[-1]} + features {f_ts.shape[-1]}"
        )
    z = concat([h_cls, f_ts], axis=-1) if f_ts.shape[-1] > 0 else h_cls
    z = layer_norm(z, head.ln_g, head.ln_b, LN_EPS)
    z = dropout(z, head.dropout if training else 0.0, rng, training)
    return z @ head.w_out + head.bias


def ce_label_smooth(logits: Tensor, labels: np.ndarray, smoothing: float = 0.1) -> Tensor:
    """Cross-entropy against label-smoothed targets."""
    b, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    target = np.full((b, c), smoothing / c)
    target[np.arange(b), labels] += 1.0 - smoothing
    logp = log_softmax(logits)
    return -(logp * Tensor(target)).sum() * (1.0 / b)


def metrics(logits: np.ndarray | Tensor, labels: np.ndarray) -> tuple[float, float]:
    """Accuracy and macro-F1 of argmax predictions.

    A class absent from both labels and predictions is skipped; one present
    in either but with no true positives scores F1 = 0.
    """
    scores = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("metrics on empty labels")
    preds = scores.argmax(axis=1)
    accuracy = float((preds == labels).mean())
    f1s = []
    for c in range(scores.shape[1]):
        tp = int(((preds == c) & (labels == c)).sum())
        fp = int(((preds == c) & (labels != c)).sum())
        fn = int(((preds != c) & (labels == c)).sum())
        if tp == 0 and fp == 0 and fn == 0:
            continue
        f1s.append(0.0 if tp == 0 else 2.0 * tp / (2.0 * tp + fp + fn))
    return accuracy, float(np.mean(f1s)) if f1s else 0.0


def classification_report(logits: np.ndarray | Tensor, labels: np.ndarray) -> list[dict]:
    """Per-class precision/recall/F1/support rows."""
    scores = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    preds = scores.argmax(axis=1)
    rows = []
    for c in range(scores.shape[1]):
        tp = int(((preds == c) & (labels == c)).sum())
        fp = int(((preds == c) & (labels != c)).sum())
        fn = int(((preds != c) & (labels == c)).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 0.0 if tp == 0 else 2.0 * tp / (2.0 * tp + fp + fn)
        rows.append(
            {"class": c, "precision": precision, "recall": recall, "f1": f1, "support": int((labels == c).sum())}
        )
    return rows
