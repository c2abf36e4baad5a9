"""Whole-model gradient verification.

Builds a shrunken but structurally complete model (every layer type present:
instance-norm affine, patch embedding, both memory systems, FFN, and all
three heads), wires a combined loss through all of them, and checks every
parameter element against central finite differences.
"""

from __future__ import annotations

from .config import ModelConfig
from .features import extract
from .gradcheck import GradCheckReport, finite_diff_check
from .heads import ce_label_smooth, classify, info_nce, mtsm_loss, project
from .model import Model
from .preprocess import SeriesBatch
from .rng import RngState
from .tensor import concat


def gradcheck_config() -> ModelConfig:
    """Small shapes (B=2, tokens <= 8, width 16) keep the element sweep fast."""
    return ModelConfig(
        seq_len=16,
        patch_len=4,
        d_model=16,
        depth=2,
        cms_levels=4,
        chunk_size=3,
        ffn_mult=4,
        d_proj=8,
        num_classes=3,
        dropout=0.0,
        head_dropout=0.0,
    )


def full_gradcheck(
    cfg: ModelConfig | None = None,
    tol: float = 1e-4,
    h: float = 1e-5,
    seed: int = 0,
    max_elements: int | None = None,
) -> GradCheckReport:
    """Check analytic gradients of the combined pipeline loss for every parameter.

    The loss sums masked reconstruction, the contrastive objective over two
    fixed batches, and smoothed cross-entropy, so every head and every
    backbone layer participates.
    """
    if cfg is None:
        cfg = gradcheck_config()
    rng = RngState(seed)
    model = Model.init(cfg, rng.spawn("init"))

    b = 2
    values1 = rng.normal((b, cfg.seq_len), 0.0, 1.0)
    values2 = rng.normal((b, cfg.seq_len), 0.0, 1.0)
    valid = rng.uniform((b, cfg.seq_len)) < 2.0  # all valid
    valid[1, -cfg.patch_len :] = False  # one padded tail patch
    batch1 = SeriesBatch(values1, valid)
    batch2 = SeriesBatch(values2, valid.copy())
    labels = rng.integers(0, cfg.num_classes, (b,))
    f_std = extract(batch1)

    def f():
        # recreated rng => identical mask and dropout draws on every evaluation
        frng = RngState(seed + 1)
        pb1, enc1 = model.encode_batch(batch1, frng.spawn("v1"), training=True, mask_ratio=0.4)
        _, enc2 = model.encode_batch(batch2, frng.spawn("v2"), training=True, mask_ratio=0.0)
        loss_mtsm = mtsm_loss(enc1.h, model.recon, pb1.raw_patches, pb1.train_mask)
        z = concat([project(enc1.h_cls, model.proj), project(enc2.h_cls, model.proj)], axis=0)
        loss_nce = info_nce(z, 0.1)
        logits = classify(enc1.h_cls, f_std, model.head, frng.spawn("head"), training=True)
        loss_ce = ce_label_smooth(logits, labels, 0.1)
        return loss_mtsm + loss_nce + loss_ce

    params = list(model.parameters())
    return finite_diff_check(f, params, h=h, tol=tol, max_elements=max_elements, rng=rng.generator)
