"""Training drivers: dual-objective self-supervised pretraining, then the
two-phase fine-tuning protocol (linear probing on a frozen encoder, followed
by full fine-tuning with a reduced backbone learning rate and cosine decay)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .data import make_batches
from .features import FeatureScaler, extract
from .heads import (
    LossWeights,
    augment,
    ce_label_smooth,
    classify,
    classification_report,
    info_nce,
    metrics,
    mtsm_loss,
    project,
)
from .model import Model
from .optim import AdamW, clip_grad_norm, cosine_lr
from .preprocess import SeriesBatch
from .rng import RngState
from .tensor import Tensor, backward, concat, no_grad


class DivergenceError(RuntimeError):
    """Loss became non-finite during training."""


LOG_HEADER = "phase,epoch,loss_mtsm,loss_nce,loss_ce,accuracy,macro_f1"


@dataclass
class EpochLog:
    phase: str
    epoch: int
    mtsm: float | None = None
    nce: float | None = None
    ce: float | None = None
    accuracy: float | None = None
    macro_f1: float | None = None

    def csv_row(self) -> str:
        def fmt(v):
            return "" if v is None else repr(v)

        return ",".join([self.phase, str(self.epoch), fmt(self.mtsm), fmt(self.nce), fmt(self.ce), fmt(self.accuracy), fmt(self.macro_f1)])


def write_metrics_log(path, logs: list[EpochLog]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(LOG_HEADER + "\n")
        for row in logs:
            fh.write(row.csv_row() + "\n")


def _check_finite(value: float, phase: str, epoch: int) -> None:
    if not math.isfinite(value):
        raise DivergenceError(f"{phase}: non-finite loss at epoch {epoch}")


def _index_batches(n: int, batch_size: int, rng: RngState | None, shuffle: bool):
    order = rng.permutation(n) if shuffle and rng is not None else np.arange(n)
    return [order[s : s + batch_size] for s in range(0, n, batch_size)]


def pretrain(corpus: SeriesBatch, model: Model, cfg: TrainConfig, rng: RngState) -> list[EpochLog]:
    """Self-supervised pretraining with masked reconstruction + contrastive loss.

    Per batch, two augmented views are built; view 1 is masked and
    reconstructed, and the paired CLS projections of both views form the
    contrastive batch. Constant learning rate throughout.
    """
    weights = LossWeights(cfg.lambda1, cfg.lambda2)
    params = list(model.backbone_parameters()) + list(model.pretrain_head_parameters())
    opt = AdamW([{"name": "pretrain", "params": params, "lr": cfg.pretrain_lr, "weight_decay": cfg.pretrain_weight_decay}])
    logs: list[EpochLog] = []
    for epoch in range(1, cfg.pretrain_epochs + 1):
        erng = rng.spawn(f"pretrain/epoch{epoch}")
        mtsm_sum, nce_sum, steps = 0.0, 0.0, 0
        for bi, idx in enumerate(_index_batches(corpus.batch_size, cfg.pretrain_batch, erng.spawn("shuffle"), True)):
            srng = erng.spawn(f"step{bi}")
            batch = corpus.take(idx)
            view1 = augment(batch, srng.spawn("aug1"))
            frng = srng.spawn("fwd1")
            pb1, enc1 = model.encode_batch(view1, frng, training=True, mask_ratio=cfg.mask_ratio)
            terms = []
            mtsm_value = None
            nce_value = None
            if weights.lambda1 > 0:
                loss_mtsm = mtsm_loss(enc1.h, model.recon, pb1.raw_patches, pb1.train_mask)
                mtsm_value = loss_mtsm.item()
                terms.append(loss_mtsm * weights.lambda1)
            if weights.lambda2 > 0:
                view2 = augment(batch, srng.spawn("aug2"))
                _, enc2 = model.encode_batch(view2, srng.spawn("fwd2"), training=True, mask_ratio=0.0)
                z = concat([project(enc1.h_cls, model.proj), project(enc2.h_cls, model.proj)], axis=0)
                loss_nce = info_nce(z, cfg.tau)
                nce_value = loss_nce.item()
                terms.append(loss_nce * weights.lambda2)
            total = terms[0] if len(terms) == 1 else terms[0] + terms[1]
            _check_finite(total.item(), "pretrain", epoch)
            backward(total)
            if cfg.clip_norm > 0:
                clip_grad_norm(params, cfg.clip_norm)
            opt.step()
            opt.zero_grad()
            mtsm_sum += mtsm_value if mtsm_value is not None else 0.0
            nce_sum += nce_value if nce_value is not None else 0.0
            steps += 1
        logs.append(
            EpochLog(
                phase="pretrain",
                epoch=epoch,
                mtsm=mtsm_sum / steps if weights.lambda1 > 0 else None,
                nce=nce_sum / steps if weights.lambda2 > 0 else None,
            )
        )
    return logs


def _cached_cls(model: Model, batch: SeriesBatch, batch_size: int = 64) -> np.ndarray:
    """Frozen-encoder CLS states for the whole split (evaluation mode)."""
    out = []
    with no_grad():
        for part in make_batches(batch, batch_size):
            _, enc = model.encode_batch(part, training=False)
            out.append(enc.h_cls.data)
    return np.concatenate(out, axis=0)


def lp_phase(model: Model, train: SeriesBatch, cfg: TrainConfig, rng: RngState) -> list[EpochLog]:
    """Linear probing: encoder frozen bitwise, only the hybrid head trains.

    The frozen encoder runs once in evaluation mode and its CLS states are
    cached; 15 epochs of head training then cost almost nothing.
    """
    if model.head is None:
        raise ValueError("lp_phase needs a model with a classifier head")
    features_std = model.scaler.transform(extract(train))
    cls_cache = _cached_cls(model, train)
    head_params = list(model.head_parameters())
    opt = AdamW([{"name": "head", "params": head_params, "lr": cfg.lp_lr, "weight_decay": cfg.lp_weight_decay}])
    logs: list[EpochLog] = []
    for epoch in range(1, cfg.lp_epochs + 1):
        erng = rng.spawn(f"lp/epoch{epoch}")
        ce_sum, steps = 0.0, 0
        all_logits, all_labels = [], []
        for bi, idx in enumerate(_index_batches(train.batch_size, cfg.ft_batch, erng.spawn("shuffle"), True)):
            srng = erng.spawn(f"step{bi}")
            logits = classify(
                Tensor(cls_cache[idx]), Tensor(features_std.data[idx]), model.head, srng, training=True
            )
            loss = ce_label_smooth(logits, train.labels[idx], cfg.label_smoothing)
            _check_finite(loss.item(), "lp", epoch)
            backward(loss)
            if cfg.clip_norm > 0:
                clip_grad_norm(head_params, cfg.clip_norm)
            opt.step()
            opt.zero_grad()
            ce_sum += loss.item()
            steps += 1
            all_logits.append(logits.data)
            all_labels.append(train.labels[idx])
        acc, f1 = metrics(np.concatenate(all_logits), np.concatenate(all_labels))
        logs.append(EpochLog(phase="lp", epoch=epoch, ce=ce_sum / steps, accuracy=acc, macro_f1=f1))
    return logs


def ft_phase(model: Model, train: SeriesBatch, cfg: TrainConfig, rng: RngState) -> list[EpochLog]:
    """Full fine-tuning: every backbone and head parameter unlocked.

    Two optimizer groups (backbone at the reduced rate, head at 10x that),
    cosine decay per optimizer step down to ``ft_eta_min`` over the whole
    epoch budget.
    """
    if model.head is None:
        raise ValueError("ft_phase needs a model with a classifier head")
    features_std = model.scaler.transform(extract(train))
    # the mask token never enters the classification graph, so it cannot
    # receive a gradient here and stays out of the optimizer
    backbone = [(n, p) for n, p in model.backbone_parameters() if n != "pre.mask_token"]
    head = list(model.head_parameters())
    opt = AdamW(
        [
            {"name": "backbone", "params": backbone, "lr": cfg.ft_lr_backbone, "weight_decay": cfg.ft_weight_decay},
            {"name": "head", "params": head, "lr": cfg.ft_lr_head, "weight_decay": cfg.ft_weight_decay},
        ]
    )
    batches_per_epoch = math.ceil(train.batch_size / cfg.ft_batch)
    total_steps = cfg.ft_epochs * batches_per_epoch
    denom = max(total_steps - 1, 1)
    logs: list[EpochLog] = []
    step = 0
    for epoch in range(1, cfg.ft_epochs + 1):
        erng = rng.spawn(f"ft/epoch{epoch}")
        ce_sum, steps = 0.0, 0
        all_logits, all_labels = [], []
        for bi, idx in enumerate(_index_batches(train.batch_size, cfg.ft_batch, erng.spawn("shuffle"), True)):
            srng = erng.spawn(f"step{bi}")
            batch = train.take(idx)
            logits = model.classify_batch(batch, srng, training=True, features_std=Tensor(features_std.data[idx]))
            loss = ce_label_smooth(logits, batch.labels, cfg.label_smoothing)
            _check_finite(loss.item(), "ft", epoch)
            backward(loss)
            if cfg.clip_norm > 0:
                clip_grad_norm(backbone + head, cfg.clip_norm)
            lrs = {
                "backbone": cosine_lr(min(step, denom), denom, cfg.ft_lr_backbone, cfg.ft_eta_min),
                "head": cosine_lr(min(step, denom), denom, cfg.ft_lr_head, cfg.ft_eta_min),
            }
            opt.step(lr_overrides=lrs)
            opt.zero_grad()
            step += 1
            ce_sum += loss.item()
            steps += 1
            all_logits.append(logits.data)
            all_labels.append(batch.labels)
        acc, f1 = metrics(np.concatenate(all_logits), np.concatenate(all_labels))
        logs.append(EpochLog(phase="ft", epoch=epoch, ce=ce_sum / steps, accuracy=acc, macro_f1=f1))
    return logs


def finetune(model: Model, train: SeriesBatch, cfg: TrainConfig, rng: RngState) -> list[EpochLog]:
    """The full adaptation protocol: fit the feature scaler on the training
    split, linear-probe the head, then fine-tune everything."""
    model.scaler = FeatureScaler.fit(extract(train))
    logs = lp_phase(model, train, cfg, rng.spawn("lp"))
    logs += ft_phase(model, train, cfg, rng.spawn("ft"))
    return logs


def evaluate(model: Model, test: SeriesBatch, batch_size: int = 64) -> tuple[float, float, list[dict]]:
    """Deterministic evaluation: no dropout, no masking, no augmentation."""
    if model.head is None:
        raise ValueError("evaluate needs a model with a classifier head")
    all_logits = []
    with no_grad():
        for part in make_batches(test, batch_size):
            features_std = model.scaler.transform(extract(part))
            logits = model.classify_batch(part, training=False, features_std=features_std)
            all_logits.append(logits.data)
    logits = np.concatenate(all_logits, axis=0)
    acc, f1 = metrics(logits, test.labels)
    return acc, f1, classification_report(logits, test.labels)
