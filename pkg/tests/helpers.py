"""Shared builders for the test suite: tiny configs and synthetic tasks."""

from __future__ import annotations

import numpy as np

from tsmem.config import ModelConfig, TrainConfig
from tsmem.data import synth_classification
from tsmem.preprocess import SeriesBatch
from tsmem.rng import RngState


def tiny_model_config(**overrides) -> ModelConfig:
    base = dict(
        seq_len=32,
        patch_len=4,
        d_model=16,
        depth=2,
        cms_levels=4,
        chunk_size=3,
        ffn_mult=2,
        d_proj=8,
        num_classes=2,
        dropout=0.1,
        head_dropout=0.4,
    )
    base.update(overrides)
    return ModelConfig(**base)


def tiny_train_config(**overrides) -> TrainConfig:
    base = dict(
        pretrain_epochs=2,
        pretrain_lr=1e-3,
        pretrain_batch=8,
        lp_epochs=3,
        ft_epochs=3,
        ft_batch=8,
    )
    base.update(overrides)
    return TrainConfig(**base)


def tiny_task(seed: int = 0, n_per_class: int = 8, length: int = 32) -> tuple[SeriesBatch, SeriesBatch]:
    rng = RngState(seed)
    train = synth_classification(["sine", "ar1"], n_per_class, length, rng.spawn("train"))
    test = synth_classification(["sine", "ar1"], n_per_class, length, rng.spawn("test"))
    return train, test


def random_batch(rng: RngState, b: int, length: int, pad_tail: int = 0) -> SeriesBatch:
    values = rng.normal((b, length), 0.0, 1.0)
    valid = np.ones((b, length), dtype=bool)
    if pad_tail:
        valid[-1, length - pad_tail :] = False
        values[-1, length - pad_tail :] = 0.0
    return SeriesBatch(values, valid)
