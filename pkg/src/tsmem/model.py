"""Full model assembly: preprocessing parameters, encoder stack, heads, and
the feature scaler, with named-parameter traversal and checkpoint I/O."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from .config import ModelConfig
from .features import FeatureScaler, extract
from .heads import HybridHeadParams, ProjHeadParams, ReconHeadParams, classify
from .hope import EncoderOutput, HopeBlockParams, encode
from .preprocess import PatchedBatch, PreprocessParams, SeriesBatch, prepare
from .rng import RngState
from .tensor import Tensor


@dataclass
class Model:
    config: ModelConfig
    pre: PreprocessParams
    blocks: list[HopeBlockParams]
    recon: ReconHeadParams
    proj: ProjHeadParams
    head: HybridHeadParams | None
    scaler: FeatureScaler

    @staticmethod
    def init(config: ModelConfig, rng: RngState) -> "Model":
        config.validate()
        head = None
        if config.num_classes >= 2:
            head = HybridHeadParams.init(
                config.d_model, config.num_features, config.num_classes, rng.spawn("head"), config.head_dropout
            )
        return Model(
            config=config,
            pre=PreprocessParams.init(config.patch_len, config.n_patches, config.d_model, rng.spawn("pre")),
            blocks=[
                HopeBlockParams.init(
                    config.d_model,
                    config.cms_levels,
                    config.chunk_size,
                    rng.spawn(f"block{i}"),
                    config.ffn_mult,
                    config.dropout,
                )
                for i in range(config.depth)
            ],
            recon=ReconHeadParams.init(config.d_model, config.patch_len, rng.spawn("recon")),
            proj=ProjHeadParams.init(config.d_model, config.d_proj, rng.spawn("proj")),
            head=head,
            scaler=FeatureScaler.identity(config.num_features),
        )

    # -- parameter traversal ---------------------------------------------------

    def backbone_parameters(self):
        for name, p in self.pre.parameters():
            yield f"pre.{name}", p
        for i, block in enumerate(self.blocks):
            for name, p in block.parameters():
                yield f"blocks.{i}.{name}", p

    def pretrain_head_parameters(self):
        for name, p in self.recon.parameters():
            yield f"recon.{name}", p
        for name, p in self.proj.parameters():
            yield f"proj.{name}", p

    def head_parameters(self):
        if self.head is not None:
            for name, p in self.head.parameters():
                yield f"head.{name}", p

    def parameters(self):
        yield from self.backbone_parameters()
        yield from self.pretrain_head_parameters()
        yield from self.head_parameters()

    # -- forward pipelines -------------------------------------------------------

    def encode_batch(
        self,
        batch: SeriesBatch,
        rng: RngState | None = None,
        training: bool = False,
        mask_ratio: float = 0.0,
    ) -> tuple[PatchedBatch, EncoderOutput]:
        pb = prepare(batch, self.pre, self.config.patch_len, mask_ratio, rng, self.config.revin_eps)
        enc = encode(pb.tokens, pb.token_valid, self.blocks, rng, training)
        return pb, enc

    def classify_batch(
        self,
        batch: SeriesBatch,
        rng: RngState | None = None,
        training: bool = False,
        features_std: Tensor | None = None,
    ) -> Tensor:
        if self.head is None:
            raise ValueError("model has no classifier head (num_classes not set)")
        if features_std is None:
            features_std = self.scaler.transform(extract(batch))
        _, enc = self.encode_batch(batch, rng, training)
        return classify(enc.h_cls, features_std, self.head, rng, training)

    # -- checkpoint I/O -------------------------------------------------------------

    def state_records(self) -> list[tuple[str, np.ndarray]]:
        records = [(name, p.data) for name, p in self.parameters()]
        records.append(("scaler.mean", self.scaler.mean))
        records.append(("scaler.std", self.scaler.std))
        return records

    def save(self, path) -> None:
        ckpt.save_checkpoint(path, self.state_records())

    def load_state(self, records: dict[str, np.ndarray], allow_missing_head: bool = False) -> None:
        params = dict(self.parameters())
        for name, p in params.items():
            if name not in records:
                if allow_missing_head and name.startswith("head."):
                    continue
                raise ValueError(f"checkpoint is missing parameter {name!r}")
            value = records[name]
            if value.shape != p.data.shape:
                raise ValueError(f"parameter {name!r}: checkpoint shape {value.shape} != model {p.data.shape}")
            p.data[...] = value
        self.scaler = FeatureScaler(mean=records["scaler.mean"].copy(), std=records["scaler.std"].copy())
        known = set(params) | {"scaler.mean", "scaler.std"}
        extra = set(records) - known
        if extra:
            raise ValueError(f"checkpoint contains unknown records: {sorted(extra)}")

    def load(self, path, allow_missing_head: bool = False) -> None:
        self.load_state(ckpt.load_checkpoint(path), allow_missing_head=allow_missing_head)


def parameter_hash(params) -> str:
    """Order-sensitive hash of named parameter bytes (freeze verification)."""
    import hashlib

    digest = hashlib.sha256()
    for name, p in params:
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(p.data).tobytes())
    return digest.hexdigest()
