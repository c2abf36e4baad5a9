import numpy as np
import pytest

from helpers import random_batch
from tsmem.preprocess import (
    PreprocessParams,
    SeriesBatch,
    apply_train_mask,
    embed_and_position,
    patchify,
    prepare,
    revin_denormalize,
    revin_normalize,
    sample_train_mask,
)
from tsmem.rng import RngState
from tsmem.tensor import Tensor


def _g(v=1.0):
    return Tensor(v, requires_grad=True)


def test_series_batch_validation():
    with pytest.raises(ValueError, match="prefix"):
        SeriesBatch(np.zeros((1, 4)), np.array([[True, False, True, True]]))
    with pytest.raises(ValueError, match="2 valid"):
        SeriesBatch(np.zeros((1, 4)), np.array([[True, False, False, False]]))
    with pytest.raises(ValueError, match="labels"):
        SeriesBatch(np.zeros((2, 4)), np.ones((2, 4), dtype=bool), np.array([1]))


def test_revin_four_point_example():
    batch = SeriesBatch(np.array([[1.0, 2.0, 3.0, 4.0]]), np.ones((1, 4), dtype=bool))
    out, stats = revin_normalize(batch, _g(1.0), _g(0.0))
    assert np.allclose(out.data, [[-1.3416, -0.4472, 0.4472, 1.3416]], atol=1e-3)
    assert np.isclose(stats.mean[0], 2.5)
    assert np.isclose(stats.std[0], np.sqrt(1.25))


def test_revin_constant_series_and_affine():
    batch = SeriesBatch(np.full((1, 4), 5.0), np.ones((1, 4), dtype=bool))
    out, _ = revin_normalize(batch, _g(1.0), _g(0.0))
    assert np.array_equal(out.data, np.zeros((1, 4)))

    rng = RngState(0)
    batch = random_batch(rng, 3, 16)
    z, _ = revin_normalize(batch, _g(1.0), _g(0.0))
    z2, _ = revin_normalize(batch, _g(2.0), _g(1.0))
    assert np.allclose(z2.data, 2.0 * z.data + 1.0, atol=1e-12)


def test_revin_normalized_stats_and_padding():
    rng = RngState(1)
    batch = random_batch(rng, 4, 32, pad_tail=10)
    out, _ = revin_normalize(batch, _g(1.0), _g(0.0))
    for i in range(4):
        region = out.data[i][batch.valid[i]]
        assert abs(region.mean()) <= 1e-9
        assert abs(region.std() - 1.0) <= 1e-9
    assert np.array_equal(out.data[~batch.valid], np.zeros((~batch.valid).sum()))


def test_revin_round_trip_including_constant_and_tiny_gamma():
    rng = RngState(2)
    for trial in range(50):
        b = 3
        batch = random_batch(rng.spawn(f"t{trial}"), b, 24, pad_tail=trial % 7)
        if trial % 5 == 0:
            batch.values[0, batch.valid[0]] = 3.3  # constant series
        gamma = float(rng.uniform((), 0.5, 2.0)) * (-1 if trial % 2 else 1)
        if trial % 11 == 0:
            gamma = 1e-9
        beta = float(rng.uniform((), -1.0, 1.0))
        z, stats = revin_normalize(batch, _g(gamma), _g(beta))
        back = revin_denormalize(z.data, stats)
        assert np.abs((back - batch.values)[batch.valid]).max() <= 1e-6


def test_revin_zero_gamma_not_invertible():
    batch = SeriesBatch(np.array([[1.0, 2.0]]), np.ones((1, 2), dtype=bool))
    z, stats = revin_normalize(batch, _g(0.0), _g(0.0))
    with pytest.raises(ValueError, match="gamma"):
        revin_denormalize(z.data, stats)


def test_patchify_shapes_and_errors():
    rng = RngState(3)
    z = Tensor(rng.normal((2, 256), 0, 1.0))
    raw, mask = patchify(z, np.ones((2, 256), dtype=bool), 8)
    assert raw.shape == (2, 32, 8) and mask.shape == (2, 32)

    z = Tensor(rng.normal((1, 10), 0, 1.0))
    raw, _ = patchify(z, np.ones((1, 10), dtype=bool), 8)
    assert raw.shape == (1, 1, 8)  # 2 trailing steps dropped

    with pytest.raises(ValueError, match="shorter"):
        patchify(Tensor(np.zeros((1, 4))), np.ones((1, 4), dtype=bool), 8)


def test_patchify_padding_mask_counts_partial_patches():
    valid = np.zeros((1, 256), dtype=bool)
    valid[0, :20] = True
    z = Tensor(np.zeros((1, 256)))
    _, mask = patchify(z, valid, 8)
    assert mask[0].sum() == 3  # ceil(20 / 8)
    assert mask[0, :3].all() and not mask[0, 3:].any()


def test_patchify_shape_deterministic():
    rng = RngState(4)
    shapes = set()
    for _ in range(5):
        z = Tensor(rng.normal((2, 50), 0, 1.0))
        raw, _ = patchify(z, np.ones((2, 50), dtype=bool), 8)
        shapes.add(raw.shape)
    assert shapes == {(2, 6, 8)}


def test_embed_and_position_cases():
    rng = RngState(5)
    b, n, p, d = 2, 3, 2, 3
    raw = Tensor(rng.normal((b, n, p), 0, 1.0))
    w = Tensor(rng.normal((p, d), 0, 1.0))
    pos = Tensor(rng.normal((n + 1, d), 0, 1.0))
    cls = Tensor(rng.normal((d,), 0, 1.0))

    tokens = embed_and_position(raw, w, pos, cls).data
    assert tokens.shape == (b, n + 1, d)
    assert np.allclose(tokens[:, 0], cls.data + pos.data[0], atol=1e-12)
    for i in range(n):
        assert np.allclose(tokens[:, i + 1], raw.data[:, i] @ w.data + pos.data[i + 1], atol=1e-12)

    zeros = embed_and_position(raw, Tensor(np.zeros((p, d))), Tensor(np.zeros((n + 1, d))), cls).data
    assert np.array_equal(zeros[:, 1:], np.zeros((b, n, d)))
    assert np.allclose(zeros[:, 0], cls.data)

    z_raw = embed_and_position(Tensor(np.zeros((b, n, p))), w, pos, cls).data
    assert np.allclose(z_raw[:, 1:], np.broadcast_to(pos.data[1:], (b, n, d)))


def test_train_mask_counts_and_subset():
    rng = RngState(6)
    padding = np.ones((1, 32), dtype=bool)
    mask = sample_train_mask(padding, 0.4, rng)
    assert mask.sum() == 13  # round(12.8)

    assert sample_train_mask(padding, 0.0, rng).sum() == 0

    padding = np.zeros((1, 32), dtype=bool)
    padding[0, :3] = True
    mask = sample_train_mask(padding, 0.4, rng)
    assert mask.sum() == 1  # round(1.2)
    assert not mask[0, 3:].any()


def test_train_mask_property_sweep():
    rng = RngState(7)
    for trial in range(200):
        n = int(rng.uniform((), 2, 40).item())
        vc = int(rng.uniform((), 1, n + 1).item())
        padding = np.zeros((1, n), dtype=bool)
        padding[0, :vc] = True
        mask = sample_train_mask(padding, 0.4, rng.spawn(f"t{trial}"))
        assert mask.sum() == int(np.floor(0.4 * vc + 0.5))
        assert not (mask & ~padding).any()


def test_apply_train_mask_replaces_only_masked_patches():
    rng = RngState(8)
    b, n, d = 2, 4, 5
    tokens = Tensor(rng.normal((b, n + 1, d), 0, 1.0))
    mask_tok = Tensor(rng.normal((d,), 0, 1.0))
    train_mask = np.zeros((b, n), dtype=bool)
    train_mask[0, 1] = True
    train_mask[1, 3] = True
    out = apply_train_mask(tokens, train_mask, mask_tok).data
    assert np.array_equal(out[:, 0], tokens.data[:, 0])  # CLS untouched
    assert np.allclose(out[0, 0 + 1], tokens.data[0, 1])  # unmasked patch unchanged
    assert np.allclose(out[0, 1 + 1], mask_tok.data)  # patch i lives in slot i+1
    assert np.allclose(out[1, 3 + 1], mask_tok.data)
    assert np.allclose(out[1, 1 + 1], tokens.data[1, 2])


def test_prepare_pipeline_invariants():
    rng = RngState(9)
    batch = random_batch(rng, 3, 32, pad_tail=9)
    params = PreprocessParams.init(4, 8, 6, rng.spawn("p"))
    pb = prepare(batch, params, 4, mask_ratio=0.4, rng=rng.spawn("m"))
    assert pb.tokens.shape == (3, 9, 6)
    assert pb.raw_patches.shape == (3, 8, 4)
    assert not (pb.train_mask & ~pb.padding_mask).any()
    assert pb.token_valid[:, 0].all()
    assert prepare(batch, params, 4).train_mask.sum() == 0
