import math

import numpy as np
import pytest

from tsmem.gradcheck import finite_diff_check
from tsmem.rng import RngState
from tsmem.tensor import (
    Tensor,
    backward,
    broadcast_to,
    concat,
    dropout,
    gaussian,
    gelu,
    layer_norm,
    log_softmax,
    matmul,
    no_grad,
    sigmoid,
    softmax_row,
    texp,
    tlog,
    tsqrt,
    uniform,
)


def test_matmul_identity():
    a = np.arange(9.0).reshape(3, 3)
    out = matmul(Tensor(np.eye(3)), Tensor(a))
    assert np.array_equal(out.data, a)


def test_matmul_hand_example():
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_layer_norm_constant_rows_collapse_to_zero():
    x = Tensor(np.full((4, 6), 3.7))
    out = layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6)), 1e-5)
    assert np.abs(out.data).max() < 1e-9


def test_layer_norm_two_point_example():
    out = layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), 1e-12)
    assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-6)


def test_layer_norm_zero_gamma_gives_beta():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 5)))
    out = layer_norm(x, Tensor(np.zeros(5)), Tensor(np.full(5, 2.5)), 1e-5)
    assert np.allclose(out.data, 2.5)


def test_softmax_uniform_and_stability():
    assert np.allclose(softmax_row(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)
    out = softmax_row(Tensor([1000.0, 0.0])).data
    assert np.isfinite(out).all() and out[0] > 0.999
    out = softmax_row(Tensor(np.log([1.0, 2.0, 3.0]))).data
    assert np.allclose(out, [1 / 6, 2 / 6, 3 / 6], atol=1e-12)


def test_softmax_rows_sum_to_one_and_permutation_equivariance():
    rng = RngState(3)
    x = rng.normal((5, 7), 0, 3.0)
    out = softmax_row(Tensor(x)).data
    assert np.abs(out.sum(axis=1) - 1.0).max() <= 1e-12
    perm = rng.permutation(7)
    out_p = softmax_row(Tensor(x[:, perm])).data
    assert np.allclose(out_p, out[:, perm], atol=1e-14, rtol=0)


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(x * 2.0)


def test_backward_accumulates_until_zero_grad():
    w = Tensor(3.0, requires_grad=True)
    loss = w * w
    backward(loss)
    g1 = w.grad.copy()
    backward(w * w)
    assert np.allclose(w.grad, 2 * g1)
    w.zero_grad()
    assert w.grad is None


def test_finite_diff_simple_cases():
    w = Tensor(3.0, requires_grad=True)
    rep = finite_diff_check(lambda: w * w, [("w", w)], h=1e-5, tol=1e-4)
    assert rep.passed
    w.zero_grad()
    backward(w * w)
    assert w.grad.shape == ()
    assert np.allclose(w.grad, 6.0)

    c = Tensor(2.0, requires_grad=True)
    rep = finite_diff_check(lambda: c * 0.0 + 1.0, [("c", c)], h=1e-5, tol=1e-4)
    assert rep.passed  # both gradients zero


def _check(fn, params, tol=1e-4):
    rep = finite_diff_check(fn, params, h=1e-5, tol=tol)
    assert rep.passed, "\n".join(rep.summary_lines())


def test_gradients_elementwise_and_broadcast():
    rng = RngState(11)
    a = Tensor(rng.normal((3, 4, 5), 0, 0.8), requires_grad=True)
    b = Tensor(rng.normal((4, 5), 0, 0.8), requires_grad=True)
    c = Tensor(rng.normal((5,), 0, 0.8) + 3.0, requires_grad=True)
    _check(lambda: ((a * b - a / c + b) ** 2).sum() * 0.1, [("a", a), ("b", b), ("c", c)])


def test_gradients_matmul_2d_and_3d():
    rng = RngState(12)
    a2 = Tensor(rng.normal((4, 6), 0, 0.8), requires_grad=True)
    a3 = Tensor(rng.normal((2, 3, 6), 0, 0.8), requires_grad=True)
    w = Tensor(rng.normal((6, 5), 0, 0.8), requires_grad=True)
    t = Tensor(rng.normal((4, 5), 0, 1.0))
    _check(lambda: (((a2 @ w) - t) ** 2).mean(), [("a2", a2), ("w", w)])
    _check(lambda: ((a3 @ w) ** 2).mean(), [("a3", a3), ("w", w)])


def test_gradients_activations_and_unary():
    rng = RngState(13)
    x = Tensor(rng.normal((4, 8), 0, 1.0), requires_grad=True)
    _check(lambda: (gelu(x) * sigmoid(x)).sum(), [("x", x)])
    y = Tensor(rng.uniform((4, 8), 0.5, 2.0), requires_grad=True)
    _check(lambda: (texp(y * 0.3) + tlog(y) + tsqrt(y)).sum(), [("y", y)])


def test_gradients_norm_softmax_reductions():
    rng = RngState(14)
    x = Tensor(rng.normal((2, 4, 8), 0, 1.0), requires_grad=True)
    g = Tensor(rng.normal((8,), 0, 0.5) + 1.0, requires_grad=True)
    b = Tensor(rng.normal((8,), 0, 0.5), requires_grad=True)
    t = Tensor(rng.normal((2, 4, 8), 0, 1.0))
    _check(lambda: ((layer_norm(x, g, b, 1e-5) - t) ** 2).mean(), [("x", x), ("g", g), ("b", b)])
    _check(lambda: (softmax_row(x) * t).sum(), [("x", x)])
    _check(lambda: (log_softmax(x) * t).mean(axis=None), [("x", x)])
    _check(lambda: x.mean(axis=(0, 2)).sum() + x.sum(axis=1, keepdims=True).mean(), [("x", x)])


def test_gradients_shape_ops():
    rng = RngState(15)
    x = Tensor(rng.normal((3, 4, 5), 0, 1.0), requires_grad=True)
    y = Tensor(rng.normal((3, 4, 2), 0, 1.0), requires_grad=True)
    w = Tensor(rng.normal((5, 4), 0, 1.0), requires_grad=True)
    _check(lambda: (concat([x, y], axis=-1) ** 2).sum(), [("x", x), ("y", y)])
    _check(lambda: (x[:, 1:3, :].reshape((3, 10)) ** 2).sum(), [("x", x)])
    _check(lambda: ((w.T @ w) ** 2).sum() * 0.01, [("w", w)])
    z = Tensor(rng.normal((1, 1, 5), 0, 1.0), requires_grad=True)
    _check(lambda: (broadcast_to(z, (3, 4, 5)) * x).sum(), [("z", z)])


def test_dropout_identity_cases():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 4)), requires_grad=True)
    assert dropout(x, 0.0, None, training=True) is x
    assert dropout(x, 0.7, None, training=False) is x
    with pytest.raises(ValueError):
        dropout(x, 1.0, RngState(0), training=True)


def test_dropout_inverted_scaling_and_grad():
    rng = RngState(21)
    x = Tensor(rng.normal((2000,), 0, 1.0) + 5.0, requires_grad=True)
    out = dropout(x, 0.25, RngState(99), training=True)
    kept = out.data != 0
    assert abs(kept.mean() - 0.75) < 0.05
    assert np.allclose(out.data[kept], x.data[kept] / 0.75)
    _check(lambda: (dropout(x, 0.25, RngState(99), training=True) ** 2).sum() * 1e-3, [("x", x)])


def test_no_grad_blocks_graph():
    x = Tensor(1.0, requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_rng_determinism_and_spawn():
    a = RngState(42)
    b = RngState(42)
    assert np.array_equal(a.normal((16,)), b.normal((16,)))
    assert np.array_equal(a.uniform((16,)), b.uniform((16,)))
    assert np.array_equal(a.permutation(100), b.permutation(100))
    child1 = RngState(42).spawn("x").normal((8,))
    child2 = RngState(42).spawn("x").normal((8,))
    other = RngState(42).spawn("y").normal((8,))
    assert np.array_equal(child1, child2)
    assert not np.array_equal(child1, other)
    with pytest.raises(ValueError):
        RngState(1, algorithm="mt19937")


def test_sampling_ops_reproducible():
    g1 = gaussian((3, 3), RngState(7), 1.0, 2.0)
    g2 = gaussian((3, 3), RngState(7), 1.0, 2.0)
    assert np.array_equal(g1.data, g2.data)
    u = uniform((1000,), RngState(8), -1.0, 1.0)
    assert u.data.min() >= -1.0 and u.data.max() < 1.0


def test_forward_outputs_finite():
    rng = RngState(30)
    x = Tensor(rng.normal((6, 6), 0, 10.0))
    for out in (gelu(x), sigmoid(x), softmax_row(x), layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6)), 1e-5)):
        assert np.isfinite(out.data).all()


def test_tensor_invariants():
    t = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert t.data.flags["C_CONTIGUOUS"]
    assert t.data.dtype == np.float64
    assert math.prod(t.shape) == t.size
