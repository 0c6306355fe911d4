import math

import numpy as np
import pytest

from emergentmt import nn, tensor as T
from emergentmt.tensor import ParamStore, Tensor, backward, grad_check


def to_float64(layer):
    for p in layer.params().values():
        p.data = p.data.astype(np.float64)


def test_gru_zero_weights_halves_hidden():
    rng = np.random.default_rng(0)
    cell = nn.GruCell(4, 6, rng)
    for p in cell.params().values():
        p.data[:] = 0.0
    h = Tensor(np.arange(6, dtype=np.float32).reshape(1, 6))
    x = Tensor(np.ones((1, 4), np.float32))
    out = cell.step(x, h)
    assert np.allclose(out.data, 0.5 * h.data)


def test_gru_zero_input_zero_hidden_gives_zero():
    rng = np.random.default_rng(1)
    cell = nn.GruCell(4, 6, rng)  # biases start at zero
    out = cell.step(Tensor(np.zeros((2, 4), np.float32)), Tensor(np.zeros((2, 6), np.float32)))
    assert np.array_equal(out.data, np.zeros((2, 6), np.float32))


def test_gru_dim_mismatch_rejected():
    cell = nn.GruCell(4, 6, np.random.default_rng(2))
    with pytest.raises(T.ShapeError):
        cell.step(Tensor(np.zeros((1, 5), np.float32)), Tensor(np.zeros((1, 6), np.float32)))


def test_gru_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    cell = nn.GruCell(3, 4, rng)
    to_float64(cell)
    x = Tensor(rng.uniform(-1, 1, (2, 3)), dtype=np.float64)
    h = Tensor(rng.uniform(-1, 1, (2, 4)), dtype=np.float64)
    weight = Tensor(rng.uniform(0.5, 1.5, (2, 4)), dtype=np.float64)
    params = list(cell.params().values())

    def f(*ps):
        return (cell.step(x, h) * weight).sum()

    report = grad_check(f, params, h=1e-5, tol=1e-4)
    assert report.passed, report


def test_mlp_shapes_and_single_affine():
    rng = np.random.default_rng(4)
    mlp = nn.Mlp([8, 5], rng)
    out = mlp.forward(Tensor(np.zeros((3, 8), np.float32)))
    assert out.shape == (3, 5)
    # single affine with zero input returns the (zero) bias
    assert np.array_equal(out.data, np.zeros((3, 5), np.float32))
    deep = nn.Mlp([8, 6, 5], rng, activation="tanh")
    assert deep.forward(Tensor(np.ones((3, 8), np.float32))).shape == (3, 5)


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    mlp = nn.Mlp([3, 4, 2], rng)
    to_float64(mlp)
    x = Tensor(rng.uniform(-1, 1, (2, 3)), dtype=np.float64)
    params = list(mlp.params().values())
    report = grad_check(lambda *ps: (mlp.forward(x) * mlp.forward(x)).sum(), params, h=1e-5, tol=1e-4)
    assert report.passed, report


def test_embedding_lookup_row_and_soft_combination():
    rng = np.random.default_rng(6)
    emb = nn.Embedding(5, 3, rng)
    row = emb.lookup(np.array([2]))
    assert np.array_equal(row.data[0], emb.table.data[2])
    dist = Tensor(np.array([[0.25, 0.75, 0.0, 0.0, 0.0]], np.float32))
    soft = emb.soft_lookup(dist)
    expected = 0.25 * emb.table.data[0] + 0.75 * emb.table.data[1]
    assert np.allclose(soft.data[0], expected, atol=1e-6)


def test_gumbel_zero_noise_uniform_logits_is_uniform():
    logits = Tensor(np.zeros((1, 4), np.float32))
    out = nn.gumbel_softmax(logits, temperature=1.0, hard=False, noise=np.zeros((1, 4)))
    assert np.allclose(out.data, 0.25)


def test_gumbel_hard_is_exact_one_hot_at_perturbed_argmax():
    rng = np.random.default_rng(7)
    logits = Tensor(rng.normal(size=(6, 9)).astype(np.float32))
    noise = nn.sample_gumbel(np.random.default_rng(8), (6, 9))
    out = nn.gumbel_softmax(logits, temperature=1.0, hard=True, noise=noise)
    assert np.array_equal(np.sort(out.data, axis=-1)[:, :-1], np.zeros((6, 8), np.float32))
    assert np.array_equal(out.data.max(axis=-1), np.ones(6, np.float32))
    assert np.array_equal(out.data.argmax(axis=-1), (logits.data + noise).argmax(axis=-1))


def test_gumbel_rejects_nonpositive_temperature():
    with pytest.raises(ValueError):
        nn.gumbel_softmax(Tensor(np.zeros(3)), temperature=0.0, rng=np.random.default_rng(0))


def test_gumbel_hard_frequency_matches_softmax():
    # Gumbel-max: P(argmax = 0) for logits [1, 0] is e/(e+1)
    rng = np.random.default_rng(9)
    logits = np.array([1.0, 0.0], np.float32)
    n = 100_000
    noise = nn.sample_gumbel(rng, (n, 2))
    picks = (logits + noise).argmax(axis=-1)
    freq = (picks == 0).mean()
    assert abs(freq - math.e / (math.e + 1.0)) < 0.01


def test_gumbel_soft_sums_to_one():
    rng = np.random.default_rng(10)
    logits = Tensor(rng.normal(0, 3, (32, 16)).astype(np.float32))
    out = nn.gumbel_softmax(logits, temperature=1.0, hard=False, rng=rng)
    assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)


def test_gumbel_low_temperature_concentrates():
    # top-2 gap of Gumbel-perturbed logits is Exp(1); max component > 0.99
    # whenever gap > tau * ln(99 * (K-1)), so the expected pass fraction is
    # at least exp(-0.01 * ln(99 * 7)) = 0.9367 at tau = 0.01, K = 8
    rng = np.random.default_rng(11)
    logits = Tensor(rng.normal(0, 1, (1000, 8)).astype(np.float32))
    out = nn.gumbel_softmax(logits, temperature=0.01, hard=False, rng=rng)
    frac = (out.data.max(axis=-1) > 0.99).mean()
    assert frac >= 0.93


def test_straight_through_grad_equals_soft_grad():
    rng = np.random.default_rng(12)
    noise = nn.sample_gumbel(np.random.default_rng(13), (3, 5), dtype=np.float64)
    base = rng.normal(size=(3, 5))
    weight = Tensor(rng.uniform(0.5, 1.5, (3, 5)), dtype=np.float64)

    def grads(hard):
        logits = Tensor(base.copy(), requires_grad=True, dtype=np.float64)
        out = nn.gumbel_softmax(logits, temperature=1.0, hard=hard, noise=noise)
        backward((out * weight).sum())
        return logits.grad

    assert np.allclose(grads(True), grads(False), atol=1e-12)


def make_scalar_param(value, dtype=np.float64):
    store = ParamStore()
    store.add("w", Tensor(np.array([value]), dtype=dtype))
    return store


def test_adam_first_step_is_lr_times_sign():
    store = make_scalar_param(0.0)
    opt = nn.Adam(store, lr=0.001)
    store["w"].grad = np.array([7.3])
    opt.step()
    assert abs(store["w"].data[0] + 0.001) < 1e-9  # moved by -lr * sign(g)


def test_adam_zero_grad_leaves_params_unchanged():
    store = make_scalar_param(1.5)
    opt = nn.Adam(store)
    for _ in range(5):
        store["w"].grad = np.array([0.0])
        opt.step()
    assert store["w"].data[0] == 1.5
    # absent grads are also a no-op
    store["w"].grad = None
    opt.step()
    assert store["w"].data[0] == 1.5


def test_adam_matches_textbook_recurrence_on_quadratic():
    # oracle: scalar recurrence in float64 on f(w) = (w-3)^2
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    w, m, v = 0.0, 0.0, 0.0
    trajectory = []
    for t in range(1, 201):
        g = 2.0 * (w - 3.0)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        trajectory.append(w)
    assert abs(trajectory[-1] - 3.0) < 0.1

    store = make_scalar_param(0.0)
    opt = nn.Adam(store, lr=lr, eps=eps)
    for t in range(200):
        store["w"].grad = 2.0 * (store["w"].data - 3.0)
        opt.step()
        assert abs(store["w"].data[0] - trajectory[t]) < 1e-9
    assert abs(store["w"].data[0] - 3.0) < 0.1


def test_adam_gradient_scale_invariance_small_eps():
    def one_step(scale):
        store = make_scalar_param(1.0)
        opt = nn.Adam(store, lr=0.01, eps=1e-12)
        store["w"].grad = np.array([0.37 * scale])
        opt.step()
        return 1.0 - store["w"].data[0]

    u1, u10 = one_step(1.0), one_step(10.0)
    assert abs(u1 - u10) / abs(u1) < 1e-3


def test_adam_aborts_on_nan_grad_naming_parameter():
    store = make_scalar_param(0.0)
    opt = nn.Adam(store)
    store["w"].grad = np.array([np.nan])
    with pytest.raises(FloatingPointError, match="'w'"):
        opt.step()
