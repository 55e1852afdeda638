import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gridterm import autoencoder as nn
from gridterm.errors import BadShape, DimensionMismatch, EmptyInput, NonFinite

SIZES = nn.autoencoder_sizes(30, (24, 16, 8))


def finite_difference_grads(net, x, eps=1e-5):
    out = []
    for p in net.params():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + eps
            up = nn.dataset_loss(net, x, x)
            p[i] = old - eps
            down = nn.dataset_loss(net, x, x)
            p[i] = old
            g[i] = (up - down) / (2 * eps)
        out.append(g)
    return out


def gradient_check(seed=0):
    rng = np.random.default_rng(seed)
    net = nn.init_network(SIZES, seed)
    for b in net.biases:  # nonzero biases so their gradients are exercised too
        b[:] = rng.normal(0, 0.1, b.shape)
    x = rng.normal(size=(5, 30))
    _, analytic = nn.loss_and_grads(net, x, x)
    numeric = finite_difference_grads(net, x)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        rel = np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
        worst = max(worst, rel)
    return worst


def test_layer_sizes():
    assert SIZES == [30, 24, 16, 8, 16, 24, 30]
    net = nn.init_network(SIZES, 1)
    assert net.weights[0].shape == (24, 30)
    assert net.sizes[net.n_encoder] == 8


def test_init_deterministic_and_bounded():
    a = nn.init_network(SIZES, 3)
    b = nn.init_network(SIZES, 3)
    c = nn.init_network(SIZES, 4)
    for wa, wb, wc, (fi, fo) in zip(a.weights, b.weights, c.weights, zip(SIZES, SIZES[1:])):
        np.testing.assert_array_equal(wa, wb)
        assert not np.array_equal(wa, wc)
        assert np.abs(wa).max() <= np.sqrt(6 / (fi + fo))
    assert all(not bb.any() for bb in a.biases)


def test_unmirrored_sizes_rejected():
    with pytest.raises(BadShape):
        nn.init_network([30, 24, 8, 16, 30], 0)
    with pytest.raises(BadShape):
        nn.TrainConfig(epochs=0)


def test_zero_network_outputs_zero():
    net = nn.init_network(SIZES, 0)
    for w in net.weights:
        w[:] = 0
    emb, rec = nn.forward(net, np.random.default_rng(0).normal(size=30))
    assert emb.shape == (8,) and rec.shape == (30,)
    assert not emb.any() and not rec.any()


def test_relu_homogeneity():
    rng = np.random.default_rng(5)
    net = nn.init_network(SIZES, 5)
    for w in net.weights:
        w[:] = np.abs(w)
    x = rng.uniform(0, 1, (4, 30))
    one = nn._run(net, x, stop=net.n_encoder - 1)
    two = nn._run(net, 2 * x, stop=net.n_encoder - 1)
    np.testing.assert_allclose(two, 2 * one, rtol=1e-12)


def test_dimension_mismatch():
    net = nn.init_network(SIZES, 0)
    with pytest.raises(DimensionMismatch):
        nn.forward(net, np.zeros(29))


def test_gradient_check():
    assert gradient_check(0) < 1e-4


def test_gradient_check_softmax_head():
    rng = np.random.default_rng(2)
    net = nn.init_network([6, 5, 3], 2, mirrored=False, output="softmax")
    x = rng.normal(size=(7, 6))
    y = np.eye(3)[rng.integers(0, 3, 7)]
    _, analytic = nn.loss_and_grads(net, x, y)
    eps = 1e-5
    for p, a in zip(net.params(), analytic):
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = nn.dataset_loss(net, x, y)
            flat[i] = old - eps
            down = nn.dataset_loss(net, x, y)
            flat[i] = old
            assert a.reshape(-1)[i] == pytest.approx((up - down) / (2 * eps), rel=1e-4, abs=1e-9)


def test_constant_dataset_is_learned():
    row = np.random.default_rng(0).normal(size=30)
    x = np.tile(row, (128, 1))
    cfg = nn.TrainConfig(epochs=200, batch_size=16, learning_rate=0.05, seed=0)
    _, curve = nn.train(nn.init_network(SIZES, 0), x, cfg)
    assert curve[-1] < 1e-3


def test_training_reduces_loss_and_is_reproducible():
    x = np.random.default_rng(1).normal(size=(300, 30))
    cfg = nn.TrainConfig(epochs=30, seed=9)
    a, ca = nn.train(nn.init_network(SIZES, 9), x, cfg)
    b, cb = nn.train(nn.init_network(SIZES, 9), x, cfg)
    assert ca[-1] <= ca[0]
    np.testing.assert_array_equal(ca, cb)
    for wa, wb in zip(a.params(), b.params()):
        np.testing.assert_array_equal(wa, wb)


def test_training_errors():
    net = nn.init_network(SIZES, 0)
    with pytest.raises(EmptyInput):
        nn.train(net, np.zeros((0, 30)), nn.TrainConfig())
    with pytest.raises(NonFinite):
        nn.train(net, np.random.default_rng(0).normal(size=(64, 30)) * 1e3,
                 nn.TrainConfig(epochs=50, learning_rate=10.0))


def test_encode_all_skips_empty_segments():
    net = nn.init_network(SIZES, 0)
    bf = np.random.default_rng(0).normal(size=(12, 30))
    mask = np.zeros(12, bool)
    mask[[1, 5, 9]] = True
    (enc,) = nn.encode_all(net, [bf], [mask])
    assert enc.embeddings.shape == (9, 8)
    assert enc.empty.sum() == 3
    np.testing.assert_array_equal(enc.segment_index, [1, 3, 4, 5, 7, 8, 9, 11, 12])
    (none,) = nn.encode_all(net, [bf], [np.ones(12, bool)])
    assert none.embeddings.shape == (0, 8)


def test_row_results_do_not_depend_on_batch():
    net = nn.init_network(SIZES, 0)
    x = np.random.default_rng(0).normal(size=(700, 30))
    whole = nn.encode(net, x)
    pieces = np.vstack([nn.encode(net, x[i:i + 37]) for i in range(0, 700, 37)])
    np.testing.assert_array_equal(whole, pieces)
    np.testing.assert_array_equal(nn.encode(net, x[3]), whole[3])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 30), elements=st.floats(-1e6, 1e6)))
def test_encoder_output_finite(x):
    net = nn.init_network(SIZES, 0)
    assert np.all(np.isfinite(nn.encode(net, x)))
