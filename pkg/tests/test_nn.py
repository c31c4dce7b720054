import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qccnn import gradcheck, nn
from qccnn.errors import ConfigurationError, UsageError
from oracles import naive_conv


@pytest.mark.parametrize(
    "dims, shape, out_c, k, s, g",
    [
        (2, (2, 4, 9, 9), 6, 3, 2, 2),
        (2, (2, 4, 9, 9), 4, 2, 1, 1),
        (3, (2, 2, 6, 6, 6), 4, 2, 1, 2),
        (3, (1, 2, 6, 6, 6), 2, 5, 2, 1),
        (3, (1, 8, 3, 3, 3), 64, 2, 1, 8),
    ],
)
def test_conv_matches_naive_exactly(dims, shape, out_c, k, s, g):
    rng = np.random.default_rng(0)
    layer = nn.Conv(dims, shape[1], out_c, k, s, groups=g, rng=rng)
    x = rng.normal(size=shape)
    got = layer.forward(x)
    want = naive_conv(x, layer.params["weight"], layer.params["bias"], s, g)
    assert np.array_equal(got, want)


def test_conv_small_examples():
    layer = nn.Conv(2, 1, 1, 2)
    layer.params["weight"][...] = [[[[1, 0], [0, 1]]]]
    out = layer.forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    np.testing.assert_array_equal(out, [[[[5.0]]]])
    ident = nn.Conv(3, 1, 1, 1)
    ident.params["weight"][...] = 1.0
    x = np.random.default_rng(1).normal(size=(2, 1, 3, 4, 5))
    np.testing.assert_array_equal(ident.forward(x), x)


def test_param_count_formulas():
    assert nn.conv_param_count(2, 1, 4, dims=2) == 20
    assert nn.conv_param_count(2, 8, 64, dims=3, groups=8) == 576
    assert nn.linear_param_count(784, 11) == 8635
    for k, c, o, g, d in [(3, 6, 9, 3, 2), (2, 4, 8, 1, 3), (5, 2, 2, 2, 3)]:
        layer = nn.Conv(d, c, o, k, groups=g, rng=np.random.default_rng(0))
        assert layer.param_count() == nn.conv_param_count(k, c, o, d, g) == (k**d * c // g + 1) * o
    assert nn.Linear(784, 11, rng=np.random.default_rng(0)).param_count() == 8635
    with pytest.raises(ConfigurationError):
        nn.conv_param_count(2, 3, 4, groups=2)


def test_grouped_conv_no_cross_group_leakage():
    rng = np.random.default_rng(2)
    layer = nn.Conv(3, 8, 64, 2, groups=8, rng=rng)
    x = rng.normal(size=(1, 8, 3, 3, 3))
    layer.forward(x)
    for g in range(8):
        u = np.zeros((1, 64, 2, 2, 2))
        u[:, g * 8 : (g + 1) * 8] = rng.normal(size=(1, 8, 2, 2, 2))
        gx = layer.backward(u)
        others = np.delete(np.arange(8), g)
        assert not gx[:, others].any()
        assert gx[:, g].any()
    # zeroing one input channel changes only its group's outputs
    base = layer.forward(x)
    x2 = x.copy()
    x2[:, 3] = 0
    diff = np.abs(layer.forward(x2) - base).reshape(64, -1).max(axis=1)
    assert diff[24:32].all() and not np.delete(diff, np.arange(24, 32)).any()


@pytest.mark.parametrize("case", range(11))
def test_layer_finite_differences(case):
    rng = np.random.default_rng(100 + case)
    name, layer, x, training = gradcheck.classical_cases(rng)[case]
    assert gradcheck.layer_case(layer, x, rng, training) <= 1e-5, name


def test_batchnorm_fd_on_spec_shape():
    rng = np.random.default_rng(3)
    bn = nn.BatchNorm(3)
    bn.params["gamma"][...] = rng.uniform(0.5, 2, 3)
    bn.params["beta"][...] = rng.normal(size=3)
    assert gradcheck.layer_case(bn, rng.normal(size=(2, 3, 4, 4)), rng) <= 1e-6


def test_loss_fd():
    assert gradcheck.loss_case(np.random.default_rng(4)) <= 1e-5


def test_relu_examples():
    r = nn.ReLU()
    np.testing.assert_array_equal(r.forward(np.array([-1.0, 2.0])), [0.0, 2.0])


def test_maxpool_examples():
    p = nn.MaxPool(2)
    np.testing.assert_array_equal(p.forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])), [[[[4.0]]]])
    g = p.backward(np.array([[[[1.0]]]]))
    np.testing.assert_array_equal(g, [[[[0, 0], [0, 1.0]]]])
    # ties: gradient to the first element in row-major window order
    p.forward(np.ones((1, 1, 2, 2)))
    np.testing.assert_array_equal(p.backward(np.array([[[[1.0]]]])), [[[[1.0, 0], [0, 0]]]])
    cube = np.arange(8.0).reshape(1, 1, 2, 2, 2)
    cube[0, 0, 1, 0, 1] = 100
    p3 = nn.MaxPool(3)
    assert p3.forward(cube).item() == 100
    assert p3.backward(np.ones((1, 1, 1, 1, 1)))[0, 0, 1, 0, 1] == 1


def test_maxpool_crops_odd_sizes():
    p = nn.MaxPool(2)
    x = np.arange(30.0).reshape(1, 1, 5, 6)
    out = p.forward(x)
    assert out.shape == (1, 1, 2, 3)
    assert p.output_shape((1, 5, 6)) == (1, 2, 3)
    assert not p.backward(np.ones_like(out))[..., 4, :].any()


def test_batchnorm_examples(caplog):
    bn = nn.BatchNorm(2)
    x = np.ones((3, 2, 2, 2))
    np.testing.assert_allclose(bn.forward(x, training=True), 0)
    bn.params["gamma"][...] = 0
    bn.params["beta"][...] = [0.5, -2]
    out = bn.forward(np.random.default_rng(0).normal(size=(3, 2, 2, 2)), training=True)
    np.testing.assert_array_equal(out[:, 0], 0.5)
    np.testing.assert_array_equal(out[:, 1], -2)
    fresh = nn.BatchNorm(2)
    with caplog.at_level("WARNING"):
        y = fresh.forward(np.full((1, 2, 1, 1), 3.0), training=False)
    assert "before any training batch" in caplog.text
    np.testing.assert_allclose(y, 3.0 / np.sqrt(1 + 1e-5))


def test_batchnorm_running_stats():
    rng = np.random.default_rng(5)
    bn = nn.BatchNorm(1)
    x = rng.normal(2.0, 3.0, size=(4, 1, 3))
    bn.forward(x, training=True)
    v = x.ravel()
    assert bn.running_mean[0] == pytest.approx(0.1 * v.mean())
    assert bn.running_var[0] == pytest.approx(0.9 + 0.1 * v.var(ddof=1))


def test_dropout():
    d = nn.Dropout(0.0, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(10, 10))
    assert d.forward(x, training=True) is x
    d = nn.Dropout(0.3, np.random.default_rng(0))
    assert d.forward(x, training=False) is x
    ones = np.ones(1_000_000)
    y = d.forward(ones, training=True)
    assert abs(np.mean(y == 0) - 0.3) <= 0.003
    np.testing.assert_allclose(np.unique(y), [0.0, 1 / 0.7])
    with pytest.raises(ConfigurationError):
        nn.Dropout(1.0)


def test_linear_identity():
    lin = nn.Linear(3, 3)
    lin.params["weight"][...] = np.eye(3)
    x = np.random.default_rng(0).normal(size=(2, 3))
    np.testing.assert_array_equal(lin.forward(x), x)


def test_cross_entropy_examples():
    loss, _ = nn.softmax_cross_entropy(np.zeros((1, 2)), [0])
    assert loss == pytest.approx(0.693147, abs=1e-6)
    loss, _ = nn.softmax_cross_entropy(np.array([[1000.0, 0.0]]), [0])
    assert loss == 0.0
    for c in (2, 5, 11):
        assert nn.softmax_cross_entropy(np.full((3, c), 0.7), [0, 1, 1])[0] == pytest.approx(math.log(c))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6), c=st.integers(2, 6), scale=st.floats(0.1, 100))
def test_cross_entropy_gradient_is_softmax_minus_onehot(seed, n, c, scale):
    rng = np.random.default_rng(seed)
    logits = scale * rng.normal(size=(n, c))
    labels = rng.integers(0, c, size=n)
    loss, grad = nn.softmax_cross_entropy(logits, labels)
    assert loss >= 0
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(n), labels] -= 1
    np.testing.assert_allclose(grad, p / n, atol=1e-15)


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(UsageError):
        nn.cross_entropy_items(np.zeros((2, 3)), [0, 3])


def test_adam_zero_grad_and_first_step():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    opt = nn.Adam(lr=0.01)
    opt.step(p, {"w": np.zeros(3)})
    np.testing.assert_array_equal(p["w"], [1.0, -2.0, 3.0])
    opt = nn.Adam(lr=0.01)
    g = np.array([0.5, -3.0, 1e-3])
    opt.step(p, {"w": g})
    np.testing.assert_allclose(p["w"], np.array([1.0, -2.0, 3.0]) - 0.01 * np.sign(g), atol=1e-7)


def test_adam_three_step_trace():
    # minimise f(w) = (w - 3)^2 from w = 0 with lr 0.1
    w = {"w": np.array([0.0])}
    opt = nn.Adam(lr=0.1)
    m = v = 0.0
    ref = 0.0
    trace = []
    for t in range(1, 4):
        g = 2 * (w["w"][0] - 3)
        opt.step(w, {"w": np.array([g])})
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.1 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert w["w"][0] == pytest.approx(ref, abs=1e-15)
        trace.append(w["w"][0])
    # by hand: step 1 moves exactly lr; step 2 by lr * (5.8947 / 5.9008)
    assert trace[0] == pytest.approx(0.1, abs=1e-9)
    assert trace[1] == pytest.approx(0.1 + 0.1 * (1.12 / 0.19) / math.sqrt(0.069604 / 0.001999), abs=1e-9)


def test_sequential_plumbing():
    rng = np.random.default_rng(0)
    net = nn.Sequential([nn.Conv(2, 1, 4, 2, 2, rng=rng), nn.Flatten(), nn.Linear(16, 3, rng=rng)])
    assert net.output_shape((1, 4, 4)) == (3,)
    assert net.param_count() == 20 + 51
    assert sorted(net.named_params()) == ["0.bias", "0.weight", "2.bias", "2.weight"]
    x = rng.normal(size=(2, 1, 4, 4))
    out = net.forward(x, training=True)
    gx = net.backward(np.ones_like(out))
    assert gx.shape == x.shape
