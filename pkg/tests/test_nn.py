import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradcheck import max_rel_discrepancy, numeric_grads
from pmfs.nn import (
    AdamState,
    ConfigError,
    DenseLayer,
    LossConfig,
    LstmLayer,
    Net,
    NetSpec,
    NumericError,
    ShapeError,
    adam_step,
    dense_forward,
    loss_mse_l2,
    lstm_forward,
    network_gradients,
    sigmoid,
)


def naive_lstm(W, b, x):
    """Step-by-step reference cell, gates stacked i, f, g, o."""
    H = W.shape[0] // 4
    h = np.zeros(H)
    c = np.zeros(H)
    out = []
    for xt in x:
        z = W @ np.concatenate([xt, h]) + b
        i = 1 / (1 + np.exp(-z[:H]))
        f = 1 / (1 + np.exp(-z[H:2 * H]))
        g = np.tanh(z[2 * H:3 * H])
        o = 1 / (1 + np.exp(-z[3 * H:]))
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h)
    return np.array(out), h, c


def test_sigmoid_is_stable_at_extremes():
    z = np.array([-1000.0, -30.0, 0.0, 30.0, 1000.0])
    with np.errstate(over="raise"):
        s = sigmoid(z)
    assert s[0] == 0.0 and s[-1] == 1.0 and s[2] == 0.5
    assert np.all(np.diff(s) >= 0)


def test_lstm_matches_naive_cell():
    rng = np.random.default_rng(1)
    W = rng.normal(size=(12, 2 + 3))
    b = rng.normal(size=12)
    x = rng.normal(size=(7, 2))
    seq, (finals,) = lstm_forward([LstmLayer(W, b, 2)], x)
    ref, h, c = naive_lstm(W, b, x)
    np.testing.assert_allclose(seq, ref, atol=1e-14)
    np.testing.assert_allclose(finals[0], h, atol=1e-14)
    np.testing.assert_allclose(finals[1], c, atol=1e-14)


def test_lstm_gate_blocks():
    W = np.arange(4 * 3 * 5, dtype=float).reshape(12, 5)
    layer = LstmLayer(W, np.zeros(12), 2)
    np.testing.assert_array_equal(layer.gate("forget")[0], W[3:6])
    np.testing.assert_array_equal(layer.gate("output")[0], W[9:12])


def test_lstm_empty_sequence_rejected():
    layer = LstmLayer(np.zeros((4, 2)), np.zeros(4), 1)
    with pytest.raises(ShapeError):
        lstm_forward([layer], np.zeros((0, 1)))


def test_dense_forward():
    W = np.array([[1.0, -2.0], [0.5, 0.0]])
    b = np.array([0.1, -0.1])
    x = np.array([[0.3, 0.2], [-1.0, 1.0]])
    out = dense_forward([DenseLayer(W, b, "tanh")], x)
    np.testing.assert_allclose(out, np.tanh(x @ W.T + b))


def test_dense_shape_mismatch():
    with pytest.raises(ShapeError):
        Net([DenseLayer(np.zeros((3, 2)), np.zeros(3)), DenseLayer(np.zeros((1, 4)), np.zeros(1))])


def test_initialisation():
    spec = NetSpec.stack(3, "lstm", [4], 2)
    net = Net.build(spec, np.random.default_rng(0))
    lstm, dense = net.layers
    assert np.abs(lstm.weights).max() <= 1 / np.sqrt(3 + 4)
    np.testing.assert_array_equal(lstm.gate("forget")[1], np.ones(4))
    np.testing.assert_array_equal(lstm.gate("input")[1], np.zeros(4))
    assert np.abs(dense.weights).max() <= 1 / np.sqrt(4)
    assert dense.activation == "identity"


def test_non_finite_activation_detected():
    net = Net([DenseLayer(np.array([[1.0]]), np.zeros(1), "identity")])
    with pytest.raises(NumericError):
        net.forward(np.array([[np.inf]]))


def test_loss_regularizes_weights_only():
    pred = np.array([[1.0, 2.0], [0.0, 0.0]])
    target = np.zeros((2, 2))
    enc = [np.array([[1.0, 1.0]])]
    dec = [np.array([[2.0]])]
    cfg = LossConfig(lambda_reg=0.1, lambda_enc=1.0, lambda_dec=0.5)
    # (1 + 4 + 0) / 2 samples + 0.1 * (2 + 0.5 * 4)
    assert loss_mse_l2(pred, target, enc, dec, cfg) == pytest.approx(2.5 + 0.4)


def test_masked_loss_ignores_padding():
    pred = np.array([[[1.0], [5.0]]])
    target = np.zeros((1, 2, 1))
    mask = np.array([[True, False]])
    assert loss_mse_l2(pred, target, [], [], LossConfig(), mask) == 1.0


def _random_net(draw_kind, sizes, d_in, d_out, seed):
    spec = NetSpec.stack(d_in, draw_kind, sizes, d_out)
    return Net.build(spec, np.random.default_rng(seed))


@given(
    kind=st.sampled_from(["dense", "lstm"]),
    hidden=st.lists(st.integers(1, 5), min_size=1, max_size=2),
    d_in=st.integers(1, 4),
    d_out=st.integers(1, 3),
    T=st.integers(1, 6),
    B=st.integers(1, 3),
    reg=st.sampled_from([0.0, 1e-2]),
    seed=st.integers(0, 2**16),
)
def test_gradients_match_finite_differences(kind, hidden, d_in, d_out, T, B, reg, seed):
    net = _random_net(kind, hidden, d_in, d_out, seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.normal(size=(B, T, d_in))
    y = rng.normal(size=(B, T, d_out))
    mask = rng.random((B, T)) < 0.8
    mask[0, 0] = True
    cfg = LossConfig(lambda_reg=reg)

    def loss():
        return loss_mse_l2(net.forward(x), y, [], net.weight_params(), cfg, mask)

    analytic = network_gradients(net, x, y, cfg, mask=mask)
    assert max_rel_discrepancy(numeric_grads(loss, net.params()), analytic) < 1e-6


def test_truncated_bptt_equals_full_when_window_covers_sequence():
    net = _random_net("lstm", [3], 2, 1, 0)
    x = np.random.default_rng(0).normal(size=(2, 5, 2))
    y = np.zeros((2, 5, 1))
    full = network_gradients(net, x, y, LossConfig())
    windowed = network_gradients(net, x, y, LossConfig(), bptt_window=5)
    short = network_gradients(net, x, y, LossConfig(), bptt_window=2)
    for a, b in zip(full, windowed):
        np.testing.assert_array_equal(a, b)
    assert any(not np.allclose(a, b) for a, b in zip(full, short))


def test_adam_first_step_is_sign_like():
    p = [np.array([1.0, -2.0, 3.0])]
    g = [np.array([0.5, -4.0, 0.0])]
    state = AdamState.zeros_like(p)
    adam_step(p, g, state, lr=0.1)
    # bias-corrected first step: lr * g / (|g| + eps)
    expected = np.array([1.0, -2.0, 3.0]) - 0.1 * g[0] / (np.abs(g[0]) + 1e-8)
    np.testing.assert_allclose(p[0], expected, rtol=0, atol=1e-15)
    assert state.t == 1


def test_adam_two_steps_against_hand_recursion():
    p = [np.array([0.3])]
    state = AdamState.zeros_like(p)
    gs = [0.2, -0.1]
    m = v = 0.0
    ref = 0.3
    for t, g in enumerate(gs, start=1):
        adam_step(p, [np.array([g])], state, lr=0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert p[0][0] == pytest.approx(ref, abs=1e-15)


def test_adam_rejects_bad_lr():
    p = [np.zeros(2)]
    with pytest.raises(ConfigError):
        adam_step(p, [np.ones(2)], AdamState.zeros_like(p), lr=0.0)


def test_frozen_net_is_read_only():
    net = _random_net("dense", [2], 1, 1, 0)
    net.freeze()
    with pytest.raises(ValueError):
        net.params()[0][0, 0] = 1.0


def test_netspec_round_trip():
    spec = NetSpec.stack(4, "lstm", [3, 2], 5)
    assert NetSpec.from_dict(spec.to_dict()) == spec
    assert spec.d_out == 5
