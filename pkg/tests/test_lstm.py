import numpy as np
import pytest

from aedcompress.lowrank import factorize_model
from aedcompress.lstm import backward, forward, init_model, param_count
from aedcompress.quant import quantize_model
from aedcompress.train import bce_loss
from oracles import lstm_step_scalar


def finite_difference_check(model, x, y, seed, eps=1e-5, rtol=1e-4, atol=1e-9):
    """Compare backward() to central differences of the summed BCE loss, every component."""

    def loss():
        probs, _ = forward(model, x, train=True, seed=seed)
        return bce_loss(probs, y)[0]

    probs, trace = forward(model, x, train=True, seed=seed)
    grads = backward(model, trace, bce_loss(probs, y)[1])
    worst = 0.0
    for name, value in model.params.items():
        for idx in np.ndindex(value.shape):
            old = value[idx]
            value[idx] = old + eps
            up = loss()
            value[idx] = old - eps
            down = loss()
            value[idx] = old
            fd = (up - down) / (2 * eps)
            an = grads[name][idx]
            err = abs(fd - an)
            assert err <= rtol * max(abs(fd), abs(an)) + atol, (name, idx, fd, an)
            worst = max(worst, err / max(abs(fd), abs(an), atol / rtol))
    return worst


def test_zero_weights_fixed_point():
    m = init_model(3, 4, 2, 2, seed=0)
    for v in m.params.values():
        v[...] = 0.0
    probs, trace = forward(m, np.random.default_rng(0).standard_normal((7, 3)))
    np.testing.assert_array_equal(probs, [0.5, 0.5])
    for layer in trace.layers:
        assert np.all(layer.c == 0) and np.all(layer.h == 0)


def test_single_step_matches_hand_evaluation():
    m = init_model(1, 1, 1, 1, seed=0)
    wx, wh, b = np.array([0.5, -0.3, 0.8, 0.2]), np.array([0.1, 0.4, -0.6, 0.9]), np.array([0.05, 1.0, -0.1, 0.3])
    m.params["l0.w_x"][:, 0] = wx
    m.params["l0.w_h"][:, 0] = wh
    m.params["l0.b"][:] = b
    m.params["head.w"][:] = 1.7
    m.params["head.b"][:] = -0.2
    x = 0.9
    h, _ = lstm_step_scalar(x, 0.0, 0.0, wx, wh, b)
    expected = 1.0 / (1.0 + np.exp(-(1.7 * h - 0.2)))
    probs, _ = forward(m, np.array([[x]]))
    assert abs(probs[0] - expected) <= 1e-15


def test_two_steps_match_hand_evaluation():
    m = init_model(1, 1, 1, 1, seed=3)
    p = m.params
    wx, wh, b = p["l0.w_x"][:, 0], p["l0.w_h"][:, 0], p["l0.b"]
    h, c = lstm_step_scalar(0.4, 0.0, 0.0, wx, wh, b)
    h, c = lstm_step_scalar(-1.1, h, c, wx, wh, b)
    expected = 1.0 / (1.0 + np.exp(-(p["head.w"][0, 0] * h + p["head.b"][0])))
    assert abs(forward(m, np.array([[0.4], [-1.1]]))[0][0] - expected) <= 1e-15


def test_feature_dim_mismatch():
    with pytest.raises(ValueError, match="feature dim"):
        forward(init_model(3, 4, 1, 2), np.zeros((5, 2)))


def test_forward_is_deterministic():
    m = init_model(3, 5, 3, 2, dropout=0.3, seed=1)
    x = np.random.default_rng(2).standard_normal((4, 6, 3))
    a, _ = forward(m, x, train=True, seed=9)
    b, _ = forward(m, x, train=True, seed=9)
    assert a.tobytes() == b.tobytes()
    assert forward(m, x)[0].tobytes() == forward(m, x)[0].tobytes()


def test_batch_matches_single_clips():
    m = init_model(3, 5, 2, 2, seed=1)
    x = np.random.default_rng(2).standard_normal((4, 6, 3))
    batch, _ = forward(m, x)
    for i in range(4):
        np.testing.assert_allclose(forward(m, x[i])[0], batch[i], rtol=0, atol=1e-15)


def test_probabilities_strictly_inside_unit_interval():
    rng = np.random.default_rng(0)
    for seed in range(20):
        m = init_model(4, 6, 3, 3, seed=seed)
        probs, _ = forward(m, rng.standard_normal((3, 10, 4)) * 5)
        assert np.all((probs > 0) & (probs < 1))


def test_dropout_only_in_train_mode():
    m = init_model(3, 5, 3, 2, dropout=0.5, seed=1)
    x = np.random.default_rng(2).standard_normal((2, 6, 3))
    _, infer = forward(m, x)
    _, tr = forward(m, x, train=True, seed=0)
    assert all(layer.mask is None for layer in infer.layers)
    assert tr.layers[-1].mask is None  # top layer feeds the head directly
    assert all(layer.mask is not None for layer in tr.layers[:-1])


def test_zero_grad_probs_gives_zero_gradients():
    m = init_model(2, 3, 2, 2, seed=0)
    _, trace = forward(m, np.ones((5, 2)), train=True, seed=0)
    grads = backward(m, trace, np.zeros(2))
    assert all(np.all(g == 0) for g in grads.values())


def test_rate_zero_dropout_equals_no_dropout():
    m = init_model(2, 3, 3, 2, dropout=0.0, seed=4)
    x = np.random.default_rng(1).standard_normal((3, 5, 2))
    g_out = np.random.default_rng(2).standard_normal((3, 2))
    _, t_train = forward(m, x, train=True, seed=0)
    _, t_infer = forward(m, x)
    g1, g2 = backward(m, t_train, g_out), backward(m, t_infer, g_out)
    for k in g1:
        assert g1[k].tobytes() == g2[k].tobytes()


def test_trace_mismatch_rejected():
    m = init_model(2, 3, 2, 2, seed=0)
    _, trace = forward(m, np.ones((4, 2)))
    with pytest.raises(ValueError):
        backward(factorize_model(m, 0.5), trace, np.ones(2))


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    m = init_model(2, 3, 2, 2, dropout=0.25, seed=seed)
    x = rng.standard_normal((2, 4, 2))
    y = rng.integers(0, 2, size=(2, 2)).astype(float)
    finite_difference_check(m, x, y, seed)


@pytest.mark.parametrize("seed", range(5))
def test_factorized_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    m = factorize_model(init_model(2, 3, 3, 2, dropout=0.25, seed=seed), 0.7)
    x = rng.standard_normal((2, 4, 2))
    y = rng.integers(0, 2, size=(2, 2)).astype(float)
    finite_difference_check(m, x, y, seed)


def test_quantized_gradients_are_straight_through():
    # gradient w.r.t. masters equals the exact gradient of the full-precision
    # network evaluated at the fake-quantized weights
    m = quantize_model(init_model(2, 3, 2, 2, seed=5), 4, inputs=False)
    x = np.random.default_rng(0).standard_normal((2, 4, 2))
    g_out = np.array([[0.3, -1.0], [0.5, 0.2]])
    _, trace = forward(m, x)
    g_q = backward(m, trace, g_out)
    frozen = m.copy()
    frozen.params = m.effective_params()
    frozen.quant_bits = {}
    _, trace2 = forward(frozen, x)
    g_ref = backward(frozen, trace2, g_out)
    for k in g_q:
        np.testing.assert_allclose(g_q[k], g_ref[k], rtol=0, atol=0)


def test_full_rank_factorization_preserves_outputs():
    for seed in range(5):
        m = init_model(4, 6, 3, 3, seed=seed)
        x = np.random.default_rng(seed).standard_normal((3, 8, 4))
        assert np.max(np.abs(forward(factorize_model(m, 1.0), x)[0] - forward(m, x)[0])) <= 1e-8


class TestParamCount:
    def test_reference_baseline_3x256(self):
        counts = param_count(init_model(64, 256, 3, 3))
        assert counts["total"] == 1_380_099
        mb = counts["total"] * 4 / 2**20
        assert abs(mb - 5.273) / 5.273 <= 0.01

    def test_hand_count_scalar_model(self):
        assert param_count(init_model(1, 1, 1, 1))["total"] == 14

    def test_factorized_counts(self):
        m = init_model(5, 6, 2, 2, seed=0)
        f, ranks = factorize_model(m, 0.7, return_ranks=True)
        c = param_count(f)
        h = 6
        r0, r1, rx = ranks["l0.v_h"], ranks["l1.v_h"], ranks["l0.v_x"]
        assert c["l0.z_h"] + c["l0.v_h"] == 4 * h * r0 + h * r0
        assert c["l1.z_x"] == 4 * h * r0
        assert c["l1.z_h"] + c["l1.v_h"] == 4 * h * r1 + h * r1
        assert c["l0.z_x"] + c["l0.v_x"] == 4 * h * rx + 5 * rx

    def test_independent_of_quantization(self):
        m = init_model(4, 5, 2, 2)
        assert param_count(quantize_model(m, 4)) == param_count(m)
