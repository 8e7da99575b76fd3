import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from singtech.nn import (AdamState, LossConfig, WeightsFormatError, adam_step, bce_loss,
                         bigru_forward, conv2d_forward, dumps_weights, focal_loss, glorot_uniform,
                         grad_check, linear_sigmoid_forward, loads_weights, splitmix64, uniform01)
from singtech.nn.gradcheck import CASES


@pytest.mark.parametrize("module", sorted(CASES))
def test_gradients_match_finite_differences(module):
    assert grad_check(module, seed=0) < 1e-4


@pytest.mark.parametrize("module", ["conv2d", "bigru", "linear_sigmoid"])
def test_gradients_other_seeds(module):
    for seed in (1, 2):
        assert grad_check(module, seed=seed) < 1e-4


def test_conv_identity_and_bias():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 5, 6, 1))
    y, _ = conv2d_forward(x, np.ones((1, 1, 1, 1)), np.zeros(1))
    np.testing.assert_array_equal(y, x)
    y, _ = conv2d_forward(np.zeros((1, 4, 4, 3)), rng.standard_normal((3, 3, 3, 2)), np.array([0.5, -1.0]))
    np.testing.assert_array_equal(y, np.broadcast_to([0.5, -1.0], (1, 4, 4, 2)))


def test_conv_matches_direct_cross_correlation():
    rng = np.random.default_rng(3)
    for c_in in (1, 6):
        x = rng.standard_normal((1, 5, 7, c_in))
        w = rng.standard_normal((3, 3, c_in, 2))
        b = rng.standard_normal(2)
        y, _ = conv2d_forward(x, w, b)
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        ref = np.zeros((1, 5, 7, 2))
        for f in range(5):
            for t in range(7):
                ref[0, f, t] = np.einsum("ijc,ijco->o", xp[0, f:f + 3, t:t + 3], w) + b
        np.testing.assert_allclose(y, ref, atol=1e-12)


def test_conv_shape_mismatch():
    with pytest.raises(ValueError):
        conv2d_forward(np.zeros((1, 4, 4, 2)), np.zeros((3, 3, 3, 1)), np.zeros(1))


def gru_params(rng, d, h, scale=0.5):
    p = {}
    for direction in ("fw", "bw"):
        p[f"gru.{direction}.w_in"] = rng.standard_normal((d, 3 * h)) * scale
        p[f"gru.{direction}.w_rec"] = rng.standard_normal((h, 3 * h)) * scale
        p[f"gru.{direction}.bias"] = rng.standard_normal(3 * h) * scale
    return p


def test_gru_zero_weights():
    p = {k: np.zeros_like(v) for k, v in gru_params(np.random.default_rng(0), 3, 2).items()}
    y, _ = bigru_forward(np.random.default_rng(1).standard_normal((1, 1, 3)), p)
    np.testing.assert_array_equal(y, 0.0)


def test_bigru_reversal_swaps_halves():
    rng = np.random.default_rng(0)
    p = gru_params(rng, 3, 2)
    swapped = {k.replace("fw", "tmp").replace("bw", "fw").replace("tmp", "bw"): v for k, v in p.items()}
    x = rng.standard_normal((1, 6, 3))
    y, _ = bigru_forward(x, p)
    y_rev, _ = bigru_forward(x[:, ::-1], swapped)
    np.testing.assert_allclose(y_rev[:, ::-1], np.concatenate([y[..., 2:], y[..., :2]], axis=-1), atol=1e-12)
    # with shared direction weights the halves trade places
    shared = {k.replace("bw", "fw").replace("fw", d): p[k.replace("bw", "fw")]
              for k in p for d in ("fw", "bw")}
    y, _ = bigru_forward(x, shared)
    y_rev, _ = bigru_forward(x[:, ::-1], shared)
    np.testing.assert_allclose(y_rev[:, ::-1], np.concatenate([y[..., 2:], y[..., :2]], axis=-1), atol=1e-12)


def test_gru_matches_reference_recurrence():
    rng = np.random.default_rng(5)
    p = gru_params(rng, 3, 2)
    x = rng.standard_normal((1, 4, 3))
    y, _ = bigru_forward(x, p)
    sig = lambda a: 1 / (1 + np.exp(-a))
    w_in, w_rec, b = p["gru.fw.w_in"], p["gru.fw.w_rec"], p["gru.fw.bias"]
    h = np.zeros(2)
    for t in range(4):
        gi = x[0, t] @ w_in + b
        z = sig(gi[:2] + h @ w_rec[:, :2])
        r = sig(gi[2:4] + h @ w_rec[:, 2:4])
        cand = np.tanh(gi[4:] + (r * h) @ w_rec[:, 4:])
        h = (1 - z) * h + z * cand
        np.testing.assert_allclose(y[0, t, :2], h, atol=1e-12)


def test_gru_mask_carries_state():
    rng = np.random.default_rng(2)
    p = gru_params(rng, 3, 2)
    x = rng.standard_normal((1, 6, 3))
    mask = np.array([[1, 1, 1, 1, 0, 0]], dtype=float)
    y, _ = bigru_forward(x, p, mask=mask)
    y_short, _ = bigru_forward(x[:, :4], p)
    np.testing.assert_allclose(y[:, :4], y_short, atol=1e-12)


def test_sigmoid_output_open_interval():
    p, _ = linear_sigmoid_forward(np.array([[[1000.0], [-1000.0]]], dtype=np.float32),
                                  np.ones((1, 1), np.float32), np.zeros(1, np.float32))
    assert np.all(p > 0) and np.all(p < 1)


def test_focal_reduces_to_bce():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        shape = tuple(rng.integers(1, 6, size=2))
        pred = rng.uniform(1e-4, 1 - 1e-4, shape)
        target = (rng.random(shape) < 0.5).astype(np.float64)
        mask = (rng.random(shape) < 0.7).astype(np.float64)
        mask.reshape(-1)[0] = 1
        a, ga = focal_loss(pred, target, mask, alpha=1.0, gamma=0.0)
        b, gb = bce_loss(pred, target, mask)
        worst = max(worst, abs(a - b), float(np.abs(ga - gb).max()))
    assert worst <= 1e-12


def test_focal_closed_form():
    loss, _ = focal_loss(np.array([0.5]), np.array([1.0]), alpha=0.2, gamma=2.0)
    # 0.2 * 0.25 * ln 2
    assert loss == pytest.approx(0.0346574, abs=1e-6)
    assert loss == pytest.approx(0.05 * math.log(2), abs=1e-15)


def test_loss_masking_and_errors():
    pred = np.array([[0.9, 0.1]])
    target = np.array([[1.0, 1.0]])
    loss, grad = bce_loss(pred, target, np.array([[1.0, 0.0]]))
    assert loss == pytest.approx(-math.log(0.9))
    assert grad[0, 1] == 0.0
    with pytest.raises(ValueError):
        bce_loss(pred, target, np.zeros((1, 2)))
    with pytest.raises(ValueError):
        LossConfig(kind="focal", alpha=1.5)
    with pytest.raises(ValueError):
        LossConfig(kind="hinge")


def test_loss_clamp_is_finite():
    loss, grad = bce_loss(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    assert math.isfinite(loss) and np.all(np.isfinite(grad))
    assert loss == pytest.approx(-math.log(1e-7), rel=1e-6)


def test_adam_matches_scalar_reference():
    rng = np.random.default_rng(0)
    theta = rng.standard_normal(4)
    params = {"w": theta.copy()}
    state = AdamState(lr=1e-2)
    ref = theta.copy()
    m = np.zeros(4)
    v = np.zeros(4)
    for t in range(1, 6):
        g = rng.standard_normal(4)
        adam_step(params, {"w": g}, state)
        for i in range(4):
            m[i] = 0.9 * m[i] + 0.1 * g[i]
            v[i] = 0.999 * v[i] + 0.001 * g[i] ** 2
            mhat = m[i] / (1 - 0.9 ** t)
            vhat = v[i] / (1 - 0.999 ** t)
            ref[i] -= 1e-2 * mhat / (math.sqrt(vhat) + 1e-8)
    np.testing.assert_allclose(params["w"], ref, rtol=1e-12)
    assert state.t == 5


def test_adam_first_step_is_lr_sign():
    params = {"w": np.zeros(3)}
    adam_step(params, {"w": np.array([2.0, -3.0, 0.5])}, AdamState())
    np.testing.assert_allclose(params["w"], [-1e-4, 1e-4, -1e-4], rtol=1e-6)


def test_adam_shape_check():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(3)}, {"w": np.zeros(2)}, AdamState())


def test_splitmix64_reference_values():
    assert [int(v) for v in splitmix64(0, 3)] == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]
    u = uniform01(42, 1000)
    assert u.min() >= 0 and u.max() < 1


def test_glorot_deterministic_and_bounded():
    a = glorot_uniform(7, "conv1.weight", (3, 3, 1, 8), 9, 72)
    b = glorot_uniform(7, "conv1.weight", (3, 3, 1, 8), 9, 72)
    c = glorot_uniform(8, "conv1.weight", (3, 3, 1, 8), 9, 72)
    assert a.tobytes() == b.tobytes() and a.tobytes() != c.tobytes()
    assert np.abs(a).max() <= math.sqrt(6 / 81)


@settings(max_examples=30, deadline=None)
@given(st.dictionaries(st.text("abcdefgh._", min_size=1, max_size=12),
                       st.lists(st.integers(1, 4), min_size=0, max_size=3), max_size=5))
def test_weights_round_trip(spec):
    rng = np.random.default_rng(0)
    params = {name: rng.standard_normal(shape).astype(np.float32) for name, shape in spec.items()}
    back, config = loads_weights(dumps_weights(params, {"a": [1, 2]}))
    assert config == {"a": [1, 2]}
    assert sorted(back) == sorted(params)
    for name in params:
        np.testing.assert_array_equal(back[name], params[name])


def test_weights_bad_input():
    data = dumps_weights({"w": np.ones((2, 2), np.float32)}, {})
    with pytest.raises(WeightsFormatError):
        loads_weights(b"NOPE" + data[5:])
    with pytest.raises(WeightsFormatError):
        loads_weights(data[:-3])
