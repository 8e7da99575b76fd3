"""Central finite-difference verification of analytic gradients (float64)."""

import numpy as np

from . import layers
from .losses import bce_loss, focal_loss

FD_STEP = 1e-5
# cells whose analytic and numeric magnitudes are both negligible are skipped
SKIP_BELOW = 1e-8


def numeric_grad(fn, arrays, name, h=FD_STEP):
    """Central differences of scalar ``fn(arrays)`` w.r.t. ``arrays[name]``, perturbed in place."""
    arr = arrays[name]
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fn(arrays)
        flat[i] = old - h
        down = fn(arrays)
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def max_relative_error(analytic, numeric):
    a = np.abs(analytic)
    n = np.abs(numeric)
    keep = (a + n) >= SKIP_BELOW
    if not keep.any():
        return 0.0
    err = np.abs(analytic - numeric)[keep] / np.maximum(a, n)[keep]
    return float(err.max())


def check(loss_and_grads, arrays, names=None, h=FD_STEP):
    """Compare analytic and numeric gradients for every array in ``names``.

    ``loss_and_grads(arrays)`` must return ``(scalar, {name: gradient})``.
    Returns ``{name: max relative error}``.
    """
    names = list(arrays) if names is None else names
    _, analytic = loss_and_grads(arrays)
    scalar = lambda arr: loss_and_grads(arr)[0]
    return {n: max_relative_error(analytic[n], numeric_grad(scalar, arrays, n, h)) for n in names}


def _projection(rng, shape):
    # a random linear functional of the output makes a well-conditioned scalar
    return rng.standard_normal(shape)


def _conv_case(rng, sizes):
    c_in, f, t = sizes.get("input", (2, 5, 6))
    c_out = sizes.get("out_channels", 3)
    k = sizes.get("kernel", 3)
    arrays = {
        "x": rng.standard_normal((1, f, t, c_in)),
        "weight": rng.standard_normal((k, k, c_in, c_out)),
        "bias": rng.standard_normal(c_out),
    }
    proj = _projection(rng, (1, f, t, c_out))

    def fn(a):
        y, cache = layers.conv2d_forward(a["x"], a["weight"], a["bias"])
        dx, dw, db = layers.conv2d_backward(proj, cache)
        return float((y * proj).sum()), {"x": dx, "weight": dw, "bias": db}
    return fn, arrays


def _bigru_case(rng, sizes):
    t, d = sizes.get("input", (4, 3))
    hid = sizes.get("hidden", 2)
    arrays = {"x": rng.standard_normal((1, t, d))}
    for direction in ("fw", "bw"):
        arrays[f"gru.{direction}.w_in"] = rng.standard_normal((d, 3 * hid)) * 0.5
        arrays[f"gru.{direction}.w_rec"] = rng.standard_normal((hid, 3 * hid)) * 0.5
        arrays[f"gru.{direction}.bias"] = rng.standard_normal(3 * hid) * 0.5
    proj = _projection(rng, (1, t, 2 * hid))

    def fn(a):
        y, cache = layers.bigru_forward(a["x"], a)
        dx, grads = layers.bigru_backward(proj, cache)
        grads["x"] = dx
        return float((y * proj).sum()), grads
    return fn, arrays


def _linear_case(rng, sizes):
    t, d = sizes.get("input", (5, 4))
    c = sizes.get("classes", 3)
    arrays = {
        "x": rng.standard_normal((1, t, d)),
        "weight": rng.standard_normal((d, c)),
        "bias": rng.standard_normal(c),
    }
    proj = _projection(rng, (1, t, c))

    def fn(a):
        p, cache = layers.linear_sigmoid_forward(a["x"], a["weight"], a["bias"])
        dx, dw, db = layers.linear_sigmoid_backward(proj, cache)
        return float((p * proj).sum()), {"x": dx, "weight": dw, "bias": db}
    return fn, arrays


def _loss_case(kind):
    def build(rng, sizes):
        shape = sizes.get("input", (6, 4))
        arrays = {"pred": rng.uniform(0.05, 0.95, shape)}
        target = (rng.random(shape) < 0.4).astype(np.float64)
        mask = (rng.random(shape) < 0.8).astype(np.float64)
        mask.reshape(-1)[0] = 1.0

        def fn(a):
            if kind == "bce":
                loss, g = bce_loss(a["pred"], target, mask)
            else:
                loss, g = focal_loss(a["pred"], target, mask, alpha=0.2, gamma=2.0)
            return loss, {"pred": g}
        return fn, arrays
    return build


def _crnn_case(rng, sizes):
    # imported lazily: the model lives with the detector
    from ..detector.model import ModelConfig, init_params, forward, backward

    c, f, t = sizes.get("input", (2, 16, 20))
    config = ModelConfig(
        input_channels=c,
        n_mels=f,
        conv_channels=sizes.get("conv_channels", (3, 3, 3)),
        pools=sizes.get("pools", (2, 2, 2)),
        gru_hidden=sizes.get("hidden", 3),
    )
    arrays = {k: v.astype(np.float64) for k, v in init_params(config, seed=int(rng.integers(1 << 31))).items()}
    for k in arrays:
        if arrays[k].ndim == 1:
            arrays[k] = rng.standard_normal(arrays[k].shape) * 0.1
    arrays["x"] = rng.standard_normal((1, c, f, t))
    target = (rng.random((1, t, config.n_classes)) < 0.3).astype(np.float64)
    mask = np.ones((1, t))

    def fn(a):
        params = {k: v for k, v in a.items() if k != "x"}
        probs, cache = forward(params, config, a["x"], mask)
        loss, dp = bce_loss(probs, target, mask[:, :, None])
        grads = backward(dp, cache, input_grad=True)
        return loss, grads
    return fn, arrays


CASES = {
    "conv2d": _conv_case,
    "bigru": _bigru_case,
    "linear_sigmoid": _linear_case,
    "bce_loss": _loss_case("bce"),
    "focal_loss": _loss_case("focal"),
    "crnn": _crnn_case,
}


def grad_check(module, sizes=None, seed=0):
    """Maximum relative analytic-vs-numeric gradient error for a named module.

    ``module`` is one of :data:`CASES`; ``sizes`` overrides the default tiny
    shapes.  Every parameter and every input cell is checked in float64.
    """
    if module not in CASES:
        raise ValueError(f"unknown module {module!r}; choose from {sorted(CASES)}")
    rng = np.random.default_rng(seed)
    fn, arrays = CASES[module](rng, sizes or {})
    errors = check(fn, arrays)
    return max(errors.values())
