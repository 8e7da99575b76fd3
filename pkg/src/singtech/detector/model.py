"""The CRNN: three conv blocks, a bidirectional GRU and a sigmoid output layer."""

from dataclasses import dataclass, field, asdict

import numpy as np

from ..annotation import DETECTION_CLASSES
from ..nn import layers
from ..nn.init import glorot_uniform


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description.

    Each conv block is conv (``kernel``, same padding) -> ReLU -> max-pool
    along frequency only.  The time axis is never pooled.  ``output_prior``,
    when set, starts the output biases at ``log(p / (1 - p))`` so the
    untrained model predicts that activity rate instead of 0.5.
    """

    input_channels: int = 1
    n_mels: int = 64
    conv_channels: tuple = (32, 32, 32)
    kernel: tuple = (3, 3)
    pools: tuple = (4, 2, 2)
    gru_hidden: int = 64
    class_order: tuple = field(default=DETECTION_CLASSES)
    output_prior: float = None

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        object.__setattr__(self, "kernel", tuple(self.kernel))
        object.__setattr__(self, "pools", tuple(self.pools))
        object.__setattr__(self, "class_order", tuple(self.class_order))
        if self.input_channels not in (1, 2):
            raise ValueError(f"input_channels must be 1 or 2, got {self.input_channels}")
        if len(self.conv_channels) != len(self.pools):
            raise ValueError("conv_channels and pools must have the same length")
        if any(k % 2 == 0 for k in self.kernel):
            raise ValueError(f"kernel must be odd-sized, got {self.kernel}")
        if self.n_mels % self.total_pool:
            raise ValueError(
                f"n_mels={self.n_mels} is not divisible by the total frequency pooling {self.total_pool}")
        if self.output_prior is not None and not 0.0 < self.output_prior < 1.0:
            raise ValueError(f"output_prior must lie in (0, 1), got {self.output_prior}")

    @property
    def total_pool(self):
        return int(np.prod(self.pools))

    @property
    def n_classes(self):
        return len(self.class_order)

    @property
    def gru_input(self):
        return self.n_mels // self.total_pool * self.conv_channels[-1]

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def param_shapes(config):
    kh, kw = config.kernel
    shapes = {}
    c_prev = config.input_channels
    for i, c in enumerate(config.conv_channels):
        shapes[f"conv{i}.weight"] = (kh, kw, c_prev, c)
        shapes[f"conv{i}.bias"] = (c,)
        c_prev = c
    d, h = config.gru_input, config.gru_hidden
    for direction in ("fw", "bw"):
        shapes[f"gru.{direction}.w_in"] = (d, 3 * h)
        shapes[f"gru.{direction}.w_rec"] = (h, 3 * h)
        shapes[f"gru.{direction}.bias"] = (3 * h,)
    shapes["fc.weight"] = (2 * h, config.n_classes)
    shapes["fc.bias"] = (config.n_classes,)
    return shapes


def _fans(name, shape):
    if name.startswith("conv"):
        kh, kw, c_in, c_out = shape
        return kh * kw * c_in, kh * kw * c_out
    return shape[0], shape[1]


def init_params(config, seed, dtype=np.float32):
    """Glorot-uniform weights from per-tensor SplitMix64 streams; zero biases.

    The output bias is the one exception: with ``config.output_prior`` set it
    starts at the logit of that prior.
    """
    params = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape, dtype=dtype)
            if name == "fc.bias" and config.output_prior is not None:
                p = config.output_prior
                params[name][:] = np.log(p / (1.0 - p))
        else:
            fan_in, fan_out = _fans(name, shape)
            params[name] = glorot_uniform(seed, name, shape, fan_in, fan_out, dtype)
    return params


def n_params(config):
    return int(sum(np.prod(s) for s in param_shapes(config).values()))


def forward(params, config, x, mask=None):
    """Frame-wise class probabilities.

    Parameters
    ----------
    x : ndarray, shape (N, C, F, T)
        Normalised feature tensors.
    mask : ndarray, shape (N, T), optional
        1 for valid frames.  Masked frames are zeroed at the input and after
        every conv block and do not advance the GRU state, so their content
        cannot leak into valid frames.

    Returns
    -------
    probs : ndarray, shape (N, T, n_classes)
    cache : tuple for :func:`backward`
    """
    if x.ndim != 4 or x.shape[1] != config.input_channels or x.shape[2] != config.n_mels:
        raise ValueError(
            f"expected input (N, {config.input_channels}, {config.n_mels}, T), got {x.shape}")
    n, _, _, t = x.shape
    h = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    tmask = None
    if mask is not None:
        tmask = mask.astype(h.dtype)[:, None, :, None]
        h = h * tmask
    blocks = []
    for i, pool in enumerate(config.pools):
        a, conv_cache = layers.conv2d_forward(h, params[f"conv{i}.weight"], params[f"conv{i}.bias"])
        gate = a > 0
        if tmask is not None:
            gate = gate * tmask
        a = a * gate
        h, pool_cache = layers.freq_maxpool_forward(a, pool)
        blocks.append((conv_cache, gate, pool_cache))
    f_out, c_out = h.shape[1], h.shape[3]
    seq = h.transpose(0, 2, 1, 3).reshape(n, t, f_out * c_out)
    gru_out, gru_cache = layers.bigru_forward(seq, params, mask=mask)
    probs, fc_cache = layers.linear_sigmoid_forward(gru_out, params["fc.weight"], params["fc.bias"])
    return probs, (blocks, gru_cache, fc_cache, (n, f_out, t, c_out), tmask)


def backward(dprobs, cache, input_grad=False):
    """Parameter gradients (plus ``"x"`` in (N, C, F, T) layout when ``input_grad``)."""
    blocks, gru_cache, fc_cache, pooled_shape, tmask = cache
    grads = {}
    dseq, grads["fc.weight"], grads["fc.bias"] = layers.linear_sigmoid_backward(dprobs, fc_cache)
    dseq, gru_grads = layers.bigru_backward(dseq, gru_cache)
    grads.update(gru_grads)
    n, f_out, t, c_out = pooled_shape
    dh = dseq.reshape(n, t, f_out, c_out).transpose(0, 2, 1, 3)
    for i in range(len(blocks) - 1, -1, -1):
        conv_cache, gate, pool_cache = blocks[i]
        da = layers.freq_maxpool_backward(dh, pool_cache) * gate
        need_dx = i > 0 or input_grad
        dh, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = layers.conv2d_backward(
            da, conv_cache, input_grad=need_dx)
    if input_grad:
        if tmask is not None:
            dh = dh * tmask
        grads["x"] = dh.transpose(0, 3, 1, 2)
    return grads
