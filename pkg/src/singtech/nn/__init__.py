"""Small NumPy neural-network engine: layers, losses, Adam, gradient checks."""

from .layers import (
    sigmoid,
    conv2d_forward,
    conv2d_backward,
    relu_forward,
    relu_backward,
    freq_maxpool_forward,
    freq_maxpool_backward,
    gru_forward,
    gru_backward,
    bigru_forward,
    bigru_backward,
    linear_sigmoid_forward,
    linear_sigmoid_backward,
)
from .losses import EPS, LossConfig, bce_loss, focal_loss, loss_fn
from .optim import AdamState, adam_step
from .init import splitmix64, uniform01, glorot_uniform
from .io import MAGIC, WeightsFormatError, dumps_weights, loads_weights, save_weights, load_weights
from .gradcheck import numeric_grad, max_relative_error, grad_check
