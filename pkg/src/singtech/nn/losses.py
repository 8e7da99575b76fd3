"""Masked frame-wise binary cross-entropy and focal loss."""

from dataclasses import dataclass

import numpy as np

# p_t is clamped into [EPS, 1 - EPS] before taking the log
EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    kind: str = "bce"
    alpha: float = 0.2
    gamma: float = 2.0

    def __post_init__(self):
        if self.kind not in ("bce", "focal"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


def _prepare(pred, target, mask):
    if pred.shape != target.shape:
        raise ValueError(f"pred shape {pred.shape} != target shape {target.shape}")
    if mask is None:
        mask = np.ones_like(pred)
    else:
        mask = np.broadcast_to(mask, pred.shape)
    count = float(mask.sum())
    if count == 0:
        raise ValueError("loss mask selects no cells")
    return mask, count


def bce_loss(pred, target, mask=None):
    """Mean of ``-[y ln p + (1-y) ln(1-p)]`` over masked cells.

    Returns ``(loss, dloss/dpred)``.
    """
    mask, count = _prepare(pred, target, mask)
    p = np.clip(pred, EPS, 1 - EPS)
    inside = (pred >= EPS) & (pred <= 1 - EPS)
    cell = -(target * np.log(p) + (1 - target) * np.log(1 - p))
    loss = float((cell * mask).sum() / count)
    grad = -(target / p - (1 - target) / (1 - p)) * mask * inside / count
    return loss, grad.astype(pred.dtype, copy=False)


def focal_loss(pred, target, mask=None, alpha=0.2, gamma=2.0):
    """Mean of ``-alpha (1 - p_t)^gamma ln(p_t)`` over masked cells.

    ``p_t`` is ``p`` where the target is 1 and ``1 - p`` elsewhere.  With
    ``alpha=1, gamma=0`` this is exactly :func:`bce_loss`.  Returns
    ``(loss, dloss/dpred)``.
    """
    mask, count = _prepare(pred, target, mask)
    pt_raw = np.where(target > 0.5, pred, 1 - pred)
    pt = np.clip(pt_raw, EPS, 1 - EPS)
    inside = (pt_raw >= EPS) & (pt_raw <= 1 - EPS)
    log_pt = np.log(pt)
    q = 1 - pt
    modulator = q ** gamma
    loss = float((-alpha * modulator * log_pt * mask).sum() / count)
    if gamma > 0:
        dmod = -gamma * q ** (gamma - 1)
    else:
        dmod = np.zeros_like(q)
    dpt = -alpha * (dmod * log_pt + modulator / pt)
    sign = np.where(target > 0.5, 1.0, -1.0)
    grad = dpt * sign * mask * inside / count
    return loss, grad.astype(pred.dtype, copy=False)


def loss_fn(config):
    """Bind a :class:`LossConfig` to a ``(pred, target, mask) -> (loss, grad)`` callable."""
    if config.kind == "bce":
        return bce_loss
    return lambda pred, target, mask=None: focal_loss(
        pred, target, mask, alpha=config.alpha, gamma=config.gamma)
