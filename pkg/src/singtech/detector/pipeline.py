"""Clip segmentation, training with early stopping, inference and decoding."""

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.signal

from ..annotation import FrameRoll, roll_to_events
from ..dsp import FeatureTensor
from ..nn.io import save_weights, load_weights
from ..nn.losses import LossConfig, loss_fn
from ..nn.optim import AdamState, adam_step
from .model import ModelConfig, init_params, forward, backward

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-4
    patience: int = 10
    max_epochs: int = 200
    loss: LossConfig = field(default_factory=LossConfig)
    clip_len_s: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossConfig(**self.loss))
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not self.clip_len_s > 0:
            raise ValueError("clip_len_s must be > 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Clip:
    track_id: str
    start_s: float
    features: np.ndarray  # (C, n_mels, clip_frames), zero beyond valid_frames
    targets: np.ndarray   # (n_classes, clip_frames), zero beyond valid_frames
    valid_frames: int

    @property
    def mask(self):
        m = np.zeros(self.features.shape[2], dtype=np.float32)
        m[:self.valid_frames] = 1.0
        return m


def clip_frames(clip_len_s, hop_s):
    """Frames in one clip window: both ends of the window are frame centres."""
    return int(round(clip_len_s / hop_s)) + 1


def segment_clips(track_id, features, targets, clip_len_s=10.0, hop_s=0.01):
    """Cut frame-aligned features/targets into consecutive clip windows.

    Clip k starts at frame ``k * round(clip_len_s / hop_s)`` and spans
    ``clip_frames`` frames, so neighbouring windows share only their boundary
    frame.  The final partial clip is zero-padded; ``valid_frames`` records
    the real length.  Targets are cut with the clip, truncating events.
    """
    feats = features.values if isinstance(features, FeatureTensor) else features
    tgt = targets.values if isinstance(targets, FrameRoll) else targets
    if feats.shape[2] != tgt.shape[1]:
        raise ValueError(f"features have {feats.shape[2]} frames, targets {tgt.shape[1]}")
    step = int(round(clip_len_s / hop_s))
    width = step + 1
    total = feats.shape[2]
    clips = []
    start = 0
    while True:
        n = min(width, total - start)
        f = np.zeros(feats.shape[:2] + (width,), dtype=np.float32)
        y = np.zeros((tgt.shape[0], width), dtype=np.float32)
        f[:, :, :n] = feats[:, :, start:start + n]
        y[:, :n] = tgt[:, start:start + n]
        clips.append(Clip(track_id, round(start * hop_s, 9), f, y, n))
        if start + width >= total:
            break
        start += step
    return clips


@dataclass
class Normalizer:
    """Per-mel-bin z-scoring of the log-mel channel; other channels pass through."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, clips):
        total = 0
        s = None
        ss = None
        for clip in clips:
            x = clip.features[0, :, :clip.valid_frames].astype(np.float64)
            s = x.sum(axis=1) if s is None else s + x.sum(axis=1)
            ss = (x * x).sum(axis=1) if ss is None else ss + (x * x).sum(axis=1)
            total += clip.valid_frames
        if not total:
            raise ValueError("cannot fit normalisation on empty clips")
        mean = s / total
        std = np.sqrt(np.maximum(ss / total - mean * mean, 0.0))
        return cls(mean.astype(np.float32), np.maximum(std, 1e-5).astype(np.float32))

    def apply(self, feats):
        out = np.array(feats, dtype=np.float32, copy=True)
        out[..., 0, :, :] = (out[..., 0, :, :] - self.mean[:, None]) / self.std[:, None]
        return out


@dataclass
class Model:
    config: ModelConfig
    params: dict
    normalizer: Normalizer = None

    def save(self, path, extra=None):
        tensors = dict(self.params)
        if self.normalizer is not None:
            tensors["norm.mean"] = self.normalizer.mean
            tensors["norm.std"] = self.normalizer.std
        save_weights(path, tensors, {"model": self.config.to_dict(), **(extra or {})})

    @classmethod
    def load(cls, path):
        tensors, meta = load_weights(path)
        norm = None
        if "norm.mean" in tensors:
            norm = Normalizer(tensors.pop("norm.mean"), tensors.pop("norm.std"))
        return cls(ModelConfig.from_dict(meta["model"]), tensors, norm), meta


def build_model(config, seed):
    return Model(config, init_params(config, seed))


def _stack(clips, normalizer):
    x = np.stack([c.features for c in clips])
    if normalizer is not None:
        x = normalizer.apply(x)
    y = np.stack([c.targets.T for c in clips]).astype(np.float32)
    m = np.stack([c.mask for c in clips])
    return x, y, m


def evaluate_loss(model, x, y, m, loss_config, batch_size=16):
    """Mean loss over all valid cells of a pre-stacked dataset."""
    fn = loss_fn(loss_config)
    n_classes = y.shape[2]
    total, count = 0.0, 0.0
    for i in range(0, len(x), batch_size):
        probs, _ = forward(model.params, model.config, x[i:i + batch_size], m[i:i + batch_size])
        mask = m[i:i + batch_size, :, None]
        cells = float(mask.sum()) * n_classes
        loss, _ = fn(probs, y[i:i + batch_size], np.broadcast_to(mask, probs.shape))
        total += loss * cells
        count += cells
    return total / count


def train(model, train_clips, val_clips, config, on_epoch=None):
    """Minibatch Adam with early stopping on the validation loss.

    The best-validation parameters are restored before returning.  Returns
    ``(model, history)`` where history holds per-epoch train and validation
    losses plus the best epoch (1-based).
    """
    if not train_clips or not val_clips:
        raise ValueError("train and validation clip lists must be non-empty")
    if model.normalizer is None:
        model.normalizer = Normalizer.fit(train_clips)
    xt, yt, mt = _stack(train_clips, model.normalizer)
    xv, yv, mv = _stack(val_clips, model.normalizer)
    fn = loss_fn(config.loss)
    state = AdamState(lr=config.lr)
    rng = np.random.default_rng(config.seed)
    history = {"train_loss": [], "val_loss": [], "best_epoch": 0, "epochs": 0}
    best = math.inf
    best_params = {k: v.copy() for k, v in model.params.items()}
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(xt))
        running, cells_seen = 0.0, 0.0
        for i in range(0, len(order), config.batch_size):
            idx = np.sort(order[i:i + config.batch_size])
            xb, yb, mb = xt[idx], yt[idx], mt[idx]
            probs, cache = forward(model.params, model.config, xb, mb)
            mask = np.broadcast_to(mb[:, :, None], probs.shape)
            loss, dprobs = fn(probs, yb, mask)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}, batch {i // config.batch_size}")
            grads = backward(dprobs, cache)
            adam_step(model.params, grads, state)
            cells = float(mb.sum()) * yb.shape[2]
            running += loss * cells
            cells_seen += cells
        val = evaluate_loss(model, xv, yv, mv, config.loss, config.batch_size)
        if not math.isfinite(val):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        history["train_loss"].append(running / cells_seen)
        history["val_loss"].append(val)
        history["epochs"] = epoch
        if val < best:
            best, stale = val, 0
            history["best_epoch"] = epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
        else:
            stale += 1
        log.info("epoch %d train %.5f val %.5f%s", epoch, history["train_loss"][-1], val,
                 " *" if stale == 0 else "")
        if on_epoch is not None:
            on_epoch(epoch, history)
        if stale >= config.patience:
            break
    model.params = best_params
    return model, history


def predict_frames(model, features, hop_s=0.01, clip_len_s=10.0, batch_size=16):
    """Per-frame class probabilities for a whole track, as a (C, T) FrameRoll.

    Long inputs are run clip by clip (same windows as training) and stitched:
    every clip contributes its frames up to the start of the next one.
    """
    feats = features.values if isinstance(features, FeatureTensor) else features
    if feats.shape[0] != model.config.input_channels:
        raise ValueError(
            f"features have {feats.shape[0]} channels, model expects {model.config.input_channels}")
    total = feats.shape[2]
    dummy = np.zeros((model.config.n_classes, total), dtype=np.float32)
    clips = segment_clips("", feats, dummy, clip_len_s, hop_s)
    x, _, m = _stack(clips, model.normalizer)
    step = int(round(clip_len_s / hop_s))
    out = np.zeros((model.config.n_classes, total), dtype=np.float64)
    for i in range(0, len(clips), batch_size):
        probs, _ = forward(model.params, model.config, x[i:i + batch_size], m[i:i + batch_size])
        for j, clip in enumerate(clips[i:i + batch_size]):
            start = (i + j) * step
            out[:, start:start + clip.valid_frames] = probs[j, :clip.valid_frames].T
    return FrameRoll(out, hop_s, model.config.class_order)


def decode_events(probs, threshold=0.5, median_width_frames=0, min_duration_s=0.05):
    """Threshold, optionally median-filter each class row, then extract events."""
    if median_width_frames and median_width_frames % 2 == 0:
        raise ValueError(f"median width must be odd, got {median_width_frames}")
    binary = (probs.values >= threshold).astype(np.uint8)
    if median_width_frames and median_width_frames > 1:
        binary = np.stack([scipy.signal.medfilt(row.astype(np.float64), median_width_frames) for row in binary])
        binary = binary.astype(np.uint8)
    return roll_to_events(FrameRoll(binary, probs.hop_s, probs.class_order), min_duration_s)
