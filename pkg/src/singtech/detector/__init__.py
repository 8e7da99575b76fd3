"""CRNN frame-level technique detector: model, training, inference and decoding."""

from .model import ModelConfig, param_shapes, init_params, n_params, forward, backward
from .pipeline import (
    TrainingDivergedError,
    TrainConfig,
    Clip,
    clip_frames,
    segment_clips,
    Normalizer,
    Model,
    build_model,
    evaluate_loss,
    train,
    predict_frames,
    decode_events,
)
