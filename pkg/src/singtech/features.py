"""Track-level featurisation and frame-aligned targets."""

import numpy as np

from .annotation import AnnotationError, rasterize
from .audio import read_wav
from .dsp import DspConfig, assemble_features, mel_spectrogram, pitch_to_pitchgram

PITCH_SOURCES = ("none", "gt", "est")


def track_mel(track, config=DspConfig()):
    if track.audio_path is None:
        raise AnnotationError(f"track {track.track_id!r} has no audio")
    try:
        samples, rate = read_wav(track.audio_path)
    except FileNotFoundError:
        raise AnnotationError(f"track {track.track_id!r}: missing file {track.audio_path}") from None
    return mel_spectrogram(samples, rate, config)


def track_pitchgram(track, source, config, num_frames):
    if source == "gt":
        contour = track.pitch
    elif source == "est":
        if track.pitch_est is None:
            raise AnnotationError(f"track {track.track_id!r} has no estimated pitch")
        contour = track.pitch_est
    else:
        raise ValueError(f"unknown pitch source {source!r}")
    return pitch_to_pitchgram(contour, config, num_frames)


def featurize(track, config=DspConfig(), pitch="none", mel=None):
    """Feature tensor for one track; ``mel`` may be passed to reuse a computed spectrogram."""
    if pitch not in PITCH_SOURCES:
        raise ValueError(f"pitch must be one of {PITCH_SOURCES}, got {pitch!r}")
    mel = track_mel(track, config) if mel is None else mel
    if pitch == "none":
        return assemble_features(mel)
    return assemble_features(mel, track_pitchgram(track, pitch, config, mel.values.shape[1]))


def track_targets(track, num_frames, hop_s, class_order):
    return rasterize(track.events, num_frames, hop_s, class_order)
