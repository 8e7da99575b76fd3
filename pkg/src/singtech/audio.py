"""Mono 16-bit PCM WAV input/output."""

import os
import wave

import numpy as np
from scipy.io import wavfile


def write_wav(path, samples, sample_rate):
    """Write float samples in [-1, 1] as 16-bit PCM."""
    pcm = np.round(np.clip(samples, -1.0, 1.0) * 32767).astype("<i2")
    with wave.open(os.fspath(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sample_rate))
        w.writeframes(pcm.tobytes())


def read_wav(path):
    """Return ``(samples, sample_rate)`` with samples as float64 in [-1, 1].

    Multi-channel files are averaged down to mono.
    """
    rate, data = wavfile.read(os.fspath(path))
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        x = data.astype(np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    return x, int(rate)
