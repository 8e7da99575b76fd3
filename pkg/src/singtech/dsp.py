"""Log-mel spectrogram and mel-band pitchgram front-end."""

import json
import struct
from dataclasses import dataclass

import numpy as np
import scipy.signal


@dataclass(frozen=True)
class DspConfig:
    sample_rate: int = 44100
    fft_size: int = 2048
    hop_s: float = 0.010
    n_mels: int = 64
    fmin: float = 0.0
    fmax: float = 22050.0
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.hop_samples <= 0:
            raise ValueError(f"hop of {self.hop_s} s is shorter than one sample")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ValueError(f"need 0 <= fmin < fmax <= sr/2, got {self.fmin}, {self.fmax}")
        if self.n_mels < 1 or self.fft_size < 2:
            raise ValueError("n_mels and fft_size must be positive")

    @property
    def hop_samples(self):
        return int(round(self.hop_s * self.sample_rate))

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1

    def num_frames(self, num_samples):
        return 1 + num_samples // self.hop_samples


@dataclass(frozen=True)
class MelSpec:
    values: np.ndarray  # (n_mels, T) natural-log power
    config: DspConfig


@dataclass(frozen=True)
class Pitchgram:
    values: np.ndarray  # (n_mels, T) one-hot columns or all zero
    config: DspConfig


@dataclass(frozen=True)
class FeatureTensor:
    values: np.ndarray  # (channels, n_mels, T); channel 0 log-mel, channel 1 pitchgram

    @property
    def channels(self):
        return self.values.shape[0]

    @property
    def num_frames(self):
        return self.values.shape[2]


class SampleRateError(ValueError):
    pass


def hz_to_mel(f):
    """HTK mel scale: ``2595 * log10(1 + f / 700)``."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be non-negative")
    m = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(m) if m.ndim == 0 else m


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("mel value must be non-negative")
    f = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(f) if f.ndim == 0 else f


def mel_edges(config):
    """The ``n_mels + 2`` band edges in mel, equally spaced from fmin to fmax."""
    return np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2)


def mel_centers(config):
    return mel_edges(config)[1:-1]


def mel_filterbank(config):
    """Triangular filters of peak 1, shape (n_mels, fft_size // 2 + 1).

    Row k rises from edge k to a peak at edge k+1 and falls to zero at edge k+2.
    """
    edges_hz = mel_to_hz(mel_edges(config))
    # pin the outer edges so the mel round trip cannot leak past fmin/fmax
    edges_hz[0], edges_hz[-1] = config.fmin, config.fmax
    freqs = np.arange(config.n_bins) * config.sample_rate / config.fft_size
    lo, mid, hi = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def _check_signal(samples, sample_rate, config):
    if sample_rate != config.sample_rate:
        raise SampleRateError(
            f"sample rate {sample_rate} Hz does not match the configured {config.sample_rate} Hz")
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected mono samples, got shape {x.shape}")
    if x.size == 0:
        raise ValueError("empty signal")
    return x


def stft_magnitude(samples, sample_rate, config=DspConfig()):
    """Magnitude STFT with centred, reflection-padded Hann frames.

    Returns an array of shape (fft_size // 2 + 1, 1 + N // hop).
    """
    x = _check_signal(samples, sample_rate, config)
    half = config.fft_size // 2
    padded = np.pad(x, half, mode="reflect")
    n_frames = config.num_frames(x.size)
    frames = np.lib.stride_tricks.sliding_window_view(padded, config.fft_size)
    frames = frames[::config.hop_samples][:n_frames]
    window = scipy.signal.get_window("hann", config.fft_size)
    return np.abs(np.fft.rfft(frames * window, axis=1)).T


def mel_spectrogram(samples, sample_rate, config=DspConfig()):
    power = stft_magnitude(samples, sample_rate, config) ** 2
    mel = mel_filterbank(config) @ power
    return MelSpec(np.log(mel + config.log_floor), config)


def pitch_to_pitchgram(contour, config, num_frames, confidence_min=0.5):
    """One-hot mel-band encoding of a pitch contour.

    Frame i (centre ``(i + 0.5) * hop``) takes the nearest contour point within
    half a hop.  The point activates the band whose centre is nearest
    ``hz_to_mel(f0)`` when its confidence exceeds ``confidence_min``.
    """
    values = np.zeros((config.n_mels, num_frames), dtype=np.float32)
    times = np.asarray(contour.times, dtype=np.float64)
    if num_frames == 0 or times.size == 0:
        return Pitchgram(values, config)
    centers_t = (np.arange(num_frames) + 0.5) * config.hop_s
    right = np.clip(np.searchsorted(times, centers_t), 0, times.size - 1)
    left = np.clip(right - 1, 0, times.size - 1)
    pick_left = np.abs(times[left] - centers_t) <= np.abs(times[right] - centers_t)
    nearest = np.where(pick_left, left, right)
    close = np.abs(times[nearest] - centers_t) <= config.hop_s / 2
    confident = np.asarray(contour.confidence)[nearest] > confidence_min
    frames = np.flatnonzero(close & confident)
    if frames.size:
        f0_mel = hz_to_mel(np.asarray(contour.f0_hz)[nearest[frames]])
        centers = mel_centers(config)
        bands = np.abs(f0_mel[:, None] - centers[None, :]).argmin(axis=1)
        values[bands, frames] = 1.0
    return Pitchgram(values, config)


def assemble_features(mel, pitchgram=None):
    """Stack log-mel (channel 0) and, optionally, the pitchgram (channel 1)."""
    if pitchgram is None:
        return FeatureTensor(mel.values[None].astype(np.float32))
    if pitchgram.values.shape != mel.values.shape:
        raise ValueError(
            f"pitchgram shape {pitchgram.values.shape} != mel shape {mel.values.shape}")
    return FeatureTensor(np.stack([mel.values, pitchgram.values]).astype(np.float32))


# -- feature cache files -- #

FEATURE_MAGIC = b"STFE1"


class FeatureFormatError(ValueError):
    pass


def dumps_features(features, config=DspConfig(), extra=None):
    """Serialise a feature tensor: magic, u32 LE config length, JSON config, float32 LE data."""
    values = np.ascontiguousarray(features.values, dtype="<f4")
    header = {"dsp": dict(config.__dict__), "shape": list(values.shape), **(extra or {})}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return FEATURE_MAGIC + struct.pack("<I", len(blob)) + blob + values.tobytes()


def loads_features(data):
    """Inverse of :func:`dumps_features`; returns ``(FeatureTensor, header)``."""
    if not data.startswith(FEATURE_MAGIC):
        raise FeatureFormatError("not a feature cache file (bad magic)")
    pos = len(FEATURE_MAGIC)
    if len(data) < pos + 4:
        raise FeatureFormatError("truncated header")
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    try:
        header = json.loads(data[pos:pos + n].decode("utf-8"))
        shape = tuple(int(s) for s in header["shape"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FeatureFormatError(f"bad header: {exc}") from None
    body = data[pos + n:]
    if len(body) != 4 * int(np.prod(shape)):
        raise FeatureFormatError(f"expected {int(np.prod(shape))} values, found {len(body) // 4}")
    values = np.frombuffer(body, dtype="<f4").reshape(shape).astype(np.float32)
    return FeatureTensor(values), header


def save_features(path, features, config=DspConfig(), extra=None):
    with open(path, "wb") as fh:
        fh.write(dumps_features(features, config, extra))


def load_features(path):
    with open(path, "rb") as fh:
        return loads_features(fh.read())
