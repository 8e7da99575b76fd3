"""Synthetic singing corpus with injected, exactly annotated techniques.

Each track is a harmonic-tone melody on a pentatonic scale.  Techniques are
rendered into the audio and logged as ground-truth events:

* vibrato   - 6 Hz sinusoidal FM of +-1 semitone over the tail of a note
* scooping  - rising glide from -3 semitones at a note onset
* drop      - falling glide of 3 semitones at a note end
* breathy   - band-passed noise at -10 dB relative to the melody
* falsetto  - whole notes an octave up with harmonics 2-3 cut by 12 dB
"""

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from ..annotation import (PitchContour, TechniqueClass as T, TechniqueEvent, TrackAnnotation,
                          Corpus, serialize_events, serialize_pitch, write_manifest, load_corpus)
from ..audio import write_wav

SURROGATE_CLASSES = (T.VIBRATO, T.SCOOPING, T.DROP, T.BREATHY, T.FALSETTO)
PENTATONIC = (0, 2, 4, 7, 9, 12)
HARMONIC_GAINS = (1.0, 0.5, 0.3)

VIBRATO_RATE_HZ = 6.0
VIBRATO_DEPTH_ST = 1.0
GLIDE_ST = 3.0
BREATHY_DB = -10.0
FALSETTO_SHIFT_ST = 12.0
FALSETTO_CUT_DB = -12.0
NOISE_FLOOR_DB = -60.0
PITCH_HOP_S = 0.010
EST_OCTAVE_ERROR_RATE = 0.05
EST_CONFIDENCE_RANGE = (0.3, 1.0)

DEFAULT_RATES = {"vibrato": 4.0, "scooping": 6.0, "drop": 5.0, "breathy": 4.0, "falsetto": 2.0}


@dataclass(frozen=True)
class SynthSpec:
    n_singers: int = 14
    tracks_per_singer: int = 3
    track_len_s: float = 30.0
    # expected events per track for each surrogate class
    rates: dict = field(default_factory=lambda: dict(DEFAULT_RATES))
    seed: int = 0
    sample_rate: int = 44100

    def __post_init__(self):
        for name, rate in self.rates.items():
            if T.parse(name) not in SURROGATE_CLASSES:
                raise ValueError(f"{name!r} has no synthetic surrogate")
            if rate < 0:
                raise ValueError(f"rate for {name} must be >= 0")
        if self.n_singers < 1 or self.tracks_per_singer < 1 or self.track_len_s <= 2.0:
            raise ValueError("need at least one singer, one track and tracks longer than 2 s")

    def rate(self, cls):
        return float(self.rates.get(cls.value, 0.0))

    def to_dict(self):
        return {"n_singers": self.n_singers, "tracks_per_singer": self.tracks_per_singer,
                "track_len_s": self.track_len_s, "rates": dict(self.rates),
                "seed": self.seed, "sample_rate": self.sample_rate}

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class _Note:
    onset: float
    offset: float
    midi: float
    falsetto: bool = False
    # (kind, start, end) of at most one pitch technique
    technique: tuple = None


def _ms(x):
    # event times on a millisecond grid keep annotation files exact and short
    return round(float(x), 3)


def _plan_notes(rng, spec, register):
    """Lay out notes left to right, deciding techniques as we go."""
    length = spec.track_len_s
    mean_step = 0.9
    expected_notes = length / mean_step
    p = {c: min(0.9, spec.rate(c) / expected_notes) for c in (T.VIBRATO, T.SCOOPING, T.DROP)}
    p_fals = min(0.5, spec.rate(T.FALSETTO) / expected_notes)
    notes = []
    t = _ms(rng.uniform(0.2, 0.5))
    end_limit = length - 0.2
    after_falsetto = False
    while t < end_limit - 0.4:
        if notes and rng.random() < 0.25:
            t = _ms(t + rng.uniform(0.15, 0.4))
            continue
        if not after_falsetto and rng.random() < p_fals:
            total = rng.uniform(0.5, 2.0)
            if t + total > end_limit:
                break
            split = [total] if total < 1.0 or rng.random() < 0.5 else [total / 2, total / 2]
            start = t
            for dur in split:
                midi = register + rng.choice(PENTATONIC) + FALSETTO_SHIFT_ST
                notes.append(_Note(t, _ms(t + dur), midi, falsetto=True))
                t = notes[-1].offset
            notes[-1].offset = _ms(start + total)
            t = notes[-1].offset
            after_falsetto = True
            continue
        after_falsetto = False
        midi = register + rng.choice(PENTATONIC)
        draw = rng.random()
        dur = rng.uniform(0.35, 1.0)
        technique = None
        if draw < p[T.VIBRATO]:
            vib = rng.uniform(0.5, 1.5)
            dur = vib + rng.uniform(0.15, 0.4)
            technique = ("vibrato", dur - vib)
        elif draw < p[T.VIBRATO] + p[T.SCOOPING]:
            glide = rng.uniform(0.1, 0.3)
            dur = max(dur, glide + 0.2)
            technique = ("scooping", glide)
        elif draw < p[T.VIBRATO] + p[T.SCOOPING] + p[T.DROP]:
            glide = rng.uniform(0.1, 0.3)
            dur = max(dur, glide + 0.2)
            technique = ("drop", glide)
        off = _ms(t + dur)
        if off > end_limit:
            break
        note = _Note(t, off, midi)
        if technique is not None:
            kind, span = technique
            if kind == "vibrato":
                note.technique = (kind, _ms(t + span), off)
            elif kind == "scooping":
                note.technique = (kind, t, _ms(t + span))
            else:
                note.technique = (kind, _ms(off - span), off)
        notes.append(note)
        t = off
    return notes


def _place_breathy(rng, spec, notes):
    n = rng.poisson(spec.rate(T.BREATHY))
    spans = []
    voiced = [nt for nt in notes if nt.offset - nt.onset >= 0.3]
    for _ in range(50 * max(n, 1)):
        if len(spans) >= n or not voiced:
            break
        nt = voiced[rng.integers(len(voiced))]
        dur = rng.uniform(0.3, 1.0)
        start = _ms(nt.onset + rng.uniform(0.0, max(0.0, nt.offset - nt.onset - 0.3)))
        stop = _ms(min(start + dur, spec.track_len_s - 0.1))
        if stop - start < 0.3:
            continue
        if any(start < b + 0.2 and stop > a - 0.2 for a, b in spans):
            continue
        spans.append((start, stop))
    return sorted(spans)


def _f0_curve(notes, sr, n_samples):
    """Per-sample fundamental (Hz; 0 when unvoiced) and harmonic-cut flags."""
    t = np.arange(n_samples) / sr
    midi = np.zeros(n_samples)
    voiced = np.zeros(n_samples, dtype=bool)
    falsetto = np.zeros(n_samples, dtype=bool)
    for nt in notes:
        a, b = int(round(nt.onset * sr)), int(round(nt.offset * sr))
        seg = slice(a, b)
        midi[seg] = nt.midi
        voiced[seg] = True
        falsetto[seg] = nt.falsetto
        if nt.technique is None:
            continue
        kind, ts, te = nt.technique
        i, j = int(round(ts * sr)), int(round(te * sr))
        u = (t[i:j] - ts) / (te - ts)
        if kind == "vibrato":
            midi[i:j] += VIBRATO_DEPTH_ST * np.sin(2 * np.pi * VIBRATO_RATE_HZ * (t[i:j] - ts))
        elif kind == "scooping":
            midi[i:j] -= GLIDE_ST * (1.0 - u)
        else:
            midi[i:j] -= GLIDE_ST * u
    f0 = np.where(voiced, 440.0 * 2.0 ** ((midi - 69.0) / 12.0), 0.0)
    return f0, voiced, falsetto


def _envelope(notes, sr, n_samples, ramp_s=0.01):
    env = np.zeros(n_samples)
    ramp = int(ramp_s * sr)
    for nt in notes:
        a, b = int(round(nt.onset * sr)), int(round(nt.offset * sr))
        seg = np.ones(b - a)
        r = min(ramp, (b - a) // 2)
        if r > 0:
            fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
            seg[:r] *= fade
            seg[-r:] *= fade[::-1]
        env[a:b] = np.maximum(env[a:b], seg)
    return env


def render_track(spec, singer_index, track_index):
    """Generate one track in memory.

    Returns ``(samples, events, gt_contour, est_contour)``.
    """
    sr = spec.sample_rate
    singer_rng = np.random.default_rng([spec.seed, singer_index])
    register = 57 + int(singer_rng.integers(-3, 6))
    rng = np.random.default_rng([spec.seed, singer_index, track_index])
    n_samples = int(round(spec.track_len_s * sr))

    notes = _plan_notes(rng, spec, register)
    breathy = _place_breathy(rng, spec, notes)

    f0, voiced, falsetto = _f0_curve(notes, sr, n_samples)
    phase = 2 * np.pi * np.cumsum(f0) / sr
    env = _envelope(notes, sr, n_samples)
    cut = 10.0 ** (FALSETTO_CUT_DB / 20.0)
    tone = np.zeros(n_samples)
    for k, gain in enumerate(HARMONIC_GAINS, start=1):
        g = np.full(n_samples, gain)
        if k > 1:
            g[falsetto] *= cut
        tone += g * np.sin(k * phase)
    tone *= env
    ref_rms = np.sqrt(np.mean(tone[voiced] ** 2)) if voiced.any() else 0.1

    noise_rng = np.random.default_rng([spec.seed, singer_index, track_index, 1])
    out = tone + noise_rng.standard_normal(n_samples) * ref_rms * 10.0 ** (NOISE_FLOOR_DB / 20.0)
    if breathy:
        sos = scipy.signal.butter(2, [1000.0, 6000.0], btype="bandpass", fs=sr, output="sos")
        band = scipy.signal.sosfilt(sos, noise_rng.standard_normal(n_samples))
        band *= ref_rms * 10.0 ** (BREATHY_DB / 20.0) / np.sqrt(np.mean(band ** 2))
        gate = np.zeros(n_samples)
        ramp = int(0.01 * sr)
        for a_s, b_s in breathy:
            a, b = int(round(a_s * sr)), int(round(b_s * sr))
            seg = np.ones(b - a)
            fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
            seg[:ramp] *= fade
            seg[-ramp:] *= fade[::-1]
            gate[a:b] = seg
        out += band * gate
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= 0.5 / peak

    events = [TechniqueEvent(a, b, T.BREATHY) for a, b in breathy]
    for nt in notes:
        if nt.technique is not None:
            kind, a, b = nt.technique
            events.append(TechniqueEvent(a, b, T(kind)))
    run = None
    for nt in notes + [None]:
        if nt is not None and nt.falsetto:
            run = (run[0] if run else nt.onset, nt.offset)
            continue
        if run is not None:
            events.append(TechniqueEvent(run[0], run[1], T.FALSETTO))
            run = None

    # ground-truth pitch sampled at frame centres
    n_frames = int(spec.track_len_s / PITCH_HOP_S)
    centres = (np.arange(n_frames) + 0.5) * PITCH_HOP_S
    idx = np.minimum((centres * sr).astype(int), n_samples - 1)
    on = voiced[idx] & (env[idx] > 0.5)
    times = np.round(centres[on], 6)
    gt = PitchContour(times, f0[idx][on], np.ones(on.sum()))

    est_rng = np.random.default_rng([spec.seed, singer_index, track_index, 2])
    est_f0 = gt.f0_hz.copy()
    flip = est_rng.random(est_f0.size) < EST_OCTAVE_ERROR_RATE
    est_f0[flip] *= np.where(est_rng.random(flip.sum()) < 0.5, 2.0, 0.5)
    conf = est_rng.uniform(*EST_CONFIDENCE_RANGE, size=est_f0.size)
    est = PitchContour(gt.times, est_f0, np.round(conf, 4))
    return out, sorted(events), gt, est


def synth_corpus(spec, out_dir):
    """Write a synthetic corpus (WAV, event and pitch CSVs, manifest) and load it back."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for s in range(spec.n_singers):
        singer = f"singer{s:02d}"
        for k in range(spec.tracks_per_singer):
            track_id = f"{singer}_t{k}"
            samples, events, gt, est = render_track(spec, s, k)
            files = {"audio": f"{track_id}.wav", "events": f"{track_id}.events.csv",
                     "pitch": f"{track_id}.pitch.csv", "pitch_est": f"{track_id}.pitch_est.csv"}
            write_wav(os.path.join(out_dir, files["audio"]), samples, spec.sample_rate)
            with open(os.path.join(out_dir, files["events"]), "w", encoding="utf-8") as fh:
                fh.write(serialize_events(events))
            with open(os.path.join(out_dir, files["pitch"]), "w", encoding="utf-8") as fh:
                fh.write(serialize_pitch(gt))
            with open(os.path.join(out_dir, files["pitch_est"]), "w", encoding="utf-8") as fh:
                fh.write(serialize_pitch(est))
            entries.append({"track_id": track_id, "singer_id": singer,
                            "duration_s": spec.track_len_s, "year": None, **files})
    manifest = os.path.join(out_dir, "manifest.json")
    write_manifest(manifest, entries)
    return load_corpus(manifest)
