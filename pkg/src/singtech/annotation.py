"""Technique vocabulary, annotation files, frame rolls and corpus loading."""

import csv
import enum
import io
import json
import math
import os
import wave
from dataclasses import dataclass, field

import numpy as np


class AnnotationError(ValueError):
    """Malformed annotation content or an invalid corpus."""


class TechniqueClass(str, enum.Enum):
    VIBRATO = "vibrato"
    SCOOPING = "scooping"
    DROP = "drop"
    BEND = "bend"
    HICCUP = "hiccup"
    MELISMA = "melisma"
    TRILL = "trill"
    FALSETTO = "falsetto"
    BREATHY = "breathy"
    WHISPER = "whisper"
    RASP = "rasp"
    VOCAL_FRY = "vocal_fry"
    SPOKEN = "spoken"
    SHOUT = "shout"
    TONGUE_TRILL = "tongue_trill"
    UNKNOWN = "unknown"

    def __str__(self):
        return self.value

    @property
    def category(self):
        return CATEGORY[self]

    @classmethod
    def parse(cls, label):
        """Case-insensitive lookup; spaces and hyphens count as underscores."""
        key = "_".join(label.strip().lower().replace("-", " ").split())
        try:
            return cls(key)
        except ValueError:
            return cls.UNKNOWN


T = TechniqueClass
CATEGORY = {
    T.VIBRATO: "pitch", T.SCOOPING: "pitch", T.DROP: "pitch", T.BEND: "pitch",
    T.HICCUP: "pitch", T.MELISMA: "pitch", T.TRILL: "pitch",
    T.FALSETTO: "timbre", T.BREATHY: "timbre", T.WHISPER: "timbre",
    T.RASP: "timbre", T.VOCAL_FRY: "timbre",
    T.SPOKEN: "misc", T.SHOUT: "misc", T.TONGUE_TRILL: "misc",
    T.UNKNOWN: "misc",
}
VOCABULARY = tuple(c for c in TechniqueClass if c is not T.UNKNOWN)
# the nine classes used for detection, alphabetical
DETECTION_CLASSES = (T.BEND, T.BREATHY, T.DROP, T.FALSETTO, T.HICCUP,
                     T.RASP, T.SCOOPING, T.VIBRATO, T.VOCAL_FRY)

# grid positions within this many units of an integer snap onto it
_GRID_TOL = 1e-9


@dataclass(frozen=True, order=True)
class TechniqueEvent:
    onset_s: float
    offset_s: float
    label: TechniqueClass

    def __post_init__(self):
        if not isinstance(self.label, TechniqueClass):
            object.__setattr__(self, "label", TechniqueClass.parse(str(self.label)))
        if self.onset_s < 0:
            raise AnnotationError(f"event onset {self.onset_s} < 0")
        if not self.onset_s < self.offset_s:
            raise AnnotationError(f"event onset {self.onset_s} >= offset {self.offset_s}")

    @property
    def duration_s(self):
        return self.offset_s - self.onset_s


def _frozen(arr, dtype=np.float64):
    a = np.array(arr, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PitchContour:
    """Voiced pitch points; times absent from the contour are unvoiced."""

    times: np.ndarray = field(default_factory=lambda: _frozen([]))
    f0_hz: np.ndarray = field(default_factory=lambda: _frozen([]))
    confidence: np.ndarray = field(default_factory=lambda: _frozen([]))

    def __post_init__(self):
        for name in ("times", "f0_hz", "confidence"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if not (len(self.times) == len(self.f0_hz) == len(self.confidence)):
            raise AnnotationError("pitch contour columns differ in length")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise AnnotationError("pitch contour times are not strictly increasing")
        if np.any(self.f0_hz <= 0):
            raise AnnotationError("pitch contour contains f0 <= 0")
        if np.any((self.confidence < 0) | (self.confidence > 1)):
            raise AnnotationError("pitch confidence outside [0, 1]")

    def __len__(self):
        return len(self.times)

    def __eq__(self, other):
        if not isinstance(other, PitchContour):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n))
                   for n in ("times", "f0_hz", "confidence"))

    __hash__ = None


@dataclass(frozen=True)
class TrackAnnotation:
    track_id: str
    singer_id: str
    duration_s: float
    events: tuple = ()
    pitch: PitchContour = field(default_factory=PitchContour)
    year: int = None
    audio_path: str = None
    # externally estimated contour, used by the "EST" pitch conditions
    pitch_est: PitchContour = None

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(sorted(self.events)))
        if not self.singer_id:
            raise AnnotationError(f"track {self.track_id!r}: empty singer_id")
        if not self.duration_s > 0:
            raise AnnotationError(f"track {self.track_id!r}: duration must be > 0")
        for ev in self.events:
            if ev.offset_s > self.duration_s:
                raise AnnotationError(
                    f"track {self.track_id!r}: event {ev.label} {ev.onset_s}-{ev.offset_s} s "
                    f"exceeds duration {self.duration_s} s")


@dataclass(frozen=True)
class Corpus:
    tracks: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))
        seen = set()
        for tr in self.tracks:
            if tr.track_id in seen:
                raise AnnotationError(f"duplicate track_id {tr.track_id!r}")
            seen.add(tr.track_id)

    def __len__(self):
        return len(self.tracks)

    def __iter__(self):
        return iter(self.tracks)

    def singers(self):
        """Singer ids in order of first appearance."""
        return list(dict.fromkeys(tr.singer_id for tr in self.tracks))

    def by_id(self, track_id):
        for tr in self.tracks:
            if tr.track_id == track_id:
                return tr
        raise KeyError(track_id)


@dataclass(frozen=True)
class FrameRoll:
    """Per-class activity matrix of shape (C, T); frame i spans [i*hop, (i+1)*hop)."""

    values: np.ndarray
    hop_s: float
    class_order: tuple

    def __post_init__(self):
        object.__setattr__(self, "class_order", tuple(self.class_order))
        if self.values.ndim != 2 or self.values.shape[0] != len(self.class_order):
            raise ValueError(
                f"roll shape {self.values.shape} does not match {len(self.class_order)} classes")

    @property
    def num_frames(self):
        return self.values.shape[1]


# -- parsing -- #

def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def _rows(text):
    """Non-blank CSV rows with 1-based line numbers, header row skipped if present."""
    rows = [(i + 1, row) for i, row in enumerate(csv.reader(io.StringIO(text)))
            if row and any(cell.strip() for cell in row)]
    if rows and not _is_number(rows[0][1][0]):
        rows = rows[1:]
    return rows


def parse_events(text):
    """Parse an events CSV (``onset_s,offset_s,label``) into sorted events."""
    events = []
    for line, row in _rows(text):
        if len(row) != 3:
            raise AnnotationError(f"line {line}: expected 3 columns, got {len(row)}")
        try:
            onset, offset = float(row[0]), float(row[1])
        except ValueError:
            raise AnnotationError(f"line {line}: non-numeric time in {row!r}") from None
        if not (math.isfinite(onset) and math.isfinite(offset)):
            raise AnnotationError(f"line {line}: non-finite time")
        if onset < 0:
            raise AnnotationError(f"line {line}: negative onset {onset}")
        if onset >= offset:
            raise AnnotationError(f"line {line}: onset {onset} >= offset {offset}")
        events.append(TechniqueEvent(onset, offset, TechniqueClass.parse(row[2])))
    return sorted(events)


def serialize_events(events):
    out = io.StringIO()
    out.write("onset_s,offset_s,label\n")
    for ev in sorted(events):
        out.write(f"{ev.onset_s!r},{ev.offset_s!r},{ev.label.value}\n")
    return out.getvalue()


def parse_pitch(text):
    """Parse a pitch CSV (``time_s,f0_hz[,confidence]``).

    Missing confidence defaults to 1.0; rows with f0 <= 0 are unvoiced and
    dropped.  Times must increase strictly over all rows.
    """
    times, f0s, confs = [], [], []
    last = -math.inf
    for line, row in _rows(text):
        if len(row) not in (2, 3):
            raise AnnotationError(f"line {line}: expected 2 or 3 columns, got {len(row)}")
        try:
            t, f0 = float(row[0]), float(row[1])
            conf = float(row[2]) if len(row) == 3 and row[2].strip() else 1.0
        except ValueError:
            raise AnnotationError(f"line {line}: non-numeric value in {row!r}") from None
        if not t > last:
            raise AnnotationError(f"line {line}: time {t} does not increase")
        last = t
        if not 0.0 <= conf <= 1.0:
            raise AnnotationError(f"line {line}: confidence {conf} outside [0, 1]")
        if f0 <= 0:
            continue
        times.append(t)
        f0s.append(f0)
        confs.append(conf)
    return PitchContour(times, f0s, confs)


def serialize_pitch(contour):
    out = io.StringIO()
    out.write("time_s,f0_hz,confidence\n")
    for t, f0, c in zip(contour.times, contour.f0_hz, contour.confidence):
        out.write(f"{float(t)!r},{float(f0)!r},{float(c)!r}\n")
    return out.getvalue()


# -- frame rolls -- #

def _grid(value, step):
    """``value / step`` snapped to the nearest integer when within tolerance."""
    r = value / step
    n = round(r)
    return float(n) if abs(r - n) < _GRID_TOL * max(1.0, abs(r)) else r


def grid_time(index, step):
    """Boundary time ``index * step`` rounded to nanoseconds."""
    return round(index * step, 9)


def interval_cells(onset, offset, step, count):
    """Half-open range of grid cells ``[i*step, (i+1)*step)`` that the interval
    overlaps with positive length, clipped to ``[0, count)``."""
    lo = math.floor(_grid(onset, step))
    hi = math.ceil(_grid(offset, step))
    return max(lo, 0), min(hi, count)


def rasterize(events, num_frames, hop_s, class_order):
    """Binary multi-hot roll; events past the last frame are truncated."""
    if not hop_s > 0:
        raise ValueError(f"hop_s must be > 0, got {hop_s}")
    class_order = tuple(class_order)
    index = {c: i for i, c in enumerate(class_order)}
    values = np.zeros((len(class_order), num_frames), dtype=np.uint8)
    for ev in events:
        row = index.get(ev.label)
        if row is None:
            continue
        lo, hi = interval_cells(ev.onset_s, ev.offset_s, hop_s, num_frames)
        if hi > lo:
            values[row, lo:hi] = 1
    return FrameRoll(values, hop_s, class_order)


def active_runs(row):
    """``(start, end_exclusive)`` pairs for maximal runs of nonzero entries."""
    padded = np.concatenate([[0], (np.asarray(row) != 0).astype(np.int8), [0]])
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def roll_to_events(roll, min_duration_s=0.0):
    """Maximal runs of active frames per class as events, dropping short ones."""
    events = []
    for label, row in zip(roll.class_order, roll.values):
        for start, end in active_runs(row):
            onset, offset = grid_time(start, roll.hop_s), grid_time(end, roll.hop_s)
            if offset - onset + _GRID_TOL < min_duration_s:
                continue
            events.append(TechniqueEvent(onset, offset, label))
    return sorted(events)


# -- corpus -- #

def wav_duration(path):
    """Duration in seconds from a WAV header."""
    try:
        with wave.open(os.fspath(path), "rb") as w:
            return w.getnframes() / w.getframerate()
    except wave.Error:
        from scipy.io import wavfile
        rate, data = wavfile.read(path, mmap=True)
        return data.shape[0] / rate


def _read_text(path, track_id):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except FileNotFoundError:
        raise AnnotationError(f"track {track_id!r}: missing file {path}") from None


def load_corpus(manifest):
    """Load and validate every track listed in a JSON manifest."""
    manifest = os.fspath(manifest)
    base = os.path.dirname(os.path.abspath(manifest))
    try:
        with open(manifest, encoding="utf-8") as fh:
            entries = json.load(fh)
    except FileNotFoundError:
        raise AnnotationError(f"missing manifest {manifest}") from None
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{manifest}: invalid JSON ({exc})") from None
    if not isinstance(entries, list):
        raise AnnotationError(f"{manifest}: top level must be a list of tracks")

    tracks = []
    seen = set()
    for entry in entries:
        track_id = str(entry.get("track_id", ""))
        if not track_id:
            raise AnnotationError(f"{manifest}: entry without track_id")
        if track_id in seen:
            raise AnnotationError(f"duplicate track_id {track_id!r}")
        seen.add(track_id)

        def resolve(key):
            rel = entry.get(key)
            return None if rel in (None, "") else os.path.join(base, rel)

        audio = resolve("audio")
        if audio is not None:
            if not os.path.exists(audio):
                raise AnnotationError(f"track {track_id!r}: missing file {audio}")
            duration = wav_duration(audio)
        elif entry.get("duration_s") is not None:
            duration = float(entry["duration_s"])
        else:
            raise AnnotationError(f"track {track_id!r}: no audio and no duration_s")

        try:
            events_path = resolve("events")
            events = parse_events(_read_text(events_path, track_id)) if events_path else []
            pitch_path = resolve("pitch")
            pitch = parse_pitch(_read_text(pitch_path, track_id)) if pitch_path else PitchContour()
            est_path = resolve("pitch_est")
            pitch_est = parse_pitch(_read_text(est_path, track_id)) if est_path else None
            tracks.append(TrackAnnotation(
                track_id=track_id,
                singer_id=str(entry.get("singer_id") or ""),
                duration_s=duration,
                events=events,
                pitch=pitch,
                year=entry.get("year"),
                audio_path=audio,
                pitch_est=pitch_est,
            ))
        except AnnotationError as exc:
            msg = str(exc)
            if track_id not in msg:
                msg = f"track {track_id!r}: {msg}"
            raise AnnotationError(msg) from None
    return Corpus(tracks)


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(entries, fh, indent=1, sort_keys=True)
        fh.write("\n")
