import json
import os

import numpy as np
import pytest

from singtech.annotation import TechniqueEvent, TechniqueClass as T, write_manifest, serialize_events
from singtech.audio import write_wav


def make_manifest(root, tracks, sample_rate=8000):
    """Write a small corpus: ``tracks`` is a list of (track_id, singer, seconds, events)."""
    entries = []
    for track_id, singer, seconds, events in tracks:
        wav = f"{track_id}.wav"
        write_wav(os.path.join(root, wav), np.zeros(int(seconds * sample_rate)), sample_rate)
        with open(os.path.join(root, f"{track_id}.csv"), "w", encoding="utf-8") as fh:
            fh.write(serialize_events(events))
        entries.append({"track_id": track_id, "singer_id": singer, "audio": wav,
                        "events": f"{track_id}.csv", "year": 2000})
    path = os.path.join(root, "manifest.json")
    write_manifest(path, entries)
    return path


@pytest.fixture
def ev():
    def build(onset, offset, label):
        return TechniqueEvent(onset, offset, T.parse(label))
    return build


# three-track statistics fixture with hand-computed expectations
STATS_TRACKS = [
    ("t1", "A", 10.0, [(0.0, 1.0, "vibrato"), (2.0, 3.0, "vibrato"), (5.0, 6.0, "yodel")]),
    ("t2", "B", 4.0, [(0.0, 2.0, "scooping"), (1.0, 3.0, "breathy")]),
    ("t3", "A", 5.0, [(0.5, 1.0, "scooping"), (1.0, 1.5, "scooping"), (4.0, 5.0, "drop")]),
]
STATS_EXPECTED = {
    "counts": {"vibrato": 2, "scooping": 3, "breathy": 1, "drop": 1},
    "total_duration_s": {"vibrato": 2.0, "scooping": 3.0, "breathy": 2.0, "drop": 1.0},
    "coverage": {"t1": 0.2, "t2": 0.75, "t3": 0.4},
    "unknown": 1,
    "scooping_letter_values": {"min": 0.5, "max": 2.0, "median": 0.5, "fourths": (0.5, 2.0)},
    "mean_technique_length_s": 8.0 / 7,
    "per_singer": {"A": {"vibrato": 2, "scooping": 2, "drop": 1}, "B": {"scooping": 1, "breathy": 1}},
}


def stats_fixture(root):
    tracks = [(tid, s, d, [TechniqueEvent(a, b, T.parse(l)) for a, b, l in evs])
              for tid, s, d, evs in STATS_TRACKS]
    return make_manifest(root, tracks)


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one pass/fail line per acceptance criterion; printed at the end of the run."""
    def record(number, title, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE.append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)
