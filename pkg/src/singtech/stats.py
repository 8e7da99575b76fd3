"""Descriptive corpus statistics: counts, durations, letter values, coverage."""

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .annotation import TechniqueClass, VOCABULARY


class StatsError(ValueError):
    pass


def union_length(intervals):
    """Total length of the union of ``(start, end)`` intervals."""
    total = 0.0
    cur_start = cur_end = None
    for start, end in sorted(intervals):
        if cur_end is None or start > cur_end:
            if cur_end is not None:
                total += cur_end - cur_start
            cur_start, cur_end = start, end
        else:
            cur_end = max(cur_end, end)
    if cur_end is not None:
        total += cur_end - cur_start
    return total


LETTER_NAMES = ("fourths", "eighths")


def letter_values(values):
    """Letter-value summary of a sample, without interpolation.

    The median sits at depth ``d = (n + 1) / 2`` and each further letter value
    at depth ``(floor(d) + 1) / 2`` of the previous one, counted from either
    end of the sorted sample.  Fractional depths are truncated, which gives
    the lower median for even counts.  Returns ``min``, ``max``, ``median``,
    ``fourths`` and ``eighths`` (each a ``(lower, upper)`` pair) and ``n``.
    """
    x = sorted(float(v) for v in values)
    n = len(x)
    if not n:
        raise StatsError("no values to summarise")
    depth = (n + 1) / 2
    out = {"n": n, "min": x[0], "max": x[-1], "median": x[int(depth) - 1]}
    for name in LETTER_NAMES:
        depth = (int(depth) + 1) / 2
        k = int(depth)
        out[name] = (x[k - 1], x[n - k])
    return out


@dataclass
class StatsReport:
    classes: tuple
    counts: dict
    total_duration_s: dict
    duration_quantiles: dict
    singers: tuple
    per_singer: np.ndarray      # (singers, classes) event counts
    coverage: dict
    unknown_count: int
    corpus_totals: dict
    years: dict

    def to_dict(self):
        return {
            "classes": [c.value for c in self.classes],
            "counts": {c.value: self.counts[c] for c in self.classes},
            "total_duration_s": {c.value: self.total_duration_s[c] for c in self.classes},
            "duration_quantiles": {c.value: self.duration_quantiles[c] for c in self.classes
                                   if c in self.duration_quantiles},
            "per_singer": {s: {c.value: int(self.per_singer[i, j]) for j, c in enumerate(self.classes)}
                           for i, s in enumerate(self.singers)},
            "coverage": dict(self.coverage),
            "unknown_count": self.unknown_count,
            "corpus_totals": dict(self.corpus_totals),
            "years": dict(self.years),
        }


def _class_events(corpus, cls):
    return [ev for tr in corpus for ev in tr.events if ev.label is cls]


def duration_quantiles(corpus, cls):
    """Letter-value summary of the durations of ``cls`` events."""
    cls = TechniqueClass.parse(str(cls)) if not isinstance(cls, TechniqueClass) else cls
    durations = [ev.duration_s for ev in _class_events(corpus, cls)]
    if not durations:
        raise StatsError(f"no {cls.value} events in corpus")
    return letter_values(durations)


def per_singer_distribution(corpus, classes=VOCABULARY):
    """Event counts per (singer, class); rows in first-appearance singer order."""
    if len(corpus) == 0:
        raise StatsError("empty corpus")
    singers = corpus.singers()
    row = {s: i for i, s in enumerate(singers)}
    col = {c: j for j, c in enumerate(classes)}
    matrix = np.zeros((len(singers), len(classes)), dtype=np.int64)
    for tr in corpus:
        for ev in tr.events:
            if ev.label in col:
                matrix[row[tr.singer_id], col[ev.label]] += 1
    return tuple(singers), matrix


def track_coverage(track):
    """Fraction of the track covered by the union of all technique intervals."""
    spans = [(ev.onset_s, ev.offset_s) for ev in track.events if ev.label is not TechniqueClass.UNKNOWN]
    return min(1.0, union_length(spans) / track.duration_s)


def corpus_stats(corpus, classes=VOCABULARY):
    """Full :class:`StatsReport` for a corpus; ``unknown`` is tallied separately."""
    if len(corpus) == 0:
        raise StatsError("empty corpus")
    counts = {c: 0 for c in classes}
    durations = {c: 0.0 for c in classes}
    unknown = 0
    for tr in corpus:
        for ev in tr.events:
            if ev.label is TechniqueClass.UNKNOWN:
                unknown += 1
            elif ev.label in counts:
                counts[ev.label] += 1
                durations[ev.label] += ev.duration_s
    quantiles = {c: duration_quantiles(corpus, c) for c in classes if counts[c]}
    singers, matrix = per_singer_distribution(corpus, classes)
    coverage = {tr.track_id: track_coverage(tr) for tr in corpus}
    n_events = sum(counts.values())
    total_len = float(sum(tr.duration_s for tr in corpus))
    totals = {
        "n_tracks": len(corpus),
        "total_length_s": total_len,
        "mean_track_length_s": total_len / len(corpus),
        "n_events": n_events,
        "mean_technique_length_s": sum(durations.values()) / n_events if n_events else 0.0,
        "mean_coverage": float(np.mean(list(coverage.values()))),
    }
    years = {tr.track_id: tr.year for tr in corpus if tr.year is not None}
    return StatsReport(tuple(classes), counts, durations, quantiles, singers, matrix,
                       coverage, unknown, totals, years)


def render_report(report, fmt="text"):
    """Serialise a report as ``json``, ``csv`` (one row per class) or ``text``."""
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n"
    if fmt == "csv":
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["class", "category", "count", "total_duration_s", "median_s", "min_s", "max_s"])
        for c in report.classes:
            q = report.duration_quantiles.get(c)
            stats = [f"{q['median']:.6f}", f"{q['min']:.6f}", f"{q['max']:.6f}"] if q else ["", "", ""]
            w.writerow([c.value, c.category, report.counts[c], f"{report.total_duration_s[c]:.6f}", *stats])
        return out.getvalue()
    if fmt != "text":
        raise StatsError(f"unknown format {fmt!r}")
    t = report.corpus_totals
    lines = [
        f"tracks              {t['n_tracks']}",
        f"total length        {t['total_length_s']:.1f} s",
        f"mean track length   {t['mean_track_length_s']:.1f} s",
        f"technique events    {t['n_events']} (+{report.unknown_count} unknown)",
        f"mean technique len  {t['mean_technique_length_s']:.3f} s",
        f"mean coverage       {100 * t['mean_coverage']:.1f} %",
        "",
        f"{'class':<14}{'type':<8}{'count':>7}{'total s':>10}{'median s':>10}{'q1/4 s':>9}{'q3/4 s':>9}",
    ]
    for c in report.classes:
        q = report.duration_quantiles.get(c)
        med = f"{q['median']:.3f}" if q else "-"
        lo = f"{q['fourths'][0]:.3f}" if q else "-"
        hi = f"{q['fourths'][1]:.3f}" if q else "-"
        lines.append(f"{c.value:<14}{c.category:<8}{report.counts[c]:>7}"
                     f"{report.total_duration_s[c]:>10.2f}{med:>10}{lo:>9}{hi:>9}")
    lines.append("")
    lines.append("coverage per track")
    for track_id, cov in report.coverage.items():
        lines.append(f"  {track_id:<24}{100 * cov:6.1f} %")
    return "\n".join(lines) + "\n"
