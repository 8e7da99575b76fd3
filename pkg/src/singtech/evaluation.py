"""Segment-based detection metrics (sed_eval-style, pooled counts).

Time is cut into fixed segments (50 ms by default).  A class is active in a
segment when any of its events overlaps the segment with positive length.
Per-class TP/FP/FN are summed over segments and over tracks before any
ratio is taken; zero denominators give 0.
"""

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .annotation import DETECTION_CLASSES, interval_cells

SEGMENT_LEN_S = 0.05


def _ratio(num, den):
    return num / den if den > 0 else 0.0


def num_segments(duration_s, segment_len_s=SEGMENT_LEN_S):
    return math.ceil(round(duration_s / segment_len_s, 9))


def segment_activity(events, duration_s, segment_len_s=SEGMENT_LEN_S, class_order=DETECTION_CLASSES):
    """Binary (C, S) activity matrix with ``S = ceil(duration / segment_len)``."""
    if not segment_len_s > 0:
        raise ValueError(f"segment_len_s must be > 0, got {segment_len_s}")
    index = {c: i for i, c in enumerate(class_order)}
    n_seg = num_segments(duration_s, segment_len_s)
    act = np.zeros((len(class_order), n_seg), dtype=bool)
    for ev in events:
        row = index.get(ev.label)
        if row is None:
            continue
        lo, hi = interval_cells(ev.onset_s, ev.offset_s, segment_len_s, n_seg)
        if hi > lo:
            act[row, lo:hi] = True
    return act


@dataclass
class SegmentScores:
    class_order: tuple
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    segment_len_s: float = SEGMENT_LEN_S

    def __add__(self, other):
        if tuple(self.class_order) != tuple(other.class_order):
            raise ValueError("cannot pool scores over different class orders")
        return SegmentScores(self.class_order, self.tp + other.tp, self.fp + other.fp,
                             self.fn + other.fn, self.segment_len_s)

    @classmethod
    def empty(cls, class_order=DETECTION_CLASSES, segment_len_s=SEGMENT_LEN_S):
        z = np.zeros(len(class_order), dtype=np.int64)
        return cls(tuple(class_order), z, z.copy(), z.copy(), segment_len_s)


def score_segments(ref, pred, class_order=DETECTION_CLASSES, segment_len_s=SEGMENT_LEN_S):
    """Per-class segment confusion counts between two activity matrices."""
    ref = np.asarray(ref, dtype=bool)
    pred = np.asarray(pred, dtype=bool)
    if ref.shape != pred.shape:
        raise ValueError(f"activity shapes differ: {ref.shape} vs {pred.shape}")
    if ref.shape[0] != len(class_order):
        raise ValueError(f"{ref.shape[0]} activity rows for {len(class_order)} classes")
    tp = (ref & pred).sum(axis=1).astype(np.int64)
    fp = (~ref & pred).sum(axis=1).astype(np.int64)
    fn = (ref & ~pred).sum(axis=1).astype(np.int64)
    return SegmentScores(tuple(class_order), tp, fp, fn, segment_len_s)


def score_events(ref_events, pred_events, duration_s, class_order=DETECTION_CLASSES,
                 segment_len_s=SEGMENT_LEN_S):
    """Segmentise both event lists over one track and score them."""
    ref = segment_activity(ref_events, duration_s, segment_len_s, class_order)
    pred = segment_activity(pred_events, duration_s, segment_len_s, class_order)
    return score_segments(ref, pred, class_order, segment_len_s)


def class_prf(tp, fp, fn):
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    f = _ratio(2 * tp, 2 * tp + fp + fn)
    return p, r, f


def aggregate(scores):
    """Macro/micro summary plus per-class precision, recall and F."""
    per_class = {}
    for label, tp, fp, fn in zip(scores.class_order, scores.tp, scores.fp, scores.fn):
        p, r, f = class_prf(int(tp), int(fp), int(fn))
        per_class[str(label)] = {"tp": int(tp), "fp": int(fp), "fn": int(fn),
                                 "precision": p, "recall": r, "f": f}
    tp, fp, fn = int(scores.tp.sum()), int(scores.fp.sum()), int(scores.fn.sum())
    micro_p, micro_r, micro_f = class_prf(tp, fp, fn)
    fs = [v["f"] for v in per_class.values()]
    return {
        "macro_f": math.fsum(fs) / len(fs) if fs else 0.0,
        "micro_f": micro_f,
        "micro_p": micro_p,
        "micro_r": micro_r,
        "per_class": per_class,
    }


def classwise_report(scores, fmt="csv"):
    """Per-class P/R/F table in class order, as CSV or JSON text."""
    summary = aggregate(scores)
    rows = [(label, v["precision"], v["recall"], v["f"]) for label, v in summary["per_class"].items()]
    if fmt == "json":
        return json.dumps([{"class": c, "precision": p, "recall": r, "f": f} for c, p, r, f in rows],
                          indent=1) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["class", "precision", "recall", "f"])
    for c, p, r, f in rows:
        writer.writerow([c, f"{p:.6f}", f"{r:.6f}", f"{f:.6f}"])
    return out.getvalue()


def summary_report(scores, fmt="csv"):
    """One-row Macro-F / Micro-F / P / R table."""
    s = aggregate(scores)
    if fmt == "json":
        return json.dumps(s, indent=1, sort_keys=True) + "\n"
    if fmt == "text":
        return (f"Macro-F {s['macro_f']:.4f}\nMicro-F {s['micro_f']:.4f}\n"
                f"P {s['micro_p']:.4f}\nR {s['micro_r']:.4f}\n")
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    return ("macro_f,micro_f,precision,recall\n"
            f"{s['macro_f']:.6f},{s['micro_f']:.6f},{s['micro_p']:.6f},{s['micro_r']:.6f}\n")
