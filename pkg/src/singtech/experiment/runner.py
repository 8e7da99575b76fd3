"""Cross-validated training and evaluation over a grid of conditions."""

import csv
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..annotation import DETECTION_CLASSES, TechniqueClass, serialize_events
from ..detector.model import ModelConfig
from ..detector.pipeline import (TrainConfig, build_model, decode_events, predict_frames,
                                 segment_clips, train)
from ..dsp import DspConfig
from ..evaluation import SegmentScores, aggregate, score_events
from ..features import featurize, track_mel, track_targets
from ..nn.losses import LossConfig

log = logging.getLogger(__name__)

# loss and pitch-source conditions; EST uses the external pitch estimate
CONDITIONS = {
    "BCE": ("bce", "none"),
    "Focal": ("focal", "none"),
    "BCE-GT": ("bce", "gt"),
    "BCE-EST": ("bce", "est"),
    "Focal-GT": ("focal", "gt"),
    "Focal-EST": ("focal", "est"),
}


class ExperimentError(RuntimeError):
    pass


@dataclass
class DecodeConfig:
    threshold: float = 0.5
    median_width_frames: int = 0
    min_duration_s: float = 0.05


@dataclass
class ExperimentSettings:
    grid: tuple = tuple(CONDITIONS)
    dsp: DspConfig = field(default_factory=DspConfig)
    model: dict = field(default_factory=dict)   # ModelConfig overrides
    train: dict = field(default_factory=dict)   # TrainConfig overrides
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    class_order: tuple = DETECTION_CLASSES
    model_seed: int = 0

    def __post_init__(self):
        unknown = [g for g in self.grid if g not in CONDITIONS]
        if unknown:
            raise ValueError(f"unknown conditions {unknown}; choose from {list(CONDITIONS)}")
        self.class_order = tuple(TechniqueClass.parse(str(c)) for c in self.class_order)

    def train_config(self, loss_kind, fold_index):
        overrides = dict(self.train)
        loss = dict(overrides.pop("loss", {}))
        loss["kind"] = loss_kind
        seed = overrides.pop("seed", 0)
        return TrainConfig(loss=LossConfig(**loss), seed=seed + fold_index, **overrides)

    def model_config(self, channels):
        return ModelConfig(input_channels=channels, n_mels=self.dsp.n_mels,
                           class_order=self.class_order, **self.model)

    def to_dict(self):
        return {
            "grid": list(self.grid),
            "dsp": self.dsp.__dict__.copy(),
            "model": {k: list(v) if isinstance(v, tuple) else v for k, v in self.model.items()},
            "train": self.train,
            "decode": self.decode.__dict__.copy(),
            "class_order": [c.value for c in self.class_order],
            "model_seed": self.model_seed,
        }


class FeatureCache:
    """Log-mel spectrograms computed once per track, pitch channels on demand."""

    def __init__(self, corpus, dsp):
        self.corpus = corpus
        self.dsp = dsp
        self._mel = {}

    def mel(self, track):
        if track.track_id not in self._mel:
            self._mel[track.track_id] = track_mel(track, self.dsp)
        return self._mel[track.track_id]

    def features(self, track, pitch):
        return featurize(track, self.dsp, pitch, mel=self.mel(track))


def _clips(cache, tracks, pitch, settings, clip_len_s):
    clips = []
    for tr in tracks:
        feats = cache.features(tr, pitch)
        targets = track_targets(tr, feats.num_frames, settings.dsp.hop_s, settings.class_order)
        clips.extend(segment_clips(tr.track_id, feats, targets, clip_len_s, settings.dsp.hop_s))
    return clips


def run_fold(corpus, fold, condition, settings, out_dir=None, cache=None):
    """Train on one fold under one condition and score its test tracks.

    Returns the fold manifest (a JSON-ready dict) and the pooled
    :class:`SegmentScores` of the fold's test tracks.
    """
    loss_kind, pitch = CONDITIONS[condition]
    cache = cache or FeatureCache(corpus, settings.dsp)
    by_singer = lambda singers: sorted((t for t in corpus if t.singer_id in set(singers)),
                                       key=lambda t: t.track_id)
    train_tracks = by_singer(fold.train)
    val_tracks = by_singer(fold.validation) or train_tracks
    test_tracks = by_singer(fold.test)
    tcfg = settings.train_config(loss_kind, fold.index)
    mcfg = settings.model_config(1 if pitch == "none" else 2)

    started = time.time()
    train_clips = _clips(cache, train_tracks, pitch, settings, tcfg.clip_len_s)
    val_clips = _clips(cache, val_tracks, pitch, settings, tcfg.clip_len_s)
    model = build_model(mcfg, settings.model_seed + fold.index)
    model, history = train(model, train_clips, val_clips, tcfg)

    scores = SegmentScores.empty(settings.class_order)
    predictions = {}
    for tr in test_tracks:
        probs = predict_frames(model, cache.features(tr, pitch), settings.dsp.hop_s, tcfg.clip_len_s)
        events = decode_events(probs, settings.decode.threshold, settings.decode.median_width_frames,
                               settings.decode.min_duration_s)
        predictions[tr.track_id] = events
        scores = scores + score_events(tr.events, events, tr.duration_s, settings.class_order)
    metrics = aggregate(scores)
    manifest = {
        "condition": condition,
        "fold": fold.index,
        "seed": {"model": settings.model_seed + fold.index, "train": tcfg.seed},
        "config": {"model": mcfg.to_dict(), "train": tcfg.to_dict(), "settings": settings.to_dict()},
        "singers": {"test": list(fold.test), "validation": list(fold.validation),
                    "train": list(fold.train)},
        "epochs_run": history["epochs"],
        "best_epoch": history["best_epoch"],
        "history": history,
        "metrics": metrics,
        "seconds": round(time.time() - started, 1),
    }
    if out_dir is not None:
        fold_dir = os.path.join(out_dir, condition, f"fold{fold.index}")
        os.makedirs(os.path.join(fold_dir, "predictions"), exist_ok=True)
        for track_id, events in predictions.items():
            with open(os.path.join(fold_dir, "predictions", f"{track_id}.csv"), "w",
                      encoding="utf-8") as fh:
                fh.write(serialize_events(events))
        model.save(os.path.join(fold_dir, "weights.stdk"),
                   extra={"train": tcfg.to_dict(), "condition": condition, "fold": fold.index})
        with open(os.path.join(fold_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True, default=str)
            fh.write("\n")
    log.info("%s fold %d: macro-F %.4f after %d epochs (%.0f s)", condition, fold.index,
             metrics["macro_f"], history["epochs"], manifest["seconds"])
    return manifest, scores


def _fold_job(args):
    corpus, fold, condition, settings, out_dir = args
    try:
        manifest, scores = run_fold(corpus, fold, condition, settings, out_dir)
    except Exception as exc:
        raise ExperimentError(f"{condition} fold {fold.index}: {exc}") from exc
    return condition, fold.index, manifest, scores


def run_experiment(corpus, plan, settings, out_dir=None, jobs=1):
    """Run every (condition, fold) pair and summarise per condition.

    Each condition row reports the mean over folds of the fold-pooled
    metrics (``macro_f``, ``micro_f``, ``precision``, ``recall``) and, under
    ``pooled``, the metrics of counts pooled over all folds' test tracks.
    """
    jobs_list = [(corpus, fold, cond, settings, out_dir) for cond in settings.grid for fold in plan.folds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(_fold_job, jobs_list))
    else:
        done = []
        cache = FeatureCache(corpus, settings.dsp)
        for corpus_, fold, cond, settings_, out in jobs_list:
            try:
                manifest, scores = run_fold(corpus_, fold, cond, settings_, out, cache=cache)
            except Exception as exc:
                raise ExperimentError(f"{cond} fold {fold.index}: {exc}") from exc
            done.append((cond, fold.index, manifest, scores))

    results = {}
    for cond in settings.grid:
        runs = sorted((d for d in done if d[0] == cond), key=lambda d: d[1])
        fold_metrics = [d[2]["metrics"] for d in runs]
        pooled = SegmentScores.empty(settings.class_order)
        for d in runs:
            pooled = pooled + d[3]
        pooled_metrics = aggregate(pooled)
        classes = [c.value for c in settings.class_order]
        results[cond] = {
            "macro_f": float(np.mean([m["macro_f"] for m in fold_metrics])),
            "micro_f": float(np.mean([m["micro_f"] for m in fold_metrics])),
            "precision": float(np.mean([m["micro_p"] for m in fold_metrics])),
            "recall": float(np.mean([m["micro_r"] for m in fold_metrics])),
            "classwise_f": {c: float(np.mean([m["per_class"][c]["f"] for m in fold_metrics]))
                            for c in classes},
            "pooled": pooled_metrics,
            "folds": [d[2] for d in runs],
        }
    if out_dir is not None:
        write_results(out_dir, results, settings)
    return results


def results_csv(results):
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["condition", "macro_f", "micro_f", "precision", "recall"])
    for cond, r in results.items():
        w.writerow([cond] + [f"{r[k]:.6f}" for k in ("macro_f", "micro_f", "precision", "recall")])
    return out.getvalue()


def classwise_csv(results, class_order):
    classes = [c.value for c in class_order]
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["condition"] + classes)
    for cond, r in results.items():
        w.writerow([cond] + [f"{r['classwise_f'][c]:.6f}" for c in classes])
    return out.getvalue()


def write_results(out_dir, results, settings):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "results.csv"), "w", encoding="utf-8") as fh:
        fh.write(results_csv(results))
    with open(os.path.join(out_dir, "classwise.csv"), "w", encoding="utf-8") as fh:
        fh.write(classwise_csv(results, settings.class_order))
    summary = {c: {k: v for k, v in r.items() if k != "folds"} for c, r in results.items()}
    with open(os.path.join(out_dir, "results.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
