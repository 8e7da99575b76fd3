"""Command-line entry point: ``singtech <command> ...``.

Exit codes: 0 on success, 1 when a component fails at run time, 2 on usage
errors (bad flags, malformed or incomplete config files).
"""

import argparse
import json
import logging
import os
import sys

from .annotation import (AnnotationError, DETECTION_CLASSES, TechniqueClass, VOCABULARY, load_corpus,
                         parse_events, serialize_events)
from .detector.model import ModelConfig
from .detector.pipeline import (Model, TrainConfig, TrainingDivergedError, build_model,
                                decode_events, predict_frames, segment_clips, train)
from .dsp import DspConfig, FeatureFormatError, SampleRateError, save_features
from .evaluation import SegmentScores, aggregate, classwise_report, score_events, summary_report
from .experiment.folds import FoldPlan, make_folds
from .experiment.runner import (CONDITIONS, DecodeConfig, ExperimentError, ExperimentSettings,
                                run_experiment)
from .experiment.synth import SynthSpec, synth_corpus
from .features import PITCH_SOURCES, featurize, track_targets
from .nn.io import WeightsFormatError
from .stats import StatsError, corpus_stats, render_report

log = logging.getLogger("singtech")

RUNTIME_ERRORS = (AnnotationError, StatsError, ExperimentError, TrainingDivergedError,
                  WeightsFormatError, FeatureFormatError, SampleRateError, OSError, ValueError)


class UsageError(Exception):
    pass


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def _require(config, key, path):
    if key not in config:
        raise UsageError(f"{path}: missing required key {key!r}")
    return config[key]


def _relative(base_file, value):
    return value if os.path.isabs(value) else os.path.join(os.path.dirname(os.path.abspath(base_file)), value)


def _classes(names):
    if names is None:
        return DETECTION_CLASSES
    out = tuple(TechniqueClass.parse(n) for n in names)
    if TechniqueClass.UNKNOWN in out:
        raise UsageError(f"unknown class in {list(names)}")
    return out


def _build(factory, overrides, what):
    try:
        return factory(**overrides)
    except TypeError as exc:
        raise UsageError(f"bad {what} settings: {exc}") from None


def _write_json(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1, sort_keys=True, default=str)
        fh.write("\n")


def cmd_stats(args):
    report = corpus_stats(load_corpus(args.manifest))
    sys.stdout.write(render_report(report, "json" if args.json else args.format))
    return 0


def cmd_featurize(args):
    corpus = load_corpus(args.manifest)
    dsp = DspConfig()
    os.makedirs(args.out, exist_ok=True)
    index = {}
    for tr in corpus:
        feats = featurize(tr, dsp, args.pitch)
        name = f"{tr.track_id}.stfe"
        save_features(os.path.join(args.out, name), feats, dsp, {"track_id": tr.track_id, "pitch": args.pitch})
        index[tr.track_id] = {"file": name, "shape": list(feats.values.shape)}
    _write_json(os.path.join(args.out, "features.json"),
                {"pitch": args.pitch, "dsp": dsp.__dict__, "tracks": index})
    print(f"wrote features for {len(index)} tracks to {args.out}")
    return 0


def cmd_synth(args):
    data = _load_json(args.spec)
    spec = _build(SynthSpec.from_dict, {"data": data}, "synth spec")
    corpus = synth_corpus(spec, args.out)
    print(f"wrote {len(corpus)} tracks to {os.path.join(args.out, 'manifest.json')}")
    return 0


def cmd_split(args):
    plan = make_folds(load_corpus(args.manifest), args.k, args.seed)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(plan.to_json())
    else:
        sys.stdout.write(plan.to_json())
    return 0


def _fold_singers(config, path, corpus):
    """Train and validation singer lists for ``train``."""
    if "fold_plan" in config:
        plan = FoldPlan.from_dict(_load_json(_relative(path, config["fold_plan"])))
        fold = plan.folds[int(_require(config, "fold", path))]
        return list(fold.train), list(fold.validation)
    val = list(config.get("validation_singers", []))
    unknown = set(val) - set(corpus.singers())
    if unknown:
        raise UsageError(f"{path}: validation singers not in corpus: {sorted(unknown)}")
    return [s for s in corpus.singers() if s not in val], val


def cmd_train(args):
    config = _load_json(args.config)
    manifest = _relative(args.config, _require(config, "manifest", args.config))
    out = _relative(args.config, _require(config, "out", args.config))
    pitch = config.get("pitch", "none")
    if pitch not in PITCH_SOURCES:
        raise UsageError(f"{args.config}: pitch must be one of {PITCH_SOURCES}")
    classes = _classes(config.get("class_order"))
    dsp = _build(DspConfig, config.get("dsp", {}), "dsp")
    mcfg = _build(ModelConfig, dict(config.get("model", {}), input_channels=1 if pitch == "none" else 2,
                                    n_mels=dsp.n_mels, class_order=classes), "model")
    tcfg = _build(TrainConfig, config.get("train", {}), "train")

    corpus = load_corpus(manifest)
    train_singers, val_singers = _fold_singers(config, args.config, corpus)

    def clips(singers):
        out_clips = []
        for tr in corpus:
            if tr.singer_id in singers:
                feats = featurize(tr, dsp, pitch)
                targets = track_targets(tr, feats.num_frames, dsp.hop_s, classes)
                out_clips.extend(segment_clips(tr.track_id, feats, targets, tcfg.clip_len_s, dsp.hop_s))
        return out_clips

    train_clips = clips(set(train_singers))
    if not train_clips:
        raise UsageError(f"{args.config}: no training tracks")
    val_clips = clips(set(val_singers)) if val_singers else train_clips
    model = build_model(mcfg, int(config.get("seed", 0)))
    model, history = train(model, train_clips, val_clips, tcfg)
    os.makedirs(out, exist_ok=True)
    meta = {"train": tcfg.to_dict(), "pitch": pitch, "dsp": dsp.__dict__}
    model.save(os.path.join(out, "weights.stdk"), extra=meta)
    _write_json(os.path.join(out, "manifest.json"), {
        "manifest": manifest, "seed": int(config.get("seed", 0)), "pitch": pitch,
        "model": mcfg.to_dict(), "train": tcfg.to_dict(), "dsp": dsp.__dict__,
        "singers": {"train": train_singers, "validation": val_singers}, "history": history,
    })
    print(f"best epoch {history['best_epoch']} of {history['epochs']}; weights in {out}")
    return 0


def cmd_predict(args):
    model, meta = Model.load(args.weights)
    pitch = args.pitch or meta.get("pitch", "none")
    if (pitch == "none") != (model.config.input_channels == 1):
        raise UsageError(f"model expects {model.config.input_channels} channels, pitch source is {pitch!r}")
    dsp = _build(DspConfig, meta.get("dsp", {}), "dsp")
    clip_len = meta.get("train", {}).get("clip_len_s", 10.0)
    if args.median and args.median % 2 == 0:
        raise UsageError("--median must be odd")
    corpus = load_corpus(args.manifest)
    os.makedirs(args.out, exist_ok=True)
    for tr in corpus:
        probs = predict_frames(model, featurize(tr, dsp, pitch), dsp.hop_s, clip_len)
        events = decode_events(probs, args.threshold, args.median, args.min_duration)
        with open(os.path.join(args.out, f"{tr.track_id}.csv"), "w", encoding="utf-8") as fh:
            fh.write(serialize_events(events))
    print(f"wrote predictions for {len(corpus)} tracks to {args.out}")
    return 0


def cmd_eval(args):
    corpus = load_corpus(args.manifest)
    if args.classes:
        classes = _classes(args.classes)
    else:
        present = {ev.label for tr in corpus for ev in tr.events}
        classes = tuple(c for c in VOCABULARY if c in present) or DETECTION_CLASSES
    scores = SegmentScores.empty(classes, args.segment)
    for tr in corpus:
        path = os.path.join(args.pred_dir, f"{tr.track_id}.csv")
        try:
            with open(path, encoding="utf-8") as fh:
                pred = parse_events(fh.read())
        except FileNotFoundError:
            raise AnnotationError(f"no predictions for track {tr.track_id!r}: missing file {path}") from None
        scores = scores + score_events(tr.events, pred, tr.duration_s, classes, args.segment)
    if args.json:
        sys.stdout.write(json.dumps(aggregate(scores), indent=1, sort_keys=True) + "\n")
    else:
        sys.stdout.write(summary_report(scores, "text"))
        if args.classwise:
            sys.stdout.write(classwise_report(scores, "csv"))
    return 0


def cmd_experiment(args):
    path = args.config
    config = _load_json(path)
    manifest = _relative(path, _require(config, "manifest", path))
    out = _relative(path, config["out"]) if "out" in config else args.out
    if out is None:
        raise UsageError(f"{path}: give an output directory via 'out' or --out")
    grid = tuple(config.get("grid", CONDITIONS))
    unknown = [g for g in grid if g not in CONDITIONS]
    if unknown:
        raise UsageError(f"{path}: unknown conditions {unknown}")
    settings = ExperimentSettings(
        grid=grid,
        dsp=_build(DspConfig, config.get("dsp", {}), "dsp"),
        model=config.get("model", {}),
        train=config.get("train", {}),
        decode=_build(DecodeConfig, config.get("decode", {}), "decode"),
        class_order=_classes(config.get("class_order")),
        model_seed=int(config.get("model_seed", 0)),
    )
    corpus = load_corpus(manifest)
    if "fold_plan" in config:
        plan = FoldPlan.from_dict(_load_json(_relative(path, config["fold_plan"])))
    else:
        plan = make_folds(corpus, int(config.get("k", 7)), int(config.get("seed", 0)))
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "folds.json"), "w", encoding="utf-8") as fh:
        fh.write(plan.to_json())
    results = run_experiment(corpus, plan, settings, out, jobs=args.jobs)
    if args.json:
        summary = {c: {k: v for k, v in r.items() if k != "folds"} for c, r in results.items()}
        sys.stdout.write(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    else:
        print(f"{'condition':<12}{'macro-F':>9}{'micro-F':>9}{'P':>8}{'R':>8}")
        for cond, r in results.items():
            print(f"{cond:<12}{r['macro_f']:>9.4f}{r['micro_f']:>9.4f}{r['precision']:>8.4f}{r['recall']:>8.4f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="singtech", description="Singing technique detection toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("stats", help="print corpus statistics")
    p.add_argument("manifest")
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.add_argument("--json", action="store_true", help="same as --format json")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("featurize", help="write per-track feature cache files (.stfe)")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--pitch", choices=PITCH_SOURCES, default="none")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("synth", help="generate a synthetic corpus from a JSON spec")
    p.add_argument("spec")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="write a singer-disjoint fold plan")
    p.add_argument("manifest")
    p.add_argument("-k", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one model from a JSON config")
    p.add_argument("config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write predicted event CSVs for a corpus")
    p.add_argument("weights")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--pitch", choices=PITCH_SOURCES, help="pitch source (default: as trained)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--median", type=int, default=0, help="odd median filter width in frames")
    p.add_argument("--min-duration", type=float, default=0.05)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="segment-based metrics of predictions against a corpus")
    p.add_argument("manifest")
    p.add_argument("pred_dir")
    p.add_argument("--classes", nargs="+", help="class order (default: classes present in the references)")
    p.add_argument("--segment", type=float, default=0.05, help="segment length in seconds")
    p.add_argument("--classwise", action="store_true", help="also print per-class counts")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run a cross-validated condition grid")
    p.add_argument("config")
    p.add_argument("--out", help="output directory if the config has none")
    p.add_argument("--jobs", type=int, default=1, help="parallel fold workers")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"singtech {args.command}: {exc}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as exc:
        print(f"singtech {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
