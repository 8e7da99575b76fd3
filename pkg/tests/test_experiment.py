import json
import os
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from singtech.annotation import Corpus, TechniqueClass as T, TechniqueEvent, TrackAnnotation, load_corpus, rasterize
from singtech.experiment.folds import FoldPlan, make_folds
from singtech.experiment.runner import ExperimentSettings, run_experiment, run_fold
from singtech.experiment.synth import SURROGATE_CLASSES, SynthSpec, render_track, synth_corpus

PITCH_CLASSES = (T.VIBRATO, T.SCOOPING, T.DROP)


def random_corpus(rng, n_singers, max_tracks=3):
    tracks = []
    labels = [c for c in T if c is not T.UNKNOWN]
    for s in range(n_singers):
        for k in range(int(rng.integers(1, max_tracks + 1))):
            events = [TechniqueEvent(float(i), float(i) + 0.5, labels[int(rng.integers(len(labels)))])
                      for i in range(int(rng.integers(0, 8)))]
            tracks.append(TrackAnnotation(f"s{s}_t{k}", f"s{s}", 10.0, events))
    order = list(range(len(tracks)))
    rng.shuffle(order)
    return Corpus([tracks[i] for i in order])


def check_plan(plan, corpus, k):
    singers = set(corpus.singers())
    groups = [set(g) for g in plan.groups]
    assert len(groups) == k and all(groups)
    assert set().union(*groups) == singers
    assert sum(len(g) for g in groups) == len(singers)
    test_counts = {s: 0 for s in singers}
    for fold in plan.folds:
        test, val, train = set(fold.test), set(fold.validation), set(fold.train)
        assert not (test & train) and not (test & val) and not (val & train)
        assert test | val | train == singers
        for s in test:
            test_counts[s] += 1
    assert set(test_counts.values()) == {1}


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 9), st.integers(0, 2 ** 16))
def test_fold_plan_properties(corpus_seed, k, seed):
    rng = np.random.default_rng(corpus_seed)
    corpus = random_corpus(rng, int(rng.integers(k, k + 12)))
    plan = make_folds(corpus, k, seed)
    check_plan(plan, corpus, k)
    again = make_folds(corpus, k, seed)
    assert again == plan
    assert FoldPlan.from_dict(json.loads(plan.to_json())) == plan


def test_seven_singers_singletons():
    corpus = random_corpus(np.random.default_rng(0), 7)
    plan = make_folds(corpus, 7, 0)
    assert all(len(g) == 1 for g in plan.groups)
    assert all(len(f.train) == 5 for f in plan.folds)


def test_k2_folds():
    corpus = random_corpus(np.random.default_rng(1), 4)
    plan = make_folds(corpus, 2, 0)
    check_plan(plan, corpus, 2)
    assert all(f.validation == () for f in plan.folds)


def test_too_few_singers():
    with pytest.raises(ValueError):
        make_folds(random_corpus(np.random.default_rng(0), 3), 5, 0)


def test_balance_is_reasonable():
    # 14 singers with similar profiles split into 7 groups of two
    tracks = []
    for s in range(14):
        events = [TechniqueEvent(float(i), float(i) + 0.5, (T.VIBRATO, T.DROP)[i % 2]) for i in range(10 + s % 3)]
        tracks.append(TrackAnnotation(f"t{s}", f"s{s}", 30.0, events))
    plan = make_folds(Corpus(tracks), 7, 0)
    assert sorted(len(g) for g in plan.groups) == [2] * 7
    totals = [sum(b.values()) for b in plan.balance.values()]
    assert max(totals) - min(totals) <= 2


# -- synthetic corpus -- #

def midi(f0):
    return 69 + 12 * np.log2(np.asarray(f0) / 440.0)


SMALL = SynthSpec(n_singers=2, tracks_per_singer=1, track_len_s=12.0, seed=3)


@pytest.fixture(scope="module")
def small_track():
    return render_track(SMALL, 0, 0)


def test_vibrato_rate(small_track):
    _, events, gt, _ = small_track
    vib = [e for e in events if e.label is T.VIBRATO]
    assert vib
    for ev in vib:
        keep = (gt.times > ev.onset_s) & (gt.times < ev.offset_s)
        dev = midi(gt.f0_hz[keep])
        dev = dev - np.round(np.median(dev))
        crossings = np.count_nonzero(np.diff(np.sign(dev[np.abs(dev) > 1e-9])) != 0)
        rate = crossings / (2 * (ev.offset_s - ev.onset_s))
        assert rate == pytest.approx(6.0, abs=0.5)


def test_annotations_match_modulation(small_track):
    _, events, gt, _ = small_track
    n = 1200
    frame = np.round(gt.times / 0.01 - 0.5).astype(int)
    modulated = np.zeros(n, dtype=bool)
    dev = np.abs(midi(gt.f0_hz) - np.round(midi(gt.f0_hz)))
    modulated[frame[dev > 1e-6]] = True
    roll = rasterize([e for e in events if e.label in PITCH_CLASSES], n, 0.01, PITCH_CLASSES).values.any(axis=0)
    near = roll | np.roll(roll, 1) | np.roll(roll, -1)
    # every modulated frame sits inside (or one frame beside) an annotated pitch technique
    assert not np.any(modulated & ~near)
    # and glides are modulated everywhere except possibly their boundary frames
    for ev in events:
        if ev.label in (T.SCOOPING, T.DROP):
            inner = np.arange(int(np.ceil(ev.onset_s / 0.01)) + 1, int(np.floor(ev.offset_s / 0.01)) - 1)
            voiced = np.isin(inner, frame)
            assert modulated[inner[voiced]].all()


def test_falsetto_octave_up(small_track):
    _, events, gt, _ = small_track
    fals = [e for e in events if e.label is T.FALSETTO]
    normal = midi(gt.f0_hz).min()
    for ev in fals:
        keep = (gt.times > ev.onset_s + 0.02) & (gt.times < ev.offset_s - 0.02)
        assert midi(gt.f0_hz[keep]).min() >= normal + 12 - 1e-9


def test_rate_zero_gives_plain_melody():
    spec = SynthSpec(n_singers=1, tracks_per_singer=1, track_len_s=5.0, rates={c.value: 0 for c in SURROGATE_CLASSES})
    samples, events, gt, _ = render_track(spec, 0, 0)
    assert events == []
    assert np.all(np.abs(midi(gt.f0_hz) - np.round(midi(gt.f0_hz))) < 1e-9)


def test_synth_deterministic(tmp_path):
    spec = SynthSpec(n_singers=1, tracks_per_singer=1, track_len_s=4.0, seed=11)
    a = synth_corpus(spec, tmp_path / "a")
    b = synth_corpus(spec, tmp_path / "b")
    assert (tmp_path / "a" / "singer00_t0.wav").read_bytes() == (tmp_path / "b" / "singer00_t0.wav").read_bytes()
    assert list(a)[0].events == list(b)[0].events
    assert list(a)[0].pitch_est is not None


def test_estimated_pitch_corruption():
    spec = SynthSpec(n_singers=1, tracks_per_singer=1, track_len_s=30.0, seed=2)
    _, _, gt, est = render_track(spec, 0, 0)
    ratio = est.f0_hz / gt.f0_hz
    octave = np.isclose(ratio, 2.0) | np.isclose(ratio, 0.5)
    assert np.all(octave | np.isclose(ratio, 1.0))
    assert 0.02 < octave.mean() < 0.08
    assert est.confidence.min() >= 0.3 and est.confidence.max() <= 1.0


def test_bad_spec():
    with pytest.raises(ValueError):
        SynthSpec(rates={"rasp": 1.0})


# -- runner -- #

TOY = dict(model={"conv_channels": [4, 4, 4], "gru_hidden": 4},
           train={"max_epochs": 2, "lr": 1e-3, "batch_size": 4}, class_order=SURROGATE_CLASSES)


@pytest.fixture(scope="module")
def toy_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    return synth_corpus(SynthSpec(n_singers=2, tracks_per_singer=1, track_len_s=4.0, seed=5), root)


def test_toy_experiment(toy_corpus, tmp_path):
    plan = make_folds(toy_corpus, 2, 0)
    settings = ExperimentSettings(grid=("BCE", "Focal-GT"), **TOY)
    results = run_experiment(toy_corpus, plan, settings, out_dir=tmp_path)
    assert set(results) == {"BCE", "Focal-GT"}
    for cond, r in results.items():
        assert 0 <= r["macro_f"] <= 1 and len(r["folds"]) == 2
        assert set(r["classwise_f"]) == {c.value for c in SURROGATE_CLASSES}
        for fold in range(2):
            d = tmp_path / cond / f"fold{fold}"
            manifest = json.loads((d / "manifest.json").read_text())
            assert manifest["epochs_run"] == 2 and manifest["fold"] == fold
            assert (d / "weights.stdk").exists()
            assert len(list((d / "predictions").iterdir())) == 1
    header = (tmp_path / "results.csv").read_text().splitlines()
    assert header[0] == "condition,macro_f,micro_f,precision,recall" and len(header) == 3
    assert (tmp_path / "classwise.csv").read_text().splitlines()[0].startswith("condition,vibrato")


def test_track_order_invariance(toy_corpus):
    plan = make_folds(toy_corpus, 2, 0)
    settings = ExperimentSettings(grid=("Focal",), **TOY)
    a = run_experiment(toy_corpus, plan, settings)
    shuffled = Corpus(list(toy_corpus)[::-1])
    b = run_experiment(shuffled, plan, settings)
    assert a["Focal"]["pooled"] == b["Focal"]["pooled"]
    assert [f["history"] for f in a["Focal"]["folds"]] == [f["history"] for f in b["Focal"]["folds"]]


def test_unknown_condition():
    with pytest.raises(ValueError):
        ExperimentSettings(grid=("CREPE",))
