import numpy as np
import pytest

from singtech.annotation import DETECTION_CLASSES, FrameRoll, TechniqueClass as T, TechniqueEvent, rasterize
from singtech.detector.model import ModelConfig, backward, forward, init_params, n_params
from singtech.detector.pipeline import (Clip, Model, Normalizer, TrainConfig, TrainingDivergedError,
                                        build_model, decode_events, predict_frames, segment_clips, train)
from singtech.nn.losses import LossConfig, bce_loss

TINY = dict(conv_channels=(4, 4, 4), gru_hidden=4)


def tiny_model(channels=1, seed=0, **kw):
    return build_model(ModelConfig(input_channels=channels, **{**TINY, **kw}), seed)


def features(frames, channels=1, seed=0):
    return np.random.default_rng(seed).standard_normal((channels, 64, frames)).astype(np.float32)


def test_segment_25s_track():
    frames = 2501
    targets = np.zeros((9, frames), dtype=np.float32)
    clips = segment_clips("t", features(frames), targets)
    assert [c.valid_frames for c in clips] == [1001, 1001, 501]
    assert [c.start_s for c in clips] == [0.0, 10.0, 20.0]
    assert all(c.features.shape == (1, 64, 1001) for c in clips)
    assert not clips[-1].features[:, :, 501:].any()
    assert clips[-1].mask.sum() == 501


def test_segment_10s_track():
    (clip,) = segment_clips("t", features(1001), np.zeros((9, 1001)))
    assert clip.valid_frames == 1001 and clip.mask.all()


def test_event_across_clip_boundary():
    order = DETECTION_CLASSES
    roll = rasterize([TechniqueEvent(9.9, 10.1, T.VIBRATO)], 2001, 0.01, order)
    a, b = segment_clips("t", features(2001), roll)
    row = order.index(T.VIBRATO)
    assert np.flatnonzero(a.targets[row]).tolist() == list(range(990, 1001))
    assert np.flatnonzero(b.targets[row]).tolist() == list(range(0, 10))


def test_segment_rejects_misaligned():
    with pytest.raises(ValueError):
        segment_clips("t", features(100), np.zeros((9, 99)))


def test_forward_shapes_default_config():
    for channels in (1, 2):
        config = ModelConfig(input_channels=channels)
        params = init_params(config, 0)
        probs, _ = forward(params, config, features(1001, channels)[None])
        assert probs.shape == (1, 1001, 9)
    assert n_params(ModelConfig()) == sum(v.size for v in init_params(ModelConfig(), 0).values())


def test_init_deterministic():
    a = init_params(ModelConfig(), 3)
    b = init_params(ModelConfig(), 3)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_bad_pooling():
    with pytest.raises(ValueError):
        ModelConfig(n_mels=60)


def test_zero_model_predicts_half():
    model = tiny_model()
    model.params = {k: np.zeros_like(v) for k, v in model.params.items()}
    probs = predict_frames(model, features(300))
    assert probs.values.shape == (9, 300)
    assert np.all(probs.values == 0.5)


def test_output_prior_sets_initial_rate():
    model = tiny_model(output_prior=0.05)
    assert np.all(model.params["conv0.bias"] == 0)
    zeroed = {k: (v if k == "fc.bias" else np.zeros_like(v)) for k, v in model.params.items()}
    model.params = zeroed
    probs = predict_frames(model, features(50))
    np.testing.assert_allclose(probs.values, 0.05, rtol=1e-5)
    with pytest.raises(ValueError):
        ModelConfig(output_prior=1.0)


def test_predict_deterministic_and_open_interval():
    model = tiny_model()
    x = features(2345)
    a = predict_frames(model, x).values
    b = predict_frames(model, x).values
    assert a.tobytes() == b.tobytes()
    assert np.all((a > 0) & (a < 1))
    assert decode_events(FrameRoll(a, 0.01, DETECTION_CLASSES), threshold=1.0) == []


def test_predict_channel_mismatch():
    with pytest.raises(ValueError):
        predict_frames(tiny_model(channels=2), features(100, 1))


def test_padded_frames_change_nothing():
    config = ModelConfig(input_channels=1, **TINY)
    params = {k: v.astype(np.float64) + 0.05 for k, v in init_params(config, 1).items()}
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 1, 64, 40))
    y = (rng.random((1, 40, 9)) < 0.3).astype(np.float64)
    padded_x = np.concatenate([x, np.zeros((1, 1, 64, 25))], axis=3)
    padded_y = np.concatenate([y, np.zeros((1, 25, 9))], axis=1)
    mask = np.concatenate([np.ones((1, 40)), np.zeros((1, 25))], axis=1)

    p1, c1 = forward(params, config, x, np.ones((1, 40)))
    _, d1 = bce_loss(p1, y, np.ones_like(p1))
    g1 = backward(d1, c1)
    p2, c2 = forward(params, config, padded_x, mask)
    _, d2 = bce_loss(p2, padded_y, np.broadcast_to(mask[:, :, None], p2.shape))
    g2 = backward(d2, c2)
    np.testing.assert_allclose(p2[:, :40], p1, rtol=0, atol=1e-13)
    for name in g1:
        np.testing.assert_allclose(g2[name], g1[name], rtol=1e-10, atol=1e-15)


def test_padding_does_not_leak_into_valid_predictions():
    model = tiny_model()
    x = features(1500)
    full = predict_frames(model, x).values
    clipped = predict_frames(model, x[:, :, :1200]).values
    np.testing.assert_allclose(full[:, :1001], clipped[:, :1001], atol=1e-6)


def test_decode_examples():
    values = np.full((9, 100), 0.1)
    values[DETECTION_CLASSES.index(T.VIBRATO), 10:20] = 0.9
    assert decode_events(FrameRoll(values, 0.01, DETECTION_CLASSES)) == [TechniqueEvent(0.1, 0.2, T.VIBRATO)]
    assert decode_events(FrameRoll(np.full((9, 50), 0.3), 0.01, DETECTION_CLASSES)) == []
    single = np.zeros((1, 50))
    single[0, 25] = 1
    assert decode_events(FrameRoll(single, 0.01, (T.DROP,)), median_width_frames=3, min_duration_s=0) == []
    with pytest.raises(ValueError):
        decode_events(FrameRoll(single, 0.01, (T.DROP,)), median_width_frames=4)


def test_decode_inverts_rasterize():
    events = [TechniqueEvent(0.1, 0.3, T.DROP), TechniqueEvent(0.5, 0.56, T.DROP),
              TechniqueEvent(0.0, 1.0, T.BREATHY)]
    roll = rasterize(events, 150, 0.01, DETECTION_CLASSES)
    assert decode_events(FrameRoll(roll.values.astype(float), 0.01, DETECTION_CLASSES)) == sorted(events)


def small_clips(n=2, frames=60, seed=0):
    rng = np.random.default_rng(seed)
    clips = []
    for i in range(n):
        x = rng.standard_normal((1, 64, frames)).astype(np.float32)
        y = np.zeros((2, frames), dtype=np.float32)
        y[0, 10:30] = 1
        x[0, 40:50, 10:30] += 3.0
        clips.append(Clip(f"c{i}", 0.0, x, y, frames))
    return clips


def test_training_is_deterministic_and_learns():
    order = (T.VIBRATO, T.DROP)
    histories = []
    for _ in range(2):
        model = build_model(ModelConfig(class_order=order, **TINY), 0)
        _, hist = train(model, small_clips(), small_clips(), TrainConfig(lr=1e-2, max_epochs=15, patience=15))
        histories.append(hist)
    assert histories[0] == histories[1]
    assert histories[0]["train_loss"][-1] < histories[0]["train_loss"][0]
    assert histories[0]["epochs"] == 15


def test_early_stopping_patience_one():
    order = (T.VIBRATO, T.DROP)
    model = build_model(ModelConfig(class_order=order, **TINY), 0)
    # lr 0 keeps the validation loss constant, so it never improves after epoch 1
    _, hist = train(model, small_clips(), small_clips(1, seed=9), TrainConfig(lr=0.0, patience=1, max_epochs=50))
    assert hist["epochs"] == 2 and hist["best_epoch"] == 1


def test_best_parameters_restored():
    order = (T.VIBRATO, T.DROP)
    model = build_model(ModelConfig(class_order=order, **TINY), 0)
    seen = {}

    def record(epoch, history):
        seen[epoch] = {k: v.copy() for k, v in model.params.items()}
    model, hist = train(model, small_clips(), small_clips(1, seed=5),
                        TrainConfig(lr=3e-2, patience=3, max_epochs=12), on_epoch=record)
    best = seen[hist["best_epoch"]]
    assert all(np.array_equal(model.params[k], best[k]) for k in best)
    assert min(hist["val_loss"]) == hist["val_loss"][hist["best_epoch"] - 1]


def test_divergence_aborts():
    order = (T.VIBRATO, T.DROP)
    model = build_model(ModelConfig(class_order=order, **TINY), 0)
    clips = small_clips()
    bad = [Clip(c.track_id, 0.0, np.full_like(c.features, np.nan), c.targets, c.valid_frames) for c in clips]
    model.normalizer = Normalizer(np.zeros(64, np.float32), np.ones(64, np.float32))
    with pytest.raises(TrainingDivergedError):
        train(model, bad, clips, TrainConfig(max_epochs=2))


def test_train_needs_both_splits():
    with pytest.raises(ValueError):
        train(tiny_model(), small_clips(), [], TrainConfig())


def test_normalizer_ignores_padding_and_pitch_channel():
    rng = np.random.default_rng(0)
    x = np.zeros((2, 64, 20), dtype=np.float32)
    x[0, :, :10] = rng.standard_normal((64, 10)) * 2 + 5
    x[1, 3, :10] = 1
    clip = Clip("c", 0.0, x, np.zeros((9, 20), np.float32), 10)
    norm = Normalizer.fit([clip])
    np.testing.assert_allclose(norm.mean, x[0, :, :10].mean(axis=1), rtol=1e-5)
    out = norm.apply(x)
    np.testing.assert_array_equal(out[1], x[1])
    np.testing.assert_allclose(out[0, :, :10].mean(axis=1), 0, atol=1e-5)


def test_model_save_load(tmp_path):
    model = tiny_model(channels=2)
    model.normalizer = Normalizer(np.arange(64, dtype=np.float32), np.ones(64, np.float32))
    model.save(tmp_path / "w.stdk", extra={"pitch": "gt"})
    back, meta = Model.load(tmp_path / "w.stdk")
    assert back.config == model.config and meta["pitch"] == "gt"
    x = features(300, 2)
    np.testing.assert_array_equal(predict_frames(back, x).values, predict_frames(model, x).values)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    with pytest.raises(ValueError):
        TrainConfig(clip_len_s=0)
    assert TrainConfig(loss={"kind": "focal"}).loss == LossConfig(kind="focal")
