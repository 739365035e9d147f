import numpy as np
import pytest

from rainfusion.grids import PrecipCategory, RainGrid, write_grid
from rainfusion.models import (
    ModelConfig,
    TrainSchedule,
    TrainingError,
    UNet3D,
    build_unet,
    history_to_csv,
    load_model,
    load_sample,
    param_count,
    persistence_forecast,
    predict_grid,
    save_model,
    train,
)
from rainfusion.nn import Parameter, gradient_check, logcosh_loss
from rainfusion.pipeline import SequenceSample
from rainfusion.verify import contingency, csi

DESK = ModelConfig(variant="radar", rows=64, cols=64, time_steps=6,
                   levels=3, base_channels=4, lead_minutes=5)
TINY = ModelConfig(variant="radar", rows=16, cols=16, time_steps=6,
                   levels=3, base_channels=2, lead_minutes=5)
TINY_MM = ModelConfig(variant="multimodal", rows=16, cols=16, time_steps=6,
                      levels=3, base_channels=2, lead_minutes=5)


class TestModelConfig:
    def test_divisibility_error_names_dim(self):
        with pytest.raises(ValueError, match="rows=100"):
            ModelConfig(rows=100, cols=96, levels=5)
        with pytest.raises(ValueError, match="cols=100"):
            ModelConfig(rows=96, cols=100, levels=5)

    def test_pooling_per_variant(self):
        assert ModelConfig(variant="radar").pool_window == (2, 2, 1)
        mm = ModelConfig(variant="multimodal")
        assert mm.pool_window == (2, 2, 2)
        assert mm.in_channels == 12

    def test_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(variant="sonar")
        with pytest.raises(ValueError):
            ModelConfig(levels=1)
        with pytest.raises(ValueError):
            ModelConfig(lead_minutes=10)


class TestArchitecture:
    def test_reference_radar_budget(self):
        model = build_unet(ModelConfig(variant="radar"), seed=0)
        assert model.conv_count == 20
        assert model.pool_count == 4
        assert model.upsample_count == 4
        assert model.skip_count == 4
        count = param_count(model)
        assert 29_800_000 <= count <= 33_000_000
        # frozen from the closed-form layer-by-layer enumeration
        assert count == 31_384_645

    def test_multimodal_exceeds_radar(self):
        radar = param_count(build_unet(ModelConfig(variant="radar")))
        multi = param_count(build_unet(ModelConfig(variant="multimodal")))
        assert multi > radar
        assert multi == 31_390_981  # frozen enumeration value

    def test_single_unit_conv_count(self):
        from rainfusion.nn import Conv3d

        conv = Conv3d(1, 1, kernel=(1, 1, 1))
        assert conv.param_count == 2

    def test_doubling_base_roughly_quadruples(self):
        small = param_count(build_unet(ModelConfig(rows=32, cols=32, levels=3, base_channels=4)))
        big = param_count(build_unet(ModelConfig(rows=32, cols=32, levels=3, base_channels=8)))
        assert 3.3 < big / small < 4.2

    def test_desk_forward_shape(self):
        model = build_unet(DESK, seed=1)
        x = np.random.default_rng(0).random((1, 6, 64, 64, 1), dtype=np.float32)
        assert model.forward(x).shape == (1, 1, 64, 64, 1)

    def test_multimodal_odd_time_path(self):
        # 2x2x2 pooling walks time 6 -> 3 -> 2; decoder must restore exactly
        model = build_unet(TINY_MM, seed=2)
        x = np.random.default_rng(1).random((2, 6, 16, 16, 12), dtype=np.float32)
        out = model.forward(x)
        assert out.shape == (2, 1, 16, 16, 1)
        g = model.backward(np.ones_like(out))
        assert g.shape == x.shape

    def test_forward_deterministic(self):
        model = build_unet(TINY, seed=3)
        x = np.random.default_rng(2).random((1, 6, 16, 16, 1), dtype=np.float32)
        a, b = model.forward(x), model.forward(x)
        np.testing.assert_array_equal(a, b)

    def test_same_seed_same_weights(self):
        a, b = build_unet(TINY, seed=7), build_unet(TINY, seed=7)
        for pa, pb in zip(a.params(), b.params()):
            np.testing.assert_array_equal(pa.value, pb.value)

    def test_input_shape_mismatch(self):
        model = build_unet(TINY)
        with pytest.raises(ValueError):
            model.forward(np.zeros((1, 6, 16, 16, 12), dtype=np.float32))
        with pytest.raises(ValueError):
            model.forward(np.zeros((1, 4, 16, 16, 1), dtype=np.float32))


class TestModelGradients:
    @pytest.mark.parametrize("config", [TINY, TINY_MM])
    def test_full_model_finite_differences(self, config):
        rng = np.random.default_rng(4)
        model = UNet3D(config, seed=5, dtype=np.float64)
        x = Parameter("input", rng.random((1, 6, 16, 16, config.in_channels)))
        target = rng.random((1, 1, 16, 16, 1))

        def loss_fn():
            return logcosh_loss(model.forward(x.value), target)[0]

        out = model.forward(x.value)
        _, grad = logcosh_loss(out, target)
        model.zero_grad()
        x.grad = model.backward(grad)
        params = model.params() + [x]
        grads = [p.grad for p in model.params()] + [x.grad]
        err = gradient_check(loss_fn, params, grads, n_samples=60, seed=6)
        assert err < 1e-4


def _write_sequence(tmp_path, fields, lead=5):
    """fields: 7 arrays -> 6 inputs + target; returns the SequenceSample."""
    paths = []
    for i, vals in enumerate(fields):
        ts = i * 5
        p = tmp_path / f"r{i}.rfg"
        write_grid(p, RainGrid(vals, timestamp=ts))
        paths.append(str(p))
    return SequenceSample(
        input_timestamps=tuple(range(0, 30, 5)),
        radar_paths=tuple(paths[:6]),
        sat_paths=None,
        target_timestamp=30 + (lead - 5),
        target_path=paths[6],
        lead_minutes=lead,
    )


def _static_sample(tmp_path, rows=16, cols=16):
    rng = np.random.default_rng(8)
    vals = np.zeros((rows, cols), dtype=np.float32)
    vals[4:8, 4:8] = 12.0   # heavy block
    vals[10:12, 10:12] = 1.0
    return _write_sequence(tmp_path, [vals] * 7)


class TestPersistence:
    def test_static_scene_perfect_csi(self, tmp_path):
        sample = _static_sample(tmp_path)
        pred = persistence_forecast(sample)
        from rainfusion.grids import read_grid

        obs = read_grid(sample.target_path)
        for cat in (PrecipCategory.HEAVY, PrecipCategory.LIGHT):
            assert csi(contingency(pred, obs, cat)) == 1.0

    def test_output_is_latest_input_bit_identical(self, tmp_path):
        rng = np.random.default_rng(9)
        fields = [rng.uniform(0, 50, (8, 8)).astype(np.float32) for _ in range(7)]
        sample = _write_sequence(tmp_path, fields)
        pred = persistence_forecast(sample)
        np.testing.assert_array_equal(pred.values, fields[5])
        assert pred.timestamp == sample.target_timestamp

    def test_advected_scene_misses(self, tmp_path):
        fields = []
        for i in range(7):
            vals = np.zeros((16, 16), dtype=np.float32)
            vals[2 + 2 * i : 4 + 2 * i, 2:4] = 12.0  # moves 2 cells per frame
            fields.append(vals)
        sample = _write_sequence(tmp_path, fields)
        pred = persistence_forecast(sample)
        from rainfusion.grids import read_grid

        obs = read_grid(sample.target_path)
        table = contingency(pred, obs, PrecipCategory.HEAVY)
        assert table.fn > 0 and table.fp > 0


class TestTraining:
    def _quick_schedule(self, **kw):
        base = dict(epochs=3, lr=1e-3, milestones=(), decay=0.1,
                    batch_size=2, seed=0, loss="logcosh")
        base.update(kw)
        return TrainSchedule(**base)

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            TrainSchedule(milestones=(10, 10))
        with pytest.raises(ValueError):
            TrainSchedule(epochs=10, milestones=(10,))
        with pytest.raises(ValueError):
            TrainSchedule(loss="mae")

    def test_loss_decreases_and_history_shape(self, tmp_path):
        sample = _static_sample(tmp_path)
        model = build_unet(TINY, seed=10)
        history = train(model, [sample], [sample], self._quick_schedule(epochs=12))
        assert len(history) == 12
        assert history[-1].train_loss < history[0].train_loss
        assert all(h.val_loss is not None for h in history)

    def test_decay_one_keeps_lr_constant(self, tmp_path):
        sample = _static_sample(tmp_path)
        model = build_unet(TINY, seed=11)
        history = train(model, [sample], [], self._quick_schedule(
            epochs=4, milestones=(2, 3), decay=1.0))
        assert {h.lr for h in history} == {1e-3}

    def test_identical_seeds_identical_runs(self, tmp_path):
        sample = _static_sample(tmp_path)
        runs = []
        for _ in range(2):
            model = build_unet(TINY, seed=12)
            history = train(model, [sample], [sample], self._quick_schedule(epochs=4))
            runs.append((history, [p.value.copy() for p in model.params()]))
        (h1, p1), (h2, p2) = runs
        assert h1 == h2
        for a, b in zip(p1, p2):
            np.testing.assert_array_equal(a, b)

    def test_empty_training_set_rejected(self):
        with pytest.raises(ValueError):
            train(build_unet(TINY), [], [], self._quick_schedule())

    def test_history_csv(self, tmp_path):
        sample = _static_sample(tmp_path)
        model = build_unet(TINY, seed=13)
        history = train(model, [sample], [], self._quick_schedule(epochs=2))
        out = tmp_path / "history.csv"
        history_to_csv(out, history)
        lines = out.read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,lr"
        assert len(lines) == 3
        assert lines[1].startswith("1,")


class TestPrediction:
    def test_output_domain(self, tmp_path):
        sample = _static_sample(tmp_path)
        model = build_unet(TINY, seed=14)
        pred = predict_grid(model, sample)
        assert pred.values.shape == (16, 16)
        assert pred.values.min() >= 0.0
        assert pred.values.max() <= 200.0
        assert not np.any(pred.values == -999.0)

    def test_deterministic(self, tmp_path):
        sample = _static_sample(tmp_path)
        model = build_unet(TINY, seed=15)
        a, b = predict_grid(model, sample), predict_grid(model, sample)
        np.testing.assert_array_equal(a.values, b.values)


class TestCheckpoints:
    def test_round_trip_preserves_predictions(self, tmp_path):
        sample = _static_sample(tmp_path)
        model = build_unet(TINY, seed=16)
        train(model, [sample], [], TrainSchedule(epochs=2, lr=1e-3, milestones=(),
                                                 batch_size=1, seed=0))
        path = tmp_path / "model.rfp"
        save_model(path, model)
        loaded, stats = load_model(path)
        assert stats is None
        assert loaded.config == model.config
        a = predict_grid(model, sample)
        b = predict_grid(loaded, sample)
        np.testing.assert_array_equal(a.values, b.values)

    def test_band_stats_ride_along(self, tmp_path):
        from rainfusion.pipeline import BandStats

        model = build_unet(TINY_MM, seed=17)
        stats = BandStats(np.arange(11.0), np.arange(11.0) + 5, 3)
        path = tmp_path / "mm.rfp"
        save_model(path, model, stats)
        _, back = load_model(path)
        np.testing.assert_array_equal(back.mins, stats.mins)
        np.testing.assert_array_equal(back.maxs, stats.maxs)
        assert back.count == 3

    def test_rejects_non_checkpoint(self, tmp_path):
        from rainfusion.nn import save_arrays

        path = tmp_path / "junk.rfp"
        save_arrays(path, [("w", np.ones(3, dtype=np.float32))])
        with pytest.raises(ValueError, match="__config__"):
            load_model(path)
