from __future__ import annotations

import time

import numpy as np
import pytest

from lumacurve.augment import StepState
from lumacurve.model import ModelConfig, ModelWeights, load_checkpoint
from lumacurve.trainer import (
    LOG_HEADER,
    Adam,
    ConfigError,
    TrainConfig,
    schedule,
    train,
    train_step_baseline,
    train_step_bre,
)


def make_batch(rng, n=16, size=64):
    images = rng.uniform(0.02, 1.0, size=(n, 3, size, size)).astype(np.float32)
    labels = rng.uniform(0.2, 1.0, size=(n, 3))
    labels /= np.linalg.norm(labels, axis=1, keepdims=True)
    return images, labels


class TestTrainConfig:
    def test_defaults_validate(self):
        cfg = TrainConfig()
        assert cfg.validate() is cfg
        assert cfg.epochs == 50 and cfg.batch_size == 16
        assert cfg.ctr_weight_early == 10.0 and cfg.ctr_weight_late == 0.1

    def test_validate_names_offending_field(self):
        with pytest.raises(ConfigError, match="epochs"):
            TrainConfig(epochs=0).validate()
        with pytest.raises(ConfigError, match="learning_rate"):
            TrainConfig(learning_rate=-1.0).validate()

    def test_from_dict_roundtrip(self):
        cfg = TrainConfig.from_dict({"epochs": 3, "bre_enabled": False,
                                     "learning_rate": 0.01})
        assert cfg.epochs == 3
        assert cfg.bre_enabled is False
        assert cfg.learning_rate == 0.01

    def test_from_dict_rejects_unknown_field(self):
        with pytest.raises(ConfigError, match="lr"):
            TrainConfig.from_dict({"lr": 0.01})

    def test_from_dict_type_checks(self):
        with pytest.raises(ConfigError, match="epochs"):
            TrainConfig.from_dict({"epochs": 2.5})
        with pytest.raises(ConfigError, match="epochs"):
            TrainConfig.from_dict({"epochs": True})
        with pytest.raises(ConfigError, match="bre_enabled"):
            TrainConfig.from_dict({"bre_enabled": "yes"})

    def test_from_dict_coerces_int_to_float(self):
        cfg = TrainConfig.from_dict({"temperature": 2})
        assert cfg.temperature == 2.0 and isinstance(cfg.temperature, float)


class TestSchedule:
    def test_frozen_examples(self):
        assert schedule(100, 4000) == (1.0, 10.0)
        assert schedule(3000, 4000) == (1.0, 0.1)

    def test_boundary_is_half_open(self):
        # The heavy phase covers epochs strictly below total/2.
        assert schedule(1999, 4000) == (1.0, 10.0)
        assert schedule(2000, 4000) == (1.0, 0.1)

    def test_custom_weights(self):
        assert schedule(0, 10, (2.0, 5.0), (2.0, 0.5)) == (2.0, 5.0)
        assert schedule(5, 10, (2.0, 5.0), (2.0, 0.5)) == (2.0, 0.5)

    def test_rejects_out_of_range_epoch(self):
        with pytest.raises(ValueError):
            schedule(10, 10)
        with pytest.raises(ValueError):
            schedule(-1, 10)


class TestAdam:
    def test_first_step_is_signed_learning_rate(self):
        arrays = {"w": np.zeros(3, dtype=np.float32)}
        adam = Adam(arrays, lr=1e-3)
        adam.update(arrays, {"w": np.array([1.0, -2.0, 0.5], dtype=np.float32)})
        # Bias correction makes the first step lr * g / (|g| + eps).
        assert arrays["w"] == pytest.approx([-1e-3, 1e-3, -1e-3], rel=1e-3)

    def test_minimizes_a_quadratic(self):
        arrays = {"w": np.zeros(1, dtype=np.float32)}
        adam = Adam(arrays, lr=0.1)
        for _ in range(300):
            g = 2.0 * (arrays["w"] - 3.0)
            adam.update(arrays, {"w": g.astype(np.float32)})
        assert float(arrays["w"][0]) == pytest.approx(3.0, abs=0.05)

    def test_step_counter_advances(self):
        arrays = {"w": np.zeros(1, dtype=np.float32)}
        adam = Adam(arrays)
        adam.update(arrays, {"w": np.ones(1, dtype=np.float32)})
        adam.update(arrays, {"w": np.ones(1, dtype=np.float32)})
        assert adam.t == 2


class TestTrainSteps:
    def test_baseline_reduces_loss_on_fixed_batch(self, rng):
        xb, lb = make_batch(rng)
        weights = ModelWeights.init(ModelConfig(), seed=0)
        adam = Adam(weights.arrays)
        first = train_step_baseline(xb, lb, weights, adam)
        losses = [train_step_baseline(xb, lb, weights, adam) for _ in range(29)]
        assert losses[-1] < first

    def test_baseline_leaves_projection_head_untouched(self, rng):
        xb, lb = make_batch(rng)
        weights = ModelWeights.init(ModelConfig(), seed=0)
        before = weights.arrays["proj1_w"].copy()
        head_before = weights.arrays["head_w"].copy()
        train_step_baseline(xb, lb, weights, Adam(weights.arrays))
        assert np.array_equal(weights.arrays["proj1_w"], before)
        assert not np.array_equal(weights.arrays["head_w"], head_before)

    def test_bre_step_updates_state_and_both_heads(self, rng):
        xb, lb = make_batch(rng)
        weights = ModelWeights.init(ModelConfig(), seed=0)
        adam = Adam(weights.arrays)
        proj_before = weights.arrays["proj1_w"].copy()
        head_before = weights.arrays["head_w"].copy()
        state, loss = train_step_bre(xb, lb, weights, adam, StepState(),
                                     np.random.default_rng(0), 1.0, 10.0,
                                     TrainConfig())
        assert state.step == 1
        assert np.isfinite(loss)
        # The joint loss reaches the projection head (contrastive term) and
        # the illuminant head (adversarial term) in the same step.
        assert not np.array_equal(weights.arrays["proj1_w"], proj_before)
        assert not np.array_equal(weights.arrays["head_w"], head_before)

    def test_bre_without_contrastive_term_skips_projection(self, rng):
        xb, lb = make_batch(rng)
        weights = ModelWeights.init(ModelConfig(), seed=0)
        proj_before = weights.arrays["proj1_w"].copy()
        train_step_bre(xb, lb, weights, Adam(weights.arrays), StepState(),
                       np.random.default_rng(0), 1.0, 0.0, TrainConfig())
        assert np.array_equal(weights.arrays["proj1_w"], proj_before)

    def test_bre_with_clean_loss_changes_update(self, rng):
        xb, lb = make_batch(rng)
        wa = ModelWeights.init(ModelConfig(), seed=0)
        wb = wa.copy()
        train_step_bre(xb, lb, wa, Adam(wa.arrays), StepState(),
                       np.random.default_rng(0), 1.0, 10.0, TrainConfig())
        train_step_bre(xb, lb, wb, Adam(wb.arrays), StepState(),
                       np.random.default_rng(0), 1.0, 10.0,
                       TrainConfig(with_clean_loss=True))
        assert not np.array_equal(wa.arrays["conv1_w"], wb.arrays["conv1_w"])

    def test_bre_step_time_within_budget(self, rng):
        xb, lb = make_batch(rng)
        weights = ModelWeights.init(ModelConfig(), seed=0)
        adam = Adam(weights.arrays)
        cfg = TrainConfig()

        def timed(fn, reps=9):
            fn()  # warmup
            times = []
            for _ in range(reps):
                t0 = time.perf_counter()
                fn()
                times.append(time.perf_counter() - t0)
            return float(np.median(times))

        base = timed(lambda: train_step_baseline(xb, lb, weights, adam))
        robust = timed(lambda: train_step_bre(
            xb, lb, weights, adam, StepState(), np.random.default_rng(0),
            1.0, 10.0, cfg))
        assert robust <= 4.0 * base, f"bre step {robust:.4f}s vs baseline {base:.4f}s"


class TestTrainLoop:
    def test_end_to_end_artifacts(self, small_dataset, tmp_path):
        root, _ = small_dataset
        cfg = TrainConfig(epochs=2, batch_size=16, seed=0)
        result = train(root / "manifest.jsonl", cfg, tmp_path / "run.json")

        assert result.final_ckpt.exists()
        assert result.best_ckpt.exists()
        assert result.log_path == tmp_path / "run.metrics.csv"
        assert result.log_path.exists()
        assert (tmp_path / "run.bin").exists()
        assert (tmp_path / "run_best.bin").exists()

        rows = result.log_rows
        assert rows[0] == LOG_HEADER
        assert len(rows) == 1 + 2 * cfg.epochs
        assert rows[1].startswith("0,train,")
        assert rows[2].startswith("0,test,")
        for row in rows[1:]:
            cells = row.split(",")
            assert len(cells) == 7
            assert all(len(c.split(".")[1]) == 6 for c in cells[2:])

        _, final_meta = load_checkpoint(result.final_ckpt)
        _, best_meta = load_checkpoint(result.best_ckpt)
        assert final_meta["step"] == cfg.epochs
        assert best_meta["step"] == result.best_epoch + 1
        assert 0 <= result.best_epoch < cfg.epochs

    def test_same_seed_reproduces_bitwise(self, small_dataset, tmp_path):
        root, _ = small_dataset
        cfg = TrainConfig(epochs=2, batch_size=16, seed=3)
        a = train(root / "manifest.jsonl", cfg, tmp_path / "a.json")
        b = train(root / "manifest.jsonl", TrainConfig(epochs=2, batch_size=16, seed=3),
                  tmp_path / "b.json")
        assert a.log_rows == b.log_rows
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_different_seeds_differ(self, small_dataset, tmp_path):
        root, _ = small_dataset
        a = train(root / "manifest.jsonl", TrainConfig(epochs=1, seed=0),
                  tmp_path / "s0.json")
        b = train(root / "manifest.jsonl", TrainConfig(epochs=1, seed=1),
                  tmp_path / "s1.json")
        assert a.log_rows != b.log_rows

    def test_baseline_mode_runs(self, small_dataset, tmp_path):
        root, _ = small_dataset
        cfg = TrainConfig(epochs=1, bre_enabled=False, seed=0)
        result = train(root / "manifest.jsonl", cfg, tmp_path / "base.json")
        assert result.final_ckpt.exists()
        assert np.isfinite(result.final_test_mean)

    def test_missing_train_split_raises(self, tmp_path):
        manifest = tmp_path / "manifest.jsonl"
        manifest.write_text(
            '{"image": "images/x.pfm", "illuminant": [1.0, 0.0, 0.0], '
            '"scene": 0, "illuminant_id": 0, "position": 1, "split": "test"}\n'
        )
        with pytest.raises(ConfigError, match="train"):
            train(manifest, TrainConfig(epochs=1), tmp_path / "x.json")

    def test_invalid_config_rejected_before_io(self, tmp_path):
        with pytest.raises(ConfigError):
            train(tmp_path / "missing.jsonl", TrainConfig(epochs=0),
                  tmp_path / "x.json")
