from __future__ import annotations

import csv

import numpy as np
import pytest

from lumacurve.evaluation import (
    LOG_HEADER,
    METRIC_FIELDS,
    DivisionByZero,
    EmptyInput,
    ErrorSummary,
    error_increase,
    kfold_split,
    metric_log_path,
    moving_average,
    predict_batched,
    read_metric_log,
    report_to_csv,
    report_to_json,
    robustness_report,
    split_errors,
    summary_stats,
    write_smoothed_curve,
)
from lumacurve.model import forward_batch, save_checkpoint

from oracles import summary_ref


class TestSummaryStats:
    def test_frozen_one_to_eight(self):
        s = summary_stats(np.arange(1.0, 9.0))
        assert s.median == pytest.approx(4.5, abs=1e-12)
        assert s.mean == pytest.approx(4.5, abs=1e-12)
        assert s.trimean == pytest.approx(4.5, abs=1e-12)
        assert s.best25 == pytest.approx(1.5, abs=1e-12)
        assert s.worst25 == pytest.approx(7.5, abs=1e-12)

    def test_quartiles_behind_frozen_trimean(self):
        # Q1 and Q3 of 1..8 under linear interpolation at q*(n-1).
        arr = np.arange(1.0, 9.0)
        assert np.quantile(arr, 0.25) == pytest.approx(2.75)
        assert np.quantile(arr, 0.75) == pytest.approx(6.25)

    def test_matches_sort_based_oracle(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 50))
            errs = rng.uniform(0.0, 40.0, size=n)
            s = summary_stats(errs)
            ref = summary_ref(errs)
            for key, value in s.as_dict().items():
                assert value == pytest.approx(ref[key], abs=1e-9), key

    def test_single_element(self):
        s = summary_stats([3.2])
        assert s.as_dict() == pytest.approx(
            {k: 3.2 for k in ("median", "mean", "trimean", "b25", "w25")}
        )

    def test_empty_raises(self):
        with pytest.raises(EmptyInput):
            summary_stats([])

    def test_nonfinite_raises(self):
        with pytest.raises(ValueError):
            summary_stats([1.0, np.nan])

    def test_as_dict_keys_match_metric_fields(self):
        s = ErrorSummary(1, 2, 3, 4, 5)
        assert tuple(s.as_dict().keys()) == METRIC_FIELDS


class TestMovingAverage:
    def test_frozen_window_three(self):
        out = moving_average([1, 2, 3, 4], window=3)
        assert out == pytest.approx([1.0, 1.5, 2.0, 3.0], abs=1e-12)

    def test_window_one_is_identity(self, rng):
        series = rng.normal(size=20)
        assert np.array_equal(moving_average(series, window=1), series)

    def test_wide_window_is_cumulative_mean(self, rng):
        series = rng.normal(size=10)
        out = moving_average(series, window=500)
        expected = np.cumsum(series) / np.arange(1, 11)
        assert out == pytest.approx(expected, abs=1e-12)

    def test_rejects_bad_window(self):
        with pytest.raises(ValueError):
            moving_average([1.0], window=0)


class TestErrorIncrease:
    def test_frozen_example(self):
        assert error_increase(0.13, 0.81) == pytest.approx(523.08, abs=0.005)

    def test_sign_convention(self):
        assert error_increase(2.0, 1.0) == pytest.approx(-50.0)

    def test_zero_train_raises(self):
        with pytest.raises(DivisionByZero):
            error_increase(0.0, 1.0)


class TestKFold:
    def test_frozen_sizes(self):
        sizes9 = [len(f) for f in kfold_split(list(range(9)), k=3, seed=0)]
        sizes10 = [len(f) for f in kfold_split(list(range(10)), k=3, seed=0)]
        assert sizes9 == [3, 3, 3]
        assert sizes10 == [4, 3, 3]

    def test_partition_property(self, rng):
        items = [f"r{i}" for i in range(17)]
        folds = kfold_split(items, k=4, seed=3)
        flat = [x for fold in folds for x in fold]
        assert sorted(flat) == sorted(items)

    def test_deterministic_per_seed(self):
        items = list(range(12))
        assert kfold_split(items, 3, seed=5) == kfold_split(items, 3, seed=5)
        assert kfold_split(items, 3, seed=5) != kfold_split(items, 3, seed=6)

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            kfold_split(list(range(5)), k=1)
        with pytest.raises(ValueError):
            kfold_split(list(range(5)), k=6)


class TestPrediction:
    def test_batched_matches_whole(self, rng, model_weights):
        x = rng.uniform(0, 1, size=(7, 3, 64, 64)).astype(np.float32)
        whole = forward_batch(x, model_weights).illuminant.data
        chunked = predict_batched(x, model_weights, batch_size=3)
        assert chunked.shape == (7, 3)
        assert chunked == pytest.approx(whole, abs=1e-6)

    def test_split_errors_shape(self, tiny_dataset, model_weights):
        _, manifest = tiny_dataset
        errs = split_errors(manifest, "test", model_weights)
        assert errs.shape == (4,)
        assert np.all(np.isfinite(errs)) and np.all(errs >= 0.0)

    def test_split_errors_empty_split(self, tiny_dataset, model_weights):
        _, manifest = tiny_dataset
        with pytest.raises(EmptyInput):
            split_errors(manifest, "validation", model_weights)


class TestMetricLogs:
    def write_log(self, path, rows):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOG_HEADER)
            writer.writerows(rows)

    def test_read_sorts_by_epoch(self, tmp_path):
        path = tmp_path / "run.metrics.csv"
        self.write_log(path, [
            [1, "train", 2.0, 0, 0, 0, 0],
            [0, "train", 4.0, 0, 0, 0, 0],
            [0, "test", 5.0, 0, 0, 0, 0],
            [1, "test", 3.0, 0, 0, 0, 0],
        ])
        curves = read_metric_log(path)
        assert curves["train"] == [4.0, 2.0]
        assert curves["test"] == [5.0, 3.0]

    def test_metric_log_path_convention(self, tmp_path):
        assert metric_log_path(tmp_path / "run.json") == tmp_path / "run.metrics.csv"
        assert metric_log_path(tmp_path / "run") == tmp_path / "run.metrics.csv"

    def test_write_smoothed_curve(self, tmp_path):
        log = tmp_path / "run.metrics.csv"
        self.write_log(log, [[e, "test", float(v), 0, 0, 0, 0]
                             for e, v in enumerate([1, 2, 3, 4])])
        out = write_smoothed_curve(log, tmp_path / "curve.tsv", "test", window=3)
        lines = out.read_text().splitlines()
        assert lines[0] == "epoch\tsmoothed_mean"
        assert lines[1] == "0\t1.000000"
        assert lines[-1] == "3\t3.000000"

    def test_write_smoothed_curve_missing_split(self, tmp_path):
        log = tmp_path / "run.metrics.csv"
        self.write_log(log, [[0, "train", 1.0, 0, 0, 0, 0]])
        with pytest.raises(ValueError):
            write_smoothed_curve(log, tmp_path / "x.tsv", "test")


class TestRobustnessReport:
    @pytest.fixture()
    def two_ckpts(self, tmp_path, tiny_dataset):
        from lumacurve.model import ModelConfig, ModelWeights

        paths = {}
        for label, seed in (("baseline", 1), ("bre", 2)):
            w = ModelWeights.init(ModelConfig(), seed=seed)
            paths[label] = save_checkpoint(w, tmp_path / f"{label}.json", step=seed)
        return paths

    def test_report_structure(self, tiny_dataset, two_ckpts):
        root, _ = tiny_dataset
        report = robustness_report(two_ckpts, root / "manifest.jsonl")
        assert set(report["models"]) == {"baseline", "bre"}
        for entry in report["models"].values():
            for split in ("train", "test"):
                assert set(entry[split]) == set(METRIC_FIELDS)
            assert "error_increase_pct" in entry
            assert "smoothed" not in entry  # no sibling logs were written

    def test_smoothed_block_uses_sibling_log(self, tiny_dataset, two_ckpts, tmp_path):
        root, _ = tiny_dataset
        log = metric_log_path(two_ckpts["baseline"])
        with open(log, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOG_HEADER)
            for epoch, (tr, te) in enumerate([(4.0, 6.0), (2.0, 4.0)]):
                writer.writerow([epoch, "train", tr, 0, 0, 0, 0])
                writer.writerow([epoch, "test", te, 0, 0, 0, 0])
        report = robustness_report(two_ckpts, root / "manifest.jsonl")
        smoothed = report["models"]["baseline"]["smoothed"]
        assert smoothed["train_mean"] == pytest.approx(3.0)
        assert smoothed["test_mean"] == pytest.approx(5.0)
        assert smoothed["error_increase_pct"] == pytest.approx(
            error_increase(3.0, 5.0)
        )
        assert "smoothed" not in report["models"]["bre"]

    def test_csv_and_json_outputs(self, tiny_dataset, two_ckpts, tmp_path):
        root, _ = tiny_dataset
        report = robustness_report(two_ckpts, root / "manifest.jsonl")
        json_path = report_to_json(report, tmp_path / "report.json")
        csv_path = report_to_csv(report, tmp_path / "report.csv")
        assert json_path.exists()
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["model", "split", *METRIC_FIELDS, "error_increase_pct"]
        assert len(rows) == 1 + 2 * 2
        assert {r[0] for r in rows[1:]} == {"baseline", "bre"}
        for row in rows[1:]:
            for cell in row[2:]:
                float(cell)  # every metric cell is numeric with 6 decimals
                assert "." in cell and len(cell.split(".")[1]) == 6
