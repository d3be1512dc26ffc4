import math
from fractions import Fraction

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from arsl_bench.errors import DatasetKeyError, LengthMismatchError, ParseError
from arsl_bench.eval_report import (
    BaselineEntry,
    accuracy,
    accuracy_fraction,
    compare_with_baselines,
    confusion,
    curve_csv,
    emit_accuracy_curves,
    emit_results_table,
    evaluate_predictions,
    format_minutes,
    format_pct,
    full_mode_deviation,
    load_baselines,
    parse_curve_csv,
    parse_results_csv,
    predict_labels,
    published_reference_runs,
)
from arsl_bench.records import EpochRecord, RunRecord, TrainConfig


def _record(backbone="tiny_cnn", dataset="synthetic", test=0.9, minutes=1.0, history=None, seed=0):
    history = history or [EpochRecord(0, 0.001, 1.0, 0.5, 0.4), EpochRecord(1, 0.001, 0.5, 0.8, 0.7)]
    return RunRecord(
        config=TrainConfig(),
        model={"backbone_id": backbone, "seed": seed},
        dataset=dataset,
        history=history,
        best_epoch=1,
        stopped_early=False,
        train_acc=0.95,
        val_acc=0.9,
        test_acc=test,
        last_train_acc=0.95,
        last_val_acc=0.9,
        total_train_time_s=minutes * 60,
    )


class TestAccuracy:
    def test_simple(self):
        assert accuracy([0, 1, 2, 2], [0, 1, 1, 2]) == 0.75
        assert accuracy_fraction([1, 1, 1], [1, 0, 0]) == Fraction(1, 3)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            accuracy([0, 1], [0])
        with pytest.raises(LengthMismatchError):
            accuracy([], [])

    def test_argmax_tie_goes_low(self):
        assert predict_labels(torch.tensor([[1.0, 3.0, 3.0], [2.0, 2.0, 0.0]])).tolist() == [1, 0]

    def test_confusion_counts(self):
        cm = confusion([0, 1, 1, 2, 2, 2], [0, 1, 2, 2, 2, 0], 3)
        assert cm.matrix.tolist() == [[1, 0, 1], [0, 1, 0], [0, 1, 2]]
        assert cm.tp.tolist() == [1, 1, 2]
        assert cm.fp.tolist() == [0, 1, 1]
        assert cm.fn.tolist() == [1, 0, 1]
        assert cm.tn.tolist() == [4, 4, 2]
        assert cm.accuracy_fraction() == Fraction(4, 6)

    def test_one_vs_rest_binary_form(self):
        cm = confusion([0, 1, 1, 0], [0, 1, 0, 0], 2)
        # (TP + TN) / (TP + TN + FP + FN) for each class taken as positive.
        assert cm.one_vs_rest_accuracy() == [0.75, 0.75]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 6), st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=60))
    def test_counts_partition(self, c, pairs):
        p = [a % c for a, _ in pairs]
        y = [b % c for _, b in pairs]
        cm = confusion(p, y, c)
        assert np.all(cm.tp + cm.fp + cm.fn + cm.tn == len(pairs))
        assert float(cm.accuracy_fraction()) == accuracy(p, y)

    def test_evaluate(self):
        rep = evaluate_predictions([0, 1, 1], [0, 1, 0], 2, split="val")
        assert rep.split == "val" and rep.n == 3
        assert rep.accuracy == pytest.approx(2 / 3)


class TestTables:
    def test_formatting(self):
        assert format_pct(0.9948) == "99.48%"
        assert format_pct(1.0) == "100.00%"
        assert format_minutes(26.52 * 60) == "26.52 minutes"

    def test_best_flags_and_round_trip(self):
        runs = [_record("resnet50", test=0.99, minutes=3), _record("mobilenetv2", test=0.995, minutes=2)]
        table = emit_results_table(runs)
        parsed = parse_results_csv(table.to_csv())
        assert [r["model"] for r in parsed] == ["Resnet50", "MobileNetV2"]
        assert parsed[1]["best"] == ["Train Acc", "Val Acc", "Test Acc", "Train Time"]
        assert parsed[0]["best"] == ["Train Acc", "Val Acc"]
        assert parsed[1]["test_acc"] == pytest.approx(0.995)
        assert "**99.50%**" in table.to_markdown()

    def test_ties_at_display_precision(self):
        runs = [_record(test=0.99481), _record(test=0.99479)]
        flags = [f[3] for f in emit_results_table(runs).flags]
        assert flags == [True, True]

    def test_write(self, tmp_path):
        csv_path, md_path = emit_results_table([_record()]).write(tmp_path, "t")
        assert csv_path.read_text().startswith("Model,Train Acc")
        assert md_path.exists()

    def test_parse_garbage(self):
        with pytest.raises(ParseError):
            parse_results_csv("a,b\n1,2\n")

    def test_empty(self):
        with pytest.raises(ValueError):
            emit_results_table([])


class TestCurves:
    def test_exact_round_trip(self, tmp_path):
        hist = [EpochRecord(i, 0.001, 1.0, 0.1 * i + 1 / 3, 0.1 * i + 1 / 7) for i in range(5)]
        rec = _record(history=hist)
        rows = parse_curve_csv(curve_csv(rec))
        assert [(e, t, v) for e, t, v, _ in rows] == [(h.epoch, h.train_acc, h.val_acc) for h in hist]
        c, p = emit_accuracy_curves(rec, tmp_path, "run")
        assert c.name == "run.curve.csv" and p.name == "run.curve.png"
        assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_not_a_curve(self):
        with pytest.raises(ParseError):
            parse_curve_csv("x,y\n")


class TestBaselines:
    def test_bundled_values(self):
        by_ds = {}
        for b in load_baselines():
            by_ds.setdefault(b.dataset, []).append(b.accuracy)
        assert by_ds == {"ArASL2018": [94.95, 97.31, 99.30], "AASL": [97.40, 89.46]}

    def test_comparison_flags_best(self):
        table = compare_with_baselines(_record("mobilenetv2", "arsl2018", test=0.9948))
        ours = [r for r in table.rows if r[0].startswith("Our Approach")]
        assert ours == [["Our Approach (MobileNetV2)", "ArASL2018", "99.48%"]]
        best = [r[0] for r, f in zip(table.rows, table.flags) if f[2]]
        assert best == ["Our Approach (MobileNetV2)", "El-Sayed et al."]

    def test_unknown_dataset(self):
        with pytest.raises(DatasetKeyError):
            compare_with_baselines(_record(dataset="synthetic"))

    def test_custom_baselines(self):
        table = compare_with_baselines([_record(dataset="aasl", test=0.5)], [BaselineEntry("X", "AASL", 60.0)])
        assert [r[2] for r in table.rows] == ["60.00%", "50.00%"]

    def test_malformed_file(self, tmp_path):
        (tmp_path / "b.json").write_text("[1, 2]")
        with pytest.raises(ParseError):
            load_baselines(tmp_path / "b.json")


class TestPublished:
    def test_reference_runs(self):
        runs = {r.backbone_id: r for r in published_reference_runs("arsl2018")}
        assert len(runs) == 5
        assert format_pct(runs["mobilenetv2"].test_acc) == "99.48%"
        assert format_minutes(runs["mobilenetv2"].total_train_time_s) == "26.52 minutes"
        best = {r.backbone_id: r.test_acc for r in published_reference_runs("aasl")}
        assert max(best, key=best.get) == "google_vit"

    def test_deviation(self):
        rec = _record("google_vit", "aasl", test=0.9893)
        assert full_mode_deviation(rec) == pytest.approx(-0.5)
        with pytest.raises(DatasetKeyError):
            published_reference_runs("synthetic")

    def test_record_parse_errors(self, tmp_path):
        (tmp_path / "bad.json").write_text('{"config": {}}')
        with pytest.raises(ParseError):
            RunRecord.load(tmp_path / "bad.json")
        (tmp_path / "worse.json").write_text("{not json")
        with pytest.raises(ParseError):
            RunRecord.load(tmp_path / "worse.json")
        d = _record().to_dict()
        d["surprise"] = 1
        with pytest.raises(ParseError):
            RunRecord.from_dict(d)
        assert math.isclose(RunRecord.from_dict(_record().to_dict()).test_acc, 0.9)
