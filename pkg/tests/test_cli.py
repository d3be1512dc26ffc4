import json
from pathlib import Path

import pytest
import yaml

from arsl_bench.cli import main
from arsl_bench.config import dump_config, load_config, parse_config
from arsl_bench.dataset_ingest import DatasetManifest
from arsl_bench.errors import ConfigError
from arsl_bench.eval_report import published_reference_runs
from arsl_bench.preprocess import SplitAssignment
from arsl_bench.records import RunRecord

ROOT = Path(__file__).resolve().parent.parent


def _write_config(path, **sections):
    base = {
        "dataset": {"kind": "synthetic", "root": str(path.parent / "data")},
        "preprocess": {"image_size": [32, 32]},
        "train": {"max_epochs": 3},
        "output_dir": str(path.parent / "out"),
    }
    for k, v in sections.items():
        base[k] = v if not isinstance(v, dict) else {**base.get(k, {}), **v}
    path.write_text(yaml.safe_dump(base))
    return path


class TestConfig:
    def test_defaults(self):
        cfg = parse_config({})
        assert cfg.train.base_lr == 0.001 and cfg.train.early_stop_patience == 5
        assert cfg.preprocess.split_ratios == (0.7, 0.15, 0.15)
        assert [cfg.stage_seed(s) for s in ("balance", "split", "model", "shuffle")] == [0, 1, 2, 3]

    def test_shipped_configs_parse(self):
        for path in (ROOT / "configs").glob("*.yaml"):
            load_config(path)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="lerning_rate"):
            parse_config({"train": {"lerning_rate": 0.1}})
        with pytest.raises(ConfigError):
            parse_config({"nonsense": 1})

    def test_nested_seed_rejected(self):
        with pytest.raises(ConfigError, match="global seed"):
            parse_config({"train": {"seed": 3}})

    def test_bad_values(self):
        with pytest.raises(ConfigError):
            parse_config({"preprocess": {"split_ratios": [0.5, 0.5, 0.5]}})
        with pytest.raises(ConfigError):
            parse_config({"model": {"backbone_id": "alexnet"}})
        with pytest.raises(ConfigError):
            parse_config({"model": {"unfreeze_depth": -2}})
        with pytest.raises(ConfigError):
            parse_config({"seed": "zero"})

    def test_overrides(self, tmp_path):
        cfg = load_config(None, ["train.max_epochs=7", "model.backbone_id=resnet50", "preprocess.image_size=[64, 64]"])
        assert cfg.train.max_epochs == 7
        assert cfg.model.backbone_id.value == "resnet50"
        assert cfg.preprocess.image_size == (64, 64)
        with pytest.raises(ConfigError):
            load_config(None, ["train.max_epochs"])

    def test_dump_round_trip(self):
        cfg = load_config(ROOT / "configs" / "desk.yaml", ["seed=5"])
        assert parse_config(yaml.safe_load(dump_config(cfg))) == cfg


class TestSynth:
    def test_writes_dataset(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path / "d"), "--seed", "7"]) == 0
        assert len(list((tmp_path / "d").glob("*/*.png"))) == 400
        first = capsys.readouterr().out
        assert main(["synth", "--out", str(tmp_path / "d"), "--seed", "7"]) == 0
        second = capsys.readouterr().out
        checksum = [line for line in first.splitlines() if line.startswith("checksum")]
        assert checksum and checksum == [line for line in second.splitlines() if line.startswith("checksum")]

    def test_counts_flag(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path / "d"), "--classes", "3", "--counts", "5,2,4", "--image-size", "16"]) == 0
        assert sorted(len(list(p.iterdir())) for p in (tmp_path / "d").iterdir()) == [2, 4, 5]

    def test_unwritable_out(self, tmp_path, capsys):
        (tmp_path / "file").write_text("x")
        code = main(["synth", "--out", str(tmp_path / "file" / "d")])
        assert code == 3
        assert "error" in capsys.readouterr().err

    def test_needs_out(self):
        assert main(["synth"]) == 2


class TestPrepare:
    def test_median_balancing(self, tmp_path, capsys):
        data = tmp_path / "data"
        main(["synth", "--out", str(data), "--classes", "8", "--counts", "100,20,20,20,20,20,20,20", "--image-size", "16"])
        cfg = _write_config(tmp_path / "c.yaml")
        assert main(["prepare", "--config", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert "counts after balancing (hybrid_to_median): " + ", ".join(f"class_{i:02d}=20" for i in range(8)) in out
        balanced = DatasetManifest.load(tmp_path / "out" / "balanced_manifest.json")
        assert balanced.class_counts == (20,) * 8
        splits = SplitAssignment.load(tmp_path / "out" / "splits.json")
        assert splits.sizes() == (112, 24, 24)
        assert splits.seed == 1

    def test_missing_root(self, tmp_path):
        cfg = _write_config(tmp_path / "c.yaml")
        assert main(["prepare", "--config", str(cfg)]) == 3

    def test_bad_config(self, tmp_path):
        (tmp_path / "c.yaml").write_text("train: {max_epoch: 3}\n")
        assert main(["prepare", "--config", str(tmp_path / "c.yaml")]) == 2

    def test_infeasible_balance(self, tmp_path):
        main(["synth", "--out", str(tmp_path / "data"), "--counts", "5,3", "--classes", "2", "--image-size", "8"])
        cfg = _write_config(tmp_path / "c.yaml", preprocess={"balance_strategy": "under", "target_count": 4})
        assert main(["prepare", "--config", str(cfg)]) == 4


class TestTrain:
    def _prepared(self, tmp_path):
        main(["synth", "--out", str(tmp_path / "data"), "--classes", "4", "--per-class", "15", "--image-size", "32"])
        cfg = _write_config(tmp_path / "c.yaml")
        assert main(["prepare", "--config", str(cfg)]) == 0
        return cfg

    def test_train_and_determinism(self, tmp_path):
        cfg = self._prepared(tmp_path)
        assert main(["train", "--config", str(cfg)]) == 0
        path = tmp_path / "out" / "run_tiny_cnn_synthetic_0.json"
        first = RunRecord.load(path)
        assert len(first.history) == 3
        assert first.extra["split_sizes"] == {"train": 40, "val": 8, "test": 12}
        assert (tmp_path / "out" / "checkpoints" / path.stem / "best" / "weights.pt").exists()
        assert main(["train", "--config", str(cfg)]) == 0
        again = RunRecord.load(path)
        assert again.history_without_timing() == first.history_without_timing()

    def test_train_without_prepare(self, tmp_path):
        cfg = _write_config(tmp_path / "c.yaml")
        assert main(["train", "--config", str(cfg)]) == 2

    def test_missing_weights(self, tmp_path, monkeypatch):
        monkeypatch.delenv("ARSL_WEIGHTS_DIR", raising=False)
        cfg = self._prepared(tmp_path)
        code = main(["train", "--config", str(cfg), "--set", "model.backbone_id=resnet50"])
        assert code == 5


class TestReport:
    def _runs(self, tmp_path):
        paths = []
        for r in published_reference_runs("aasl")[:3]:
            paths.append(str(r.save(tmp_path / "runs")))
        return paths

    def test_tables_and_curves(self, tmp_path):
        runs = self._runs(tmp_path)
        assert main(["report", *runs, "--out", str(tmp_path / "rep")]) == 0
        lines = (tmp_path / "rep" / "results.csv").read_text().splitlines()
        assert len(lines) == 4
        assert len(list((tmp_path / "rep").glob("*.curve.csv"))) == 3
        assert len(list((tmp_path / "rep").glob("*.curve.png"))) == 3
        cmp = (tmp_path / "rep" / "results_vs_baselines.csv").read_text()
        assert "El-Sayed et al." in cmp and "Our Approach (EfficientNetB7)" in cmp

    def test_no_runs(self, capsys):
        assert main(["report"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_malformed_record(self, tmp_path):
        (tmp_path / "r.json").write_text(json.dumps({"history": []}))
        assert main(["report", str(tmp_path / "r.json"), "--out", str(tmp_path / "rep")]) == 7
        (tmp_path / "x.json").write_text("nope")
        assert main(["report", str(tmp_path / "x.json"), "--out", str(tmp_path / "rep")]) == 7

    def test_explicit_baselines_with_unknown_dataset(self, tmp_path):
        rec = published_reference_runs("aasl")[0]
        d = rec.to_dict()
        d["dataset"] = "synthetic"
        (tmp_path / "s.json").write_text(json.dumps(d))
        base = tmp_path / "b.json"
        base.write_text(json.dumps({"X": {"dataset": "AASL", "accuracy": 90}}))
        args = ["report", str(tmp_path / "s.json"), "--out", str(tmp_path / "rep")]
        assert main(args) == 0
        assert main(args + ["--baselines", str(base)]) == 7
