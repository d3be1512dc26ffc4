"""Command-line entry point: ``arsl-bench {synth,prepare,train,report}``.

Exit codes: 0 success, 1 unexpected failure, 2 usage or configuration
error, 3 dataset error, 4 preprocessing error, 5 model/weights error,
6 training error, 7 report/parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, dump_config, load_config
from .dataset_ingest import DatasetManifest, generate_synthetic_dataset, scan_dataset
from .errors import ArslError, ConfigError, ParseError
from .eval_report import (
    DATASET_LABELS,
    compare_with_baselines,
    emit_accuracy_curves,
    emit_results_table,
    load_baselines,
)
from .model_zoo import create_model, trainable_parameter_report
from .preprocess import (
    SplitAssignment,
    balance_classes,
    duplicate_leakage,
    preprocess_refs,
    resolve_split,
    split_dataset,
)
from .records import RunRecord
from .trainer import train

logger = logging.getLogger("arsl_bench")

MANIFEST_FILE = "manifest.json"
BALANCED_FILE = "balanced_manifest.json"
SPLITS_FILE = "splits.json"


def _counts_line(manifest: DatasetManifest) -> str:
    return ", ".join(f"{n}={c}" for n, c in zip(manifest.label_map.names, manifest.class_counts))


def _experiment(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "out", None) is not None:
        overrides.append(f"output_dir={args.out}")
    return load_config(args.config, overrides)


# -- synth ------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = load_config(args.config, list(args.set or [])) if args.config or args.set else None
    spec = cfg.dataset.synthetic if cfg and cfg.dataset.synthetic else None
    classes = args.classes or (spec.classes if spec else 8)
    if args.counts:
        per_class = [int(c) for c in args.counts.split(",")]
    elif args.per_class is not None:
        per_class = args.per_class
    else:
        per_class = spec.per_class if spec else 50
    image_size = args.image_size or (spec.image_size if spec else 64)
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
    out = args.out or (cfg.dataset.root if cfg else None)
    if out is None:
        raise ConfigError("synth needs --out (or dataset.root in the config)")

    manifest = generate_synthetic_dataset(
        out, classes, per_class, image_size=image_size, seed=seed,
        class_names=spec.class_names if spec else None,
    )
    print(f"wrote {len(manifest)} images in {manifest.label_map.num_classes} classes to {out}")
    print(f"class counts: {_counts_line(manifest)}")
    print(f"checksum: {manifest.checksum}")
    return 0


# -- prepare ----------------------------------------------------------------

def cmd_prepare(args) -> int:
    cfg = _experiment(args)
    pre = cfg.preprocess_config()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    manifest = scan_dataset(cfg.dataset.root, cfg.dataset.kind, workers=args.workers)
    if manifest.skipped:
        print(f"skipped {len(manifest.skipped)} undecodable file(s):")
        for path, reason in manifest.skipped:
            print(f"  {path}: {reason}")
    print(f"scanned {len(manifest)} images, {manifest.label_map.num_classes} classes")
    print(f"counts before balancing: {_counts_line(manifest)}")

    balanced = balance_classes(manifest, pre.balance_strategy, pre.target_count, seed=cfg.stage_seed("balance"))
    print(f"counts after balancing ({pre.balance_strategy.value}): {_counts_line(balanced)}")

    splits = split_dataset(balanced, pre.split_ratios, seed=cfg.stage_seed("split"))
    n_train, n_val, n_test = splits.sizes()
    print(f"split sizes train/val/test: {n_train}/{n_val}/{n_test}")
    leaks = duplicate_leakage(balanced, splits)
    if leaks:
        print(f"warning: {leaks} source image(s) have oversampled copies in more than one split")

    manifest.save(out / MANIFEST_FILE)
    balanced.save(out / BALANCED_FILE)
    splits.save(out / SPLITS_FILE)
    (out / "config.yaml").write_text(dump_config(cfg), encoding="utf-8")
    print(f"wrote {out / BALANCED_FILE} and {out / SPLITS_FILE}")
    return 0


# -- train ------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _experiment(args)
    out = Path(cfg.output_dir)
    try:
        manifest = DatasetManifest.load(out / BALANCED_FILE)
        splits = SplitAssignment.load(out / SPLITS_FILE)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"no prepared splits in {out} (run `prepare` first): {exc}") from exc

    pre = cfg.preprocess_config()
    refs = resolve_split(manifest, splits)
    data = {name: preprocess_refs(r, pre, workers=args.workers) for name, r in refs.items()}

    size = pre.image_size
    if size[0] != size[1]:
        raise ConfigError("models expect square inputs; set preprocess.image_size to [n, n]")
    model = create_model(
        cfg.model.backbone_id,
        manifest.label_map.num_classes,
        cfg.model.freeze_policy,
        seed=cfg.stage_seed("model"),
        weights=cfg.model.weights,
        head_hidden=cfg.model.head_hidden,
        input_size=size[0],
        standardize=cfg.model.standardize,
    )
    extra = {
        "experiment_config": cfg.to_dict(),
        "split_sizes": dict(zip(("train", "val", "test"), splits.sizes())),
        "duplicate_leakage": duplicate_leakage(manifest, splits),
        "freeze_report": trainable_parameter_report(model).to_dict(),
        "manifest_checksum": manifest.checksum,
        "global_seed": cfg.seed,
    }
    stem = f"run_{cfg.model.backbone_id.value}_{manifest.dataset_kind.value}_{cfg.seed}"
    record = train(
        model,
        data,
        cfg.train_config(),
        dataset=manifest.dataset_kind.value,
        checkpoint_dir=out / "checkpoints" / stem,
        extra=extra,
    )
    path = record.save(out)
    status = "stopped early" if record.stopped_early else "reached max_epochs"
    print(
        f"{len(record.history)} epochs ({status}); best epoch {record.best_epoch}; "
        f"train {record.train_acc:.4f} val {record.val_acc:.4f} test {record.test_acc:.4f}; "
        f"{record.total_train_time_s:.1f}s"
    )
    print(f"wrote {path}")
    return 0


# -- report -----------------------------------------------------------------

def cmd_report(args, parser) -> int:
    if not args.runs:
        parser.print_usage(sys.stderr)
        print("report: need at least one run record file", file=sys.stderr)
        return ConfigError.exit_code
    records = [RunRecord.load(p) for p in args.runs]
    out = Path(args.out)
    table = emit_results_table(records, title=args.title or "")
    csv_path, md_path = table.write(out, args.name)
    print(f"wrote {csv_path} and {md_path}")
    for path, rec in zip(args.runs, records):
        c, p = emit_accuracy_curves(rec, out, Path(path).stem)
        print(f"wrote {c} and {p}")

    baselines = load_baselines(args.baselines)
    comparable = [r for r in records if r.dataset in DATASET_LABELS]
    if args.baselines and len(comparable) != len(records):
        # Explicit request: surface the unknown dataset instead of skipping it.
        comparable = records
    if comparable:
        cmp_csv, cmp_md = compare_with_baselines(comparable, baselines).write(out, f"{args.name}_vs_baselines")
        print(f"wrote {cmp_csv} and {cmp_md}")
    else:
        print("no run on a dataset with published baselines; comparison skipped")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arsl-bench", description="Arabic sign-language recognition benchmark harness.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_out=True):
        p.add_argument("--config", type=Path, help="experiment YAML file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. train.max_epochs=5")
        p.add_argument("--seed", type=int, help="global seed")
        if with_out:
            p.add_argument("--out", help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic class-per-folder dataset")
    common(p)
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", type=int)
    p.add_argument("--counts", help="comma-separated per-class counts (overrides --per-class)")
    p.add_argument("--image-size", type=int)

    for name, helptext in (("prepare", "scan, balance and split a dataset"), ("train", "fine-tune a model on prepared splits")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--workers", type=int, default=1, help="threads for image decoding")

    p = sub.add_parser("report", help="emit result tables, curves and baseline comparison")
    p.add_argument("runs", nargs="*", help="run record JSON files")
    p.add_argument("--out", default="report", help="output directory")
    p.add_argument("--baselines", type=Path, help="baseline JSON (default: bundled published values)")
    p.add_argument("--name", default="results", help="table file stem")
    p.add_argument("--title", help="table title")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "prepare":
            return cmd_prepare(args)
        if args.command == "train":
            return cmd_train(args)
        return cmd_report(args, parser)
    except ArslError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except json.JSONDecodeError as exc:
        print(f"error: {ParseError.__name__}: {exc}", file=sys.stderr)
        return ParseError.exit_code


if __name__ == "__main__":
    sys.exit(main())
