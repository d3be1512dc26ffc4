"""Accuracy, confusion counts, result tables and accuracy curves.

Overall accuracy for C > 2 classes is correct / N. The binary
(TP + TN) / (TP + TN + FP + FN) form is available per class through
:meth:`ConfusionCounts.one_vs_rest_accuracy`.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DatasetKeyError, LengthMismatchError, ParseError
from .model_zoo import DISPLAY_NAMES, BackboneId
from .records import EpochRecord, RunRecord, TrainConfig

# Dataset labels as printed in the result tables.
DATASET_LABELS = {"arsl2018": "ArASL2018", "aasl": "AASL"}
FULL_MODE_TOLERANCE_PP = 1.0


def _as_numpy(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x)


def predict_labels(logits) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest index."""
    arr = _as_numpy(logits)
    if arr.ndim == 1:
        arr = arr[None, :]
    return np.argmax(arr, axis=1).astype(np.int64)


def _check_pair(predictions, labels):
    p = _as_numpy(predictions).astype(np.int64).ravel()
    y = _as_numpy(labels).astype(np.int64).ravel()
    if p.shape != y.shape:
        raise LengthMismatchError(f"{p.size} predictions vs {y.size} labels")
    if p.size == 0:
        raise LengthMismatchError("need at least one prediction")
    return p, y


def accuracy_fraction(predictions, labels) -> Fraction:
    p, y = _check_pair(predictions, labels)
    return Fraction(int(np.count_nonzero(p == y)), int(p.size))


def accuracy(predictions, labels) -> float:
    return float(accuracy_fraction(predictions, labels))


@dataclass(frozen=True)
class ConfusionCounts:
    matrix: np.ndarray  # matrix[true, predicted]

    @property
    def n(self) -> int:
        return int(self.matrix.sum())

    @property
    def tp(self) -> np.ndarray:
        return np.diag(self.matrix).copy()

    @property
    def fp(self) -> np.ndarray:
        return self.matrix.sum(axis=0) - self.tp

    @property
    def fn(self) -> np.ndarray:
        return self.matrix.sum(axis=1) - self.tp

    @property
    def tn(self) -> np.ndarray:
        return self.n - self.tp - self.fp - self.fn

    def accuracy_fraction(self) -> Fraction:
        return Fraction(int(np.trace(self.matrix)), self.n)

    def one_vs_rest_accuracy(self) -> list[float]:
        return [float(Fraction(int(a), self.n)) for a in self.tp + self.tn]


def confusion(predictions, labels, num_classes: int) -> ConfusionCounts:
    p, y = _check_pair(predictions, labels)
    if p.min() < 0 or y.min() < 0 or p.max() >= num_classes or y.max() >= num_classes:
        raise ValueError(f"labels and predictions must lie in [0, {num_classes})")
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (y, p), 1)
    return ConfusionCounts(m)


@dataclass(frozen=True)
class EvalReport:
    split: str
    accuracy: float
    confusion: ConfusionCounts
    n: int


def evaluate_predictions(predictions, labels, num_classes: int, split: str = "test") -> EvalReport:
    cm = confusion(predictions, labels, num_classes)
    return EvalReport(split, float(cm.accuracy_fraction()), cm, cm.n)


# -- tables -----------------------------------------------------------------

RESULT_COLUMNS = ("Train Acc", "Val Acc", "Test Acc", "Train Time")


def format_pct(fraction: float) -> str:
    return f"{100 * fraction:.2f}%"


def format_minutes(seconds: float) -> str:
    return f"{seconds / 60:.2f} minutes"


def _model_label(record: RunRecord) -> str:
    try:
        return DISPLAY_NAMES[BackboneId.parse(record.backbone_id)]
    except (KeyError, ValueError):
        return str(record.backbone_id)


def _pct(cell: str) -> float:
    return float(cell.rstrip("%"))


def _minutes(cell: str) -> float:
    return float(cell.split()[0])


def _flag_best(values: list[str], key, higher_is_better: bool) -> list[bool]:
    # Compared at display precision, so rows that print the same tie.
    nums = [key(v) for v in values]
    best = max(nums) if higher_is_better else min(nums)
    return [v == best for v in nums]


@dataclass
class TableDocument:
    header: list[str]
    rows: list[list[str]]
    flags: list[list[bool]]
    title: str = ""
    note: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header + ["Best"])
        for row, flags in zip(self.rows, self.flags):
            best = ";".join(h for h, f in zip(self.header, flags) if f)
            w.writerow(row + [best])
        return buf.getvalue()

    def to_markdown(self) -> str:
        cells = [
            [f"**{c}**" if f else c for c, f in zip(row, flags)] for row, flags in zip(self.rows, self.flags)
        ]
        widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h) for i, h in enumerate(self.header)]

        def aligned(r):
            return "| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |"

        lines = []
        if self.title:
            lines += [f"**{self.title}**", ""]
        lines.append(aligned(self.header))
        lines.append("|" + "|".join("-" * (w + 2) for w in widths) + "|")
        lines += [aligned(r) for r in cells]
        if self.note:
            lines += ["", self.note]
        return "\n".join(lines) + "\n"

    def write(self, out_dir, name: str) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, md_path = out / f"{name}.csv", out / f"{name}.md"
        csv_path.write_text(self.to_csv(), encoding="utf-8")
        md_path.write_text(self.to_markdown(), encoding="utf-8")
        return csv_path, md_path


def emit_results_table(run_records: Sequence[RunRecord], title: str = "") -> TableDocument:
    """One row per run: Model, Train/Val/Test Acc (%), Train Time (minutes).

    The best value of every numeric column is flagged (highest accuracy,
    shortest time); ties are all flagged.
    """
    if not run_records:
        raise ValueError("need at least one run record")
    rows = [
        [
            _model_label(r),
            format_pct(r.train_acc),
            format_pct(r.val_acc),
            format_pct(r.test_acc),
            format_minutes(r.total_train_time_s),
        ]
        for r in run_records
    ]
    cols = [
        _flag_best([r[1] for r in rows], _pct, True),
        _flag_best([r[2] for r in rows], _pct, True),
        _flag_best([r[3] for r in rows], _pct, True),
        _flag_best([r[4] for r in rows], _minutes, False),
    ]
    flags = [[False] + [c[i] for c in cols] for i in range(len(rows))]
    note = "Train/Val/Test Acc use the best-validation weights; last-epoch values are in each run record."
    return TableDocument(["Model", *RESULT_COLUMNS], rows, flags, title=title, note=note)


def parse_results_csv(text: str) -> list[dict]:
    """Inverse of :meth:`TableDocument.to_csv` for result tables."""
    out = []
    try:
        for row in csv.DictReader(io.StringIO(text)):
            out.append(
                {
                    "model": row["Model"],
                    "train_acc": float(row["Train Acc"].rstrip("%")) / 100,
                    "val_acc": float(row["Val Acc"].rstrip("%")) / 100,
                    "test_acc": float(row["Test Acc"].rstrip("%")) / 100,
                    "train_time_min": float(row["Train Time"].split()[0]),
                    "best": [c for c in row["Best"].split(";") if c],
                }
            )
    except (KeyError, ValueError, AttributeError) as exc:
        raise ParseError(f"malformed results table: {exc}") from exc
    return out


# -- curves -----------------------------------------------------------------

CURVE_HEADER = ("epoch", "train_acc", "val_acc", "lr")


def curve_csv(run_record: RunRecord) -> str:
    if not run_record.history:
        raise ValueError("run record has no history")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for h in run_record.history:
        # repr() round-trips floats exactly.
        w.writerow([h.epoch, repr(h.train_acc), repr(h.val_acc), repr(h.lr)])
    return buf.getvalue()


def parse_curve_csv(text: str) -> list[tuple[int, float, float, float]]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CURVE_HEADER:
        raise ParseError("not an accuracy-curve file")
    return [(int(e), float(t), float(v), float(lr)) for e, t, v, lr in rows[1:]]


def emit_accuracy_curves(run_record: RunRecord, out_dir, stem: str | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.curve.csv`` and a ``<stem>.curve.png`` line plot."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or Path(run_record.file_name()).stem
    csv_path = out / f"{stem}.curve.csv"
    png_path = out / f"{stem}.curve.png"
    csv_path.write_text(curve_csv(run_record), encoding="utf-8")

    epochs = [h.epoch + 1 for h in run_record.history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [h.train_acc for h in run_record.history], marker="o", label="Training accuracy")
    ax.plot(epochs, [h.val_acc for h in run_record.history], marker="s", label="Validation accuracy")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Accuracy")
    ax.set_title(f"{_model_label(run_record)} on {DATASET_LABELS.get(run_record.dataset, run_record.dataset)}")
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(png_path, dpi=100)
    plt.close(fig)
    return csv_path, png_path


# -- published numbers ------------------------------------------------------

@dataclass(frozen=True)
class BaselineEntry:
    study: str
    dataset: str
    accuracy: float  # percent, as published


def _read_json_resource(name: str) -> dict:
    return json.loads(resources.files("arsl_bench").joinpath("data", name).read_text(encoding="utf-8"))


def load_baselines(path=None) -> list[BaselineEntry]:
    """Read ``{study: {dataset, accuracy}}``; defaults to the bundled file."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8")) if path else _read_json_resource("baselines.json")
        return [BaselineEntry(study, v["dataset"], float(v["accuracy"])) for study, v in raw.items()]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, AttributeError, ValueError) as exc:
        raise ParseError(f"malformed baseline file {path}: {exc}") from exc


def compare_with_baselines(run_records, baselines: Sequence[BaselineEntry] | None = None) -> TableDocument:
    """Published accuracies next to ours, grouped by dataset.

    The best accuracy inside each dataset group is flagged.
    """
    if isinstance(run_records, RunRecord):
        run_records = [run_records]
    baselines = list(baselines) if baselines is not None else load_baselines()
    groups: dict[str, list[tuple[str, float]]] = {}
    for b in baselines:
        groups.setdefault(b.dataset, []).append((b.study, b.accuracy))
    for r in run_records:
        label = DATASET_LABELS.get(r.dataset)
        if label is None or label not in groups:
            raise DatasetKeyError(f"no baselines for dataset {r.dataset!r}; known: {sorted(groups)}")
        groups[label].append((f"Our Approach ({_model_label(r)})", round(100 * r.test_acc, 2)))

    rows, flags = [], []
    for dataset, entries in groups.items():
        best = max(round(acc, 2) for _, acc in entries)
        for study, acc in entries:
            rows.append([study, dataset, f"{acc:.2f}%"])
            flags.append([False, False, round(acc, 2) == best])
    return TableDocument(["Study", "Dataset", "Test Accuracy"], rows, flags)


def published_reference_runs(dataset: str) -> list[RunRecord]:
    """Run records holding the published per-backbone results for ``dataset``."""
    table = _read_json_resource("published_results.json")
    if dataset not in table:
        raise DatasetKeyError(f"no published results for {dataset!r}")
    runs = []
    for row in table[dataset]:
        train, val, test = (row[k] / 100 for k in ("train_acc", "val_acc", "test_acc"))
        runs.append(
            RunRecord(
                config=TrainConfig(),
                model={"backbone_id": row["backbone_id"]},
                dataset=dataset,
                history=[EpochRecord(0, 0.001, 0.0, train, val)],
                best_epoch=0,
                stopped_early=False,
                train_acc=train,
                val_acc=val,
                test_acc=test,
                last_train_acc=train,
                last_val_acc=val,
                total_train_time_s=row["train_time_min"] * 60,
                extra={"source": "published"},
            )
        )
    return runs


def full_mode_deviation(run_record: RunRecord) -> float:
    """Test-accuracy gap to the published figure, in percentage points."""
    for ref in published_reference_runs(run_record.dataset):
        if ref.backbone_id == run_record.backbone_id:
            return 100 * (run_record.test_acc - ref.test_acc)
    raise DatasetKeyError(f"no published result for {run_record.backbone_id} on {run_record.dataset}")
