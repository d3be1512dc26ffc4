"""Experiment configuration: a strict YAML document.

Unknown keys anywhere abort parsing, so a typo can never silently fall back
to a default hyperparameter. Stage seeds are not configurable on their own;
they derive from the global ``seed``:

    balancing = seed, split = seed + 1, model init = seed + 2, shuffle = seed + 3
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from .dataset_ingest import DatasetKind
from .errors import ConfigError
from .model_zoo import BackboneId, FreezePolicy
from .preprocess import PreprocessConfig
from .records import TrainConfig

SEED_OFFSETS = {"balance": 0, "split": 1, "model": 2, "shuffle": 3}


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 8
    per_class: int | list[int] = 50
    image_size: int = 64
    class_names: list[str] | None = None


@dataclass(frozen=True)
class DatasetSection:
    kind: DatasetKind = DatasetKind.SYNTHETIC
    root: str = "data/synthetic"
    synthetic: SyntheticSpec | None = None


@dataclass(frozen=True)
class ModelSection:
    backbone_id: BackboneId = BackboneId.TINY_CNN
    unfreeze_depth: int = 1
    weights: str | None = None
    head_hidden: tuple[int, ...] = ()
    standardize: bool = False

    def __post_init__(self):
        FreezePolicy(self.unfreeze_depth)

    @property
    def freeze_policy(self) -> FreezePolicy:
        return FreezePolicy(self.unfreeze_depth)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs"
    seed: int = 0

    def stage_seed(self, stage: str) -> int:
        return self.seed + SEED_OFFSETS[stage]

    def preprocess_config(self) -> PreprocessConfig:
        return replace(self.preprocess, seed=self.stage_seed("balance"))

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.stage_seed("shuffle"))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dataset"]["kind"] = self.dataset.kind.value
        d["model"]["backbone_id"] = self.model.backbone_id.value
        d["model"]["head_hidden"] = list(self.model.head_hidden)
        pre = d["preprocess"]
        pre.pop("seed")
        pre["balance_strategy"] = self.preprocess.balance_strategy.value
        pre["channel_policy"] = self.preprocess.channel_policy.value
        pre["image_size"] = list(self.preprocess.image_size)
        pre["split_ratios"] = list(self.preprocess.split_ratios)
        d["train"].pop("seed")
        return d


def _strict(cls, data: Any, where: str, exclude=()) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    allowed = {f.name for f in fields(cls)} - set(exclude)
    unknown = sorted(set(data) - allowed)
    if unknown:
        hint = " (stage seeds derive from the global seed)" if "seed" in unknown else ""
        raise ConfigError(f"{where}: unknown key(s) {unknown}{hint}")
    return dict(data)


def _build(cls, data, where, exclude=()):
    kwargs = _strict(cls, data, where, exclude)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(data: dict | None) -> ExperimentConfig:
    raw = _strict(ExperimentConfig, data or {}, "config")
    try:
        ds = _strict(DatasetSection, raw.get("dataset"), "dataset")
        if "kind" in ds:
            ds["kind"] = DatasetKind.parse(ds["kind"])
        if ds.get("synthetic") is not None:
            ds["synthetic"] = _build(SyntheticSpec, ds["synthetic"], "dataset.synthetic")
        if "root" in ds:
            ds["root"] = str(ds["root"])
        dataset = DatasetSection(**ds)

        pre = _strict(PreprocessConfig, raw.get("preprocess"), "preprocess", exclude=("seed",))
        for key in ("image_size", "split_ratios"):
            if key in pre:
                pre[key] = tuple(pre[key])
        preprocess = _build(PreprocessConfig, pre, "preprocess", exclude=("seed",))

        mdl = _strict(ModelSection, raw.get("model"), "model")
        if "backbone_id" in mdl:
            mdl["backbone_id"] = BackboneId.parse(mdl["backbone_id"])
        if "head_hidden" in mdl:
            mdl["head_hidden"] = tuple(int(v) for v in mdl["head_hidden"] or ())
        if mdl.get("weights") is not None:
            mdl["weights"] = str(mdl["weights"])
        model = ModelSection(**mdl)

        train = _build(TrainConfig, raw.get("train"), "train", exclude=("seed",))
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    except Exception as exc:  # FreezePolicyError and friends
        raise ConfigError(str(exc)) from exc

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    return ExperimentConfig(dataset, preprocess, model, train, str(raw.get("output_dir", "runs")), seed)


def apply_override(data: dict, assignment: str) -> None:
    """Apply ``a.b.c=value`` to a raw config mapping; value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like key.path=value")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        child = node.setdefault(p, {})
        if not isinstance(child, dict):
            raise ConfigError(f"override {key!r}: {p!r} is not a section")
        node = child
    try:
        node[parts[-1]] = yaml.safe_load(value)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {key!r}: cannot parse value {value!r}") from exc


def load_config(path=None, overrides=()) -> ExperimentConfig:
    data: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping at top level")
    for o in overrides:
        apply_override(data, o)
    return parse_config(data)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)
