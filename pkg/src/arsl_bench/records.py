"""Training configuration and run records, plus their JSON form."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, ParseError


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    base_lr: float = 0.001
    lr_gamma: float = 0.1
    lr_step_epochs: int = 10
    early_stop_patience: int = 5
    max_epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.base_lr < 0:
            raise ConfigError("base_lr must be >= 0")
        if not 0 < self.lr_gamma < 1:
            raise ConfigError("lr_gamma must lie in (0, 1)")
        if self.lr_step_epochs < 1:
            raise ConfigError("lr_step_epochs must be >= 1")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_acc: float
    duration_s: float = 0.0


@dataclass
class RunRecord:
    """Everything one training run produced.

    ``train_acc``/``val_acc``/``test_acc`` are measured after restoring the
    best-validation weights; ``last_train_acc``/``last_val_acc`` are the
    values of the final epoch actually trained.
    """

    config: TrainConfig
    model: dict
    dataset: str
    history: list[EpochRecord]
    best_epoch: int
    stopped_early: bool
    train_acc: float
    val_acc: float
    test_acc: float
    last_train_acc: float
    last_val_acc: float
    total_train_time_s: float
    extra: dict = field(default_factory=dict)

    @property
    def backbone_id(self) -> str:
        return self.model["backbone_id"]

    @property
    def seed(self) -> int:
        # Files are keyed by the experiment's global seed when there is one.
        return self.extra.get("global_seed", self.model.get("seed", self.config.seed))

    def file_name(self) -> str:
        return f"run_{self.backbone_id}_{self.dataset}_{self.seed}.json"

    def history_without_timing(self) -> list[dict]:
        return [{k: v for k, v in asdict(h).items() if k != "duration_s"} for h in self.history]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["history"] = [asdict(h) for h in self.history]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        try:
            names = {f.name for f in fields(cls)}
            unknown = set(data) - names
            if unknown:
                raise ParseError(f"unknown run-record keys: {sorted(unknown)}")
            kwargs = dict(data)
            kwargs["config"] = TrainConfig(**data["config"])
            kwargs["history"] = [EpochRecord(**h) for h in data["history"]]
            return cls(**kwargs)
        except ParseError:
            raise
        except (KeyError, TypeError, ValueError, ConfigError) as exc:
            raise ParseError(f"malformed run record: {exc}") from exc

    def save(self, directory) -> Path:
        path = Path(directory) / self.file_name()
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "RunRecord":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"cannot read run record {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ParseError(f"{path}: run record must be a JSON object")
        return cls.from_dict(data)
