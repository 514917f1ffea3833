"""Training configuration, per-epoch metrics, and run manifests."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_BASE_MODEL = "microsoft/deberta-v3-base"
BUILTIN_MODEL = "builtin:tiny"


@dataclass(frozen=True)
class TrainConfig:
    base_model_name: str = DEFAULT_BASE_MODEL
    learning_rate: float = 1e-7
    warmup_ratio: float = 0.01
    weight_decay: float = 0.01
    epochs: int = 5
    max_sequence_length: int = 512
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0.0 <= self.warmup_ratio <= 1.0):
            raise ValueError("warmup_ratio must be in [0, 1]")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.max_sequence_length < 1:
            raise ValueError("max_sequence_length must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int  # 1-based
    training_loss: float
    validation_loss: float

    def __post_init__(self) -> None:
        if self.training_loss < 0 or self.validation_loss < 0:
            raise ValueError("losses must be >= 0")

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "training_loss": self.training_loss,
            "validation_loss": self.validation_loss,
        }


@dataclass
class RunManifest:
    run_id: str
    config: TrainConfig
    dataset_fingerprints: dict[str, str]  # {"train": sha256, "val": sha256}
    epoch_metrics: list[EpochMetrics] = field(default_factory=list)
    checkpoint_path: str | None = None
    status: str = "running"  # running | completed | failed
    error: str | None = None

    def to_dict(self) -> dict:
        d: dict = {
            "run_id": self.run_id,
            "status": self.status,
            "config": self.config.to_dict(),
            "dataset_fingerprints": dict(self.dataset_fingerprints),
            "epoch_metrics": [m.to_dict() for m in self.epoch_metrics],
        }
        if self.checkpoint_path is not None:
            d["checkpoint_path"] = self.checkpoint_path
        if self.error is not None:
            d["error"] = self.error
        return d

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
