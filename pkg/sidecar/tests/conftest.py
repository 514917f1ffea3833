from __future__ import annotations

import json
from pathlib import Path

import pytest

from phishsidecar.config import BUILTIN_MODEL, TrainConfig

SCHEMA_DIR = Path(__file__).parent.parent.parent / "schemas"

PHISH_TEXTS = [f"win money now claim your cash prize today {i}" for i in range(10)]
BENIGN_TEXTS = [f"meeting notes agenda and minutes attached {i}" for i in range(10)]


def write_canonical(path: Path, rows: list[tuple[str, str, int]]) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for sample_id, text, label in rows:
            fh.write(json.dumps({"id": sample_id, "text": text, "label": label}) + "\n")
    return path


@pytest.fixture
def toy_dataset(tmp_path) -> tuple[Path, Path]:
    """Trivially separable 20-sample set; val mirrors train."""
    rows = [(f"p{i}", text, 1) for i, text in enumerate(PHISH_TEXTS)]
    rows += [(f"b{i}", text, 0) for i, text in enumerate(BENIGN_TEXTS)]
    train = write_canonical(tmp_path / "train.jsonl", rows)
    val = write_canonical(tmp_path / "val.jsonl", rows)
    return train, val


def toy_config(**overrides) -> TrainConfig:
    defaults = dict(
        base_model_name=BUILTIN_MODEL,
        learning_rate=5e-3,  # elevated: the defaults target full-scale runs
        epochs=3,
        max_sequence_length=64,
        batch_size=8,
        seed=42,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


@pytest.fixture
def schema_dir() -> Path:
    return SCHEMA_DIR


def load_schema(name: str) -> dict:
    return json.loads((SCHEMA_DIR / name).read_text(encoding="utf-8"))
