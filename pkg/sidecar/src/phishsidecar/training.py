"""Fine-tuning loop, checkpointing, and prediction over canonical record files.

Datasets arrive in the pipeline's canonical JSONL interchange format (one
object per line with at least id/text/label). Training is seeded end to end;
the final-epoch checkpoint is what gets served.
"""
from __future__ import annotations

import hashlib
import json
import random
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import torch
from torch import nn

from .config import EpochMetrics, RunManifest, TrainConfig
from .encoder import make_encoder


class DatasetError(ValueError):
    """A dataset file is unreadable or violates the record contract."""


@dataclass(frozen=True)
class LabeledText:
    id: str
    text: str
    label: int


def read_canonical(path: str | Path) -> list[LabeledText]:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"dataset file not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
                text = str(entry["text"])
                label = entry["label"]
                sample_id = str(entry["id"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: bad record: {exc}") from exc
            if label not in (0, 1):
                raise DatasetError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
            records.append(LabeledText(id=sample_id, text=text, label=int(label)))
    if not records:
        raise DatasetError(f"{path}: no records")
    return records


def fingerprint(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _batches(items: list, size: int):
    for start in range(0, len(items), size):
        yield items[start : start + size]


class Trainer:
    """One fine-tuning run: seeded shuffling, linear warmup, per-epoch metrics."""

    def __init__(self, config: TrainConfig, runs_dir: str | Path):
        self.config = config
        self.runs_dir = Path(runs_dir)

    def train(
        self,
        train_path: str | Path,
        val_path: str | Path,
        on_epoch: Callable[[int], None] | None = None,
        run_id: str | None = None,
    ) -> tuple[RunManifest, "Predictor"]:
        config = self.config
        train_set = read_canonical(train_path)
        val_set = read_canonical(val_path)

        run_id = run_id or uuid.uuid4().hex[:12]
        run_dir = self.runs_dir / run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(
            run_id=run_id,
            config=config,
            dataset_fingerprints={
                "train": fingerprint(train_path),
                "val": fingerprint(val_path),
            },
        )
        manifest.write(run_dir / "manifest.json")

        torch.manual_seed(config.seed)
        encoder = make_encoder(config.base_model_name, config.max_sequence_length)
        optimizer = torch.optim.AdamW(
            encoder.model.parameters(),
            lr=config.learning_rate,
            weight_decay=config.weight_decay,
        )
        steps_per_epoch = max(1, (len(train_set) + config.batch_size - 1) // config.batch_size)
        total_steps = steps_per_epoch * config.epochs
        warmup_steps = max(1, round(config.warmup_ratio * total_steps))

        def lr_lambda(step: int) -> float:
            if step < warmup_steps:
                return (step + 1) / warmup_steps
            return 1.0

        scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lr_lambda)
        loss_fn = nn.CrossEntropyLoss()
        shuffler = random.Random(config.seed)

        for epoch in range(1, config.epochs + 1):
            if on_epoch:
                on_epoch(epoch)
            encoder.model.train()
            order = list(range(len(train_set)))
            shuffler.shuffle(order)
            epoch_loss = 0.0
            for batch_indices in _batches(order, config.batch_size):
                batch = [train_set[i] for i in batch_indices]
                optimizer.zero_grad()
                logits = encoder.logits([r.text for r in batch])
                loss = loss_fn(logits, torch.tensor([r.label for r in batch]))
                loss.backward()
                optimizer.step()
                scheduler.step()
                epoch_loss += loss.item() * len(batch)
            training_loss = epoch_loss / len(train_set)
            validation_loss = self._eval_loss(encoder, val_set, loss_fn)
            manifest.epoch_metrics.append(
                EpochMetrics(epoch=epoch, training_loss=training_loss,
                             validation_loss=validation_loss)
            )
            manifest.write(run_dir / "manifest.json")

        checkpoint_path = run_dir / "checkpoint.pt"
        torch.save(
            {
                "state_dict": encoder.state_dict(),
                "config": config.to_dict(),
                "model_identifier": encoder.name,
            },
            checkpoint_path,
        )
        manifest.checkpoint_path = str(checkpoint_path)
        manifest.status = "completed"
        manifest.write(run_dir / "manifest.json")
        return manifest, Predictor(encoder)

    def _eval_loss(self, encoder, val_set: list[LabeledText], loss_fn) -> float:
        encoder.model.eval()
        total = 0.0
        with torch.no_grad():
            for batch in _batches(val_set, self.config.batch_size):
                logits = encoder.logits([r.text for r in batch])
                loss = loss_fn(logits, torch.tensor([r.label for r in batch]))
                total += loss.item() * len(batch)
        return total / len(val_set)


class Predictor:
    """Serves a trained checkpoint; pure at fixed weights."""

    def __init__(self, encoder):
        self.encoder = encoder
        self.encoder.model.eval()

    @classmethod
    def load(cls, checkpoint_path: str | Path) -> "Predictor":
        payload = torch.load(checkpoint_path, map_location="cpu", weights_only=False)
        config = TrainConfig.from_dict(payload["config"])
        encoder = make_encoder(payload["model_identifier"], config.max_sequence_length)
        encoder.load_state_dict(payload["state_dict"])
        return cls(encoder)

    def predict(self, texts: list[str], batch_size: int = 32) -> list[tuple[int, float]]:
        """(label, positive-class probability) per input, input order.

        Each distinct text is scored once per call, so duplicate inputs get
        bit-identical results regardless of batch-position float effects.
        """
        if not texts:
            return []
        unique = list(dict.fromkeys(texts))
        scored: dict[str, tuple[int, float]] = {}
        with torch.no_grad():
            for batch in _batches(unique, batch_size):
                probs = torch.softmax(self.encoder.logits(batch), dim=-1)[:, 1]
                for text, p in zip(batch, probs.tolist()):
                    scored[text] = (1 if p >= 0.5 else 0, float(p))
        return [scored[t] for t in texts]
