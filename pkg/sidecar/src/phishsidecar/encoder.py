"""Sequence-classification encoders.

Two providers sit behind one interface: any locally available pre-trained
checkpoint loaded through `transformers`, and a small built-in transformer
encoder over a hash-bucket vocabulary for environments without hosted model
access. The built-in keeps toy fine-tuning runs fast on CPU.
"""
from __future__ import annotations

import re
import zlib

import torch
from torch import nn

from .config import BUILTIN_MODEL

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

# Built-in encoder shape; small on purpose (CPU toy runs).
VOCAB_BUCKETS = 4096
HIDDEN = 64
LAYERS = 2
HEADS = 4
FEED_FORWARD = 128


def hash_tokenize(text: str, max_length: int) -> list[int]:
    """Map tokens to stable hash buckets in [1, VOCAB_BUCKETS); 0 is padding."""
    ids = [
        1 + zlib.crc32(token.encode("utf-8")) % (VOCAB_BUCKETS - 1)
        for token in _TOKEN_RE.findall(text.lower())
    ]
    return ids[:max_length] or [1 + zlib.crc32(b"") % (VOCAB_BUCKETS - 1)]


class TinyTransformerClassifier(nn.Module):
    """Two-layer transformer encoder with masked mean pooling."""

    def __init__(self, max_length: int):
        super().__init__()
        self.max_length = max_length
        self.embedding = nn.Embedding(VOCAB_BUCKETS, HIDDEN, padding_idx=0)
        self.positions = nn.Embedding(max_length, HIDDEN)
        layer = nn.TransformerEncoderLayer(
            d_model=HIDDEN, nhead=HEADS, dim_feedforward=FEED_FORWARD,
            batch_first=True, dropout=0.1,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=LAYERS,
                                             enable_nested_tensor=False)
        self.classifier = nn.Linear(HIDDEN, 2)

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        seq_len = input_ids.shape[1]
        pos = torch.arange(seq_len, device=input_ids.device).unsqueeze(0)
        hidden = self.embedding(input_ids) + self.positions(pos)
        hidden = self.encoder(hidden, src_key_padding_mask=~attention_mask.bool())
        mask = attention_mask.unsqueeze(-1).float()
        pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1.0)
        return self.classifier(pooled)


class BuiltinEncoder:
    """The built-in provider: hash tokenizer + TinyTransformerClassifier."""

    name = BUILTIN_MODEL

    def __init__(self, max_length: int):
        self.max_length = max_length
        self.model = TinyTransformerClassifier(max_length)

    def batch(self, texts: list[str]) -> tuple[torch.Tensor, torch.Tensor]:
        rows = [hash_tokenize(t, self.max_length) for t in texts]
        width = max(len(r) for r in rows)
        input_ids = torch.zeros((len(rows), width), dtype=torch.long)
        attention = torch.zeros((len(rows), width), dtype=torch.long)
        for i, row in enumerate(rows):
            input_ids[i, : len(row)] = torch.tensor(row, dtype=torch.long)
            attention[i, : len(row)] = 1
        return input_ids, attention

    def logits(self, texts: list[str]) -> torch.Tensor:
        input_ids, attention = self.batch(texts)
        return self.model(input_ids, attention)

    def state_dict(self) -> dict:
        return self.model.state_dict()

    def load_state_dict(self, state: dict) -> None:
        self.model.load_state_dict(state)


class HuggingFaceEncoder:
    """Adapter for a locally available pre-trained checkpoint."""

    def __init__(self, model_name: str, max_length: int):
        try:
            from transformers import AutoModelForSequenceClassification, AutoTokenizer
        except ImportError as exc:  # transformers is optional at runtime
            raise EncoderUnavailable(f"transformers not installed: {exc}") from exc
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model_name)
            self.model = AutoModelForSequenceClassification.from_pretrained(
                model_name, num_labels=2
            )
        except Exception as exc:
            raise EncoderUnavailable(
                f"cannot load checkpoint {model_name!r} (offline or unknown): {exc}"
            ) from exc
        self.name = model_name
        self.max_length = max_length

    def logits(self, texts: list[str]) -> torch.Tensor:
        encoded = self.tokenizer(
            texts, truncation=True, max_length=self.max_length,
            padding=True, return_tensors="pt",
        )
        return self.model(**encoded).logits

    def state_dict(self) -> dict:
        return self.model.state_dict()

    def load_state_dict(self, state: dict) -> None:
        self.model.load_state_dict(state)


class EncoderUnavailable(RuntimeError):
    """Requested base model cannot be instantiated in this environment."""


def make_encoder(base_model_name: str, max_length: int):
    if base_model_name == BUILTIN_MODEL:
        return BuiltinEncoder(max_length)
    return HuggingFaceEncoder(base_model_name, max_length)
