"""Synthetic email generation with human-in-the-loop grading.

Generated candidates enter a pending pool with a provisional label; a human
grader accepts or rejects each one (regrades supersede by timestamp). Only
accepted samples are partitioned into the fine-tuning pool and the held-out
test pool.
"""
from __future__ import annotations

import datetime as dt
import json
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .records import Category, Sample

PLACEHOLDER_CONSTRAINT = (
    "Never use bracketed placeholders such as [Your Name] or [Company]; invent "
    "concrete, realistic names, organizations, and details instead."
)
LENGTH_CONSTRAINT = (
    "Write a complete email of at least three full paragraphs, not a short stub."
)
DOMAIN_VARIETY_CONSTRAINT = (
    "Vary the subject domain: finance, logistics, HR, healthcare, retail, travel, "
    "and similar areas, not only IT-security topics."
)
URGENCY_CONSTRAINT = (
    "Calibrate urgency per email: some messages should press the reader hard, "
    "others should be patient and mundane; do not make every message urgent."
)
TRAINING_MATERIAL_FRAMING = (
    "These emails are training material for teaching employees to tell suspicious-"
    "looking but harmless messages apart from real phishing."
)


class Tactic(Enum):
    BRAND_IMPERSONATION = "brand_impersonation"
    FAKE_URGENCY = "fake_urgency"
    FALSE_NOTIFICATION = "false_notification"
    SUSPICIOUS_BUT_BENIGN = "suspicious_but_benign"


_TACTIC_LINES = {
    Tactic.BRAND_IMPERSONATION: (
        "Each email impersonates a well-known brand or a high-profile person the "
        "recipient would plausibly trust."
    ),
    Tactic.FAKE_URGENCY: (
        "Each email manufactures time pressure: a deadline, a suspension, a fee, "
        "or a missed delivery that demands action now."
    ),
    Tactic.FALSE_NOTIFICATION: (
        "Each email is a fabricated notification about an account update or "
        "activity that asks the recipient to log in to review it."
    ),
    Tactic.SUSPICIOUS_BUT_BENIGN: (
        "Each email looks suspicious at a glance (unexpected requests, links, "
        "generic greetings) yet is entirely legitimate and harmless."
    ),
}


class GradingDecision(Enum):
    ACCEPT = "accept"
    REJECT = "reject"


@dataclass(frozen=True)
class GenerationSpec:
    target_label: int
    tactic: Tactic
    count: int

    def __post_init__(self) -> None:
        if self.target_label not in (0, 1):
            raise ValueError("target_label must be 0 or 1")
        if self.count < 1:
            raise ValueError("count must be positive")
        benign_tactic = self.tactic is Tactic.SUSPICIOUS_BUT_BENIGN
        if benign_tactic != (self.target_label == 0):
            raise ValueError("suspicious_but_benign is the tactic for label 0, and only for label 0")


@dataclass(frozen=True)
class GradingRecord:
    sample_id: str
    decision: GradingDecision
    confirmed_label: int | None
    grader_note: str
    timestamp: str  # ISO-8601, UTC

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "decision": self.decision.value,
            "confirmed_label": self.confirmed_label,
            "grader_note": self.grader_note,
            "timestamp": self.timestamp,
        }


@dataclass(frozen=True)
class SyntheticPartition:
    fine_tune_pool: tuple[Sample, ...]
    held_out_test: tuple[Sample, ...]


def build_generation_prompt(spec: GenerationSpec) -> str:
    """Deterministic generation prompt for one batch of synthetic emails."""
    kind = "phishing" if spec.target_label == 1 else "legitimate"
    lines = [
        f"Write {spec.count} distinct {kind} email{'s' if spec.count != 1 else ''}.",
        _TACTIC_LINES[spec.tactic],
        PLACEHOLDER_CONSTRAINT,
        LENGTH_CONSTRAINT,
        DOMAIN_VARIETY_CONSTRAINT,
    ]
    if spec.target_label == 1:
        lines.append(URGENCY_CONSTRAINT)
    else:
        lines.append(TRAINING_MATERIAL_FRAMING)
    lines.append(
        "Separate the emails with a line containing only '---'. Output nothing "
        "except the emails themselves."
    )
    return "\n\n".join(lines) + "\n"


@dataclass(frozen=True)
class PendingSample:
    sample: Sample
    flagged: bool  # contains bracketed placeholder text; needs grader attention


def ingest_generated(
    responses: list[str], spec: GenerationSpec, start_index: int = 0
) -> tuple[list[PendingSample], int]:
    """Turn raw generated texts into pending samples with provisional labels.

    Returns (pending samples, dropped-empty count). Texts holding bracketed
    placeholders are flagged for the grader, not rejected.
    """
    pending: list[PendingSample] = []
    dropped = 0
    index = start_index
    for text in responses:
        if not text or not text.strip():
            dropped += 1
            continue
        sample = Sample(
            id=f"syn-{index:05d}",
            text=text.strip(),
            label=spec.target_label,
            category=Category.SYNTHETIC,
            source=f"synthetic:{spec.tactic.value}",
        )
        pending.append(PendingSample(sample=sample, flagged=_has_placeholder(text)))
        index += 1
    return pending, dropped


def _has_placeholder(text: str) -> bool:
    start = text.find("[")
    while start != -1:
        end = text.find("]", start + 1)
        if end == -1:
            return False
        if text[start + 1 : end].strip():
            return True
        start = text.find("[", start + 1)
    return False


class GradingStore:
    """Pending pool plus append-only grading journal.

    Pending samples live in a canonical record file (with a `flagged` extra
    key); grades append to a separate journal where the latest timestamp wins.
    """

    def __init__(self, pending_path: str | Path, journal_path: str | Path):
        self.pending_path = Path(pending_path)
        self.journal_path = Path(journal_path)
        self._pending: dict[str, PendingSample] = {}
        self._grades: dict[str, GradingRecord] = {}
        self._finalized: set[str] = set()
        self._load()

    def _load(self) -> None:
        if self.pending_path.exists():
            with self.pending_path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    entry = json.loads(line)
                    sample = Sample.from_dict(entry)
                    self._pending[sample.id] = PendingSample(sample, bool(entry.get("flagged")))
        if self.journal_path.exists():
            with self.journal_path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    entry = json.loads(line)
                    if entry.get("event") == "finalized":
                        self._finalized.update(entry["sample_ids"])
                        continue
                    record = GradingRecord(
                        sample_id=entry["sample_id"],
                        decision=GradingDecision(entry["decision"]),
                        confirmed_label=entry.get("confirmed_label"),
                        grader_note=entry.get("grader_note", ""),
                        timestamp=entry["timestamp"],
                    )
                    current = self._grades.get(record.sample_id)
                    # Append order breaks timestamp ties: later lines win.
                    if current is None or record.timestamp >= current.timestamp:
                        self._grades[record.sample_id] = record

    def add_pending(self, pending: list[PendingSample]) -> None:
        self.pending_path.parent.mkdir(parents=True, exist_ok=True)
        with self.pending_path.open("a", encoding="utf-8") as fh:
            for item in pending:
                if item.sample.id in self._pending:
                    raise ValueError(f"sample {item.sample.id!r} already pending")
                entry = item.sample.to_dict()
                entry["flagged"] = item.flagged
                fh.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")
                self._pending[item.sample.id] = item

    @property
    def next_index(self) -> int:
        return len(self._pending)

    def ungraded(self) -> list[PendingSample]:
        return [p for sid, p in self._pending.items() if sid not in self._grades]

    def latest_grade(self, sample_id: str) -> GradingRecord | None:
        return self._grades.get(sample_id)

    def grade(
        self,
        sample_id: str,
        decision: GradingDecision,
        confirmed_label: int | None = None,
        note: str = "",
        timestamp: str | None = None,
    ) -> GradingRecord:
        if sample_id not in self._pending:
            raise KeyError(f"unknown sample {sample_id!r}")
        if sample_id in self._finalized:
            raise ValueError(f"sample {sample_id!r} already finalized; regrade not allowed")
        if decision is GradingDecision.ACCEPT:
            if confirmed_label not in (0, 1):
                raise ValueError("accepted samples need a confirmed label of 0 or 1")
        else:
            confirmed_label = None
        record = GradingRecord(
            sample_id=sample_id,
            decision=decision,
            confirmed_label=confirmed_label,
            grader_note=note,
            timestamp=timestamp or dt.datetime.now(dt.timezone.utc).isoformat(),
        )
        self.journal_path.parent.mkdir(parents=True, exist_ok=True)
        with self.journal_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
        current = self._grades.get(sample_id)
        if current is None or record.timestamp >= current.timestamp:
            self._grades[sample_id] = record
        return record

    def accepted(self) -> list[Sample]:
        """Accepted samples with their grader-confirmed labels applied."""
        out = []
        for sid, pending in self._pending.items():
            grade = self._grades.get(sid)
            if grade is None or grade.decision is not GradingDecision.ACCEPT:
                continue
            sample = pending.sample
            if sample.label != grade.confirmed_label:
                sample = Sample(
                    id=sample.id,
                    text=sample.text,
                    label=int(grade.confirmed_label),  # type: ignore[arg-type]
                    category=sample.category,
                    source=sample.source,
                    date=sample.date,
                )
            out.append(sample)
        return out

    def mark_finalized(self, sample_ids: list[str]) -> None:
        with self.journal_path.open("a", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {
                        "event": "finalized",
                        "sample_ids": sample_ids,
                        "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(),
                    }
                )
                + "\n"
            )
        self._finalized.update(sample_ids)


def finalize_partition(accepted: list[Sample], seed: int) -> SyntheticPartition:
    """Split accepted samples near-evenly per class into the fine-tuning pool
    and the held-out test pool; odd remainders go to the fine-tuning pool."""
    if not accepted:
        raise ValueError("cannot partition an empty accepted set")
    rng = random.Random(seed)
    fine_ids: set[str] = set()
    for label in (0, 1):
        members = [s.id for s in accepted if s.label == label]
        rng.shuffle(members)
        take = len(members) - len(members) // 2  # ceil(n/2)
        fine_ids.update(members[:take])
    fine = tuple(s for s in accepted if s.id in fine_ids)
    held = tuple(s for s in accepted if s.id not in fine_ids)
    return SyntheticPartition(fine_tune_pool=fine, held_out_test=held)
