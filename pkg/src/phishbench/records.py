"""Core record types and the canonical line-delimited interchange format.

Every stage of the pipeline exchanges datasets as JSON-lines files with the
fields (id, text, label, category, source, date). Unknown keys in a record
line are ignored so sidecar files may carry extra annotations.
"""
from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field, replace
from email.utils import parsedate_to_datetime
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator


class Category(Enum):
    TEXT = "text"
    URL = "url"
    WEB = "web"
    SYNTHETIC = "synthetic"


class RecordError(ValueError):
    """A record or record file violated the interchange contract."""


def parse_date(raw: str | None) -> dt.date | None:
    """Parse an ISO-8601 or RFC-2822 date string; None when unparseable.

    Dates are auxiliary (temporal analysis only), so a bad date never
    invalidates a sample.
    """
    if raw is None:
        return None
    raw = raw.strip()
    if not raw:
        return None
    try:
        return dt.date.fromisoformat(raw)
    except ValueError:
        pass
    try:
        return dt.datetime.fromisoformat(raw).date()
    except ValueError:
        pass
    try:
        return parsedate_to_datetime(raw).date()
    except (ValueError, TypeError):
        return None


@dataclass(frozen=True)
class Sample:
    """One labeled text record: an email body, SMS, URL, or HTML page."""

    id: str
    text: str
    label: int
    category: Category = Category.TEXT
    source: str = ""
    date: dt.date | None = None

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise RecordError(f"label must be 0 or 1, got {self.label!r} (sample {self.id})")

    def with_category(self, category: Category) -> "Sample":
        return replace(self, category=category)

    def to_dict(self) -> dict:
        d: dict = {
            "id": self.id,
            "text": self.text,
            "label": self.label,
            "category": self.category.value,
            "source": self.source,
        }
        if self.date is not None:
            d["date"] = self.date.isoformat()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Sample":
        try:
            return cls(
                id=str(d["id"]),
                text=str(d["text"]),
                label=int(d["label"]),
                category=Category(d.get("category", "text")),
                source=str(d.get("source", "")),
                date=parse_date(d.get("date")),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise RecordError(f"bad record {d!r}: {exc}") from exc


@dataclass(frozen=True)
class Provenance:
    """Where a bundle came from and its row count after each pipeline stage."""

    source: str = ""
    stages: tuple[tuple[str, int], ...] = ()
    notes: tuple[str, ...] = ()

    def with_stage(self, name: str, count: int) -> "Provenance":
        return replace(self, stages=self.stages + ((name, count),))

    def with_note(self, note: str) -> "Provenance":
        return replace(self, notes=self.notes + (note,))

    def stage_counts(self) -> dict[str, int]:
        return dict(self.stages)

    def render(self) -> str:
        """Key-value text document, one `key: value` line per entry."""
        lines = [f"source: {self.source}"]
        lines += [f"stage {name}: {count}" for name, count in self.stages]
        lines += [f"note: {note}" for note in self.notes]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DatasetBundle:
    """An ordered collection of samples plus its cleaning provenance."""

    samples: tuple[Sample, ...]
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for s in self.samples:
            if s.id in seen:
                raise RecordError(f"duplicate sample id {s.id!r} in bundle")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def label_counts(self) -> tuple[int, int]:
        """(benign, phishing) counts."""
        ones = sum(s.label for s in self.samples)
        return len(self.samples) - ones, ones

    def replaced(self, samples: Iterable[Sample], provenance: Provenance | None = None) -> "DatasetBundle":
        return DatasetBundle(tuple(samples), provenance if provenance is not None else self.provenance)


def write_records(path: str | Path, samples: Iterable[Sample]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def read_records(path: str | Path) -> list[Sample]:
    out: list[Sample] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            out.append(Sample.from_dict(d))
    return out
