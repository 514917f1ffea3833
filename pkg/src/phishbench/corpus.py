"""Corpus ingestion, cleaning, categorization, rebalancing, and splitting.

The cleaning filters and the stratified 70/15/15 split are the load-bearing
operations here; everything is deterministic under an explicit seed so split
files can be regenerated byte-identically.
"""
from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .records import Category, DatasetBundle, Provenance, RecordError, Sample, parse_date, read_records

# Full HTML pages land in single CSV fields; the default 128 KiB cap is too low.
csv.field_size_limit(16 * 1024 * 1024)

INVALID_MARKER = "=?utf-8?"

# Tokens that look like a bare domain, e.g. "paypal-secure.example.com/login".
_URI_SCHEMES = ("http://", "https://")


class DatasetFormat(Enum):
    TWO_COLUMN_CSV = "two_column_csv"
    EMAIL_TABLE_CSV = "email_table_csv"
    CANONICAL_JSONL = "canonical_jsonl"


class LoadError(ValueError):
    """Raised when a dataset file cannot be parsed under its declared format."""


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.70
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    seed: int = 0

    def __post_init__(self) -> None:
        fractions = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f < 0 for f in fractions):
            raise ValueError(f"split fractions must be non-negative: {fractions}")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1.0: {fractions}")


@dataclass(frozen=True)
class Split:
    train: DatasetBundle
    val: DatasetBundle
    test: DatasetBundle

    def as_dict(self) -> dict[str, DatasetBundle]:
        return {"train": self.train, "val": self.val, "test": self.test}


def _parse_label(raw: str, path: Path, row: int) -> int:
    value = raw.strip().lower()
    if value in ("0", "1"):
        return int(value)
    if value in ("ham", "benign", "legit", "safe"):
        return 0
    if value in ("spam", "phishing", "phish", "fraud"):
        return 1
    raise LoadError(f"{path}: row {row}: unknown label value {raw!r}")


def load_dataset(path: str | Path, format: DatasetFormat, source: str | None = None) -> DatasetBundle:
    """Load a raw dataset file into a bundle, one sample per row.

    Ids are assigned deterministically from the source tag and row index so
    re-loading the same file always yields the same ids.
    """
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"dataset file not found: {path}")
    source = source if source is not None else path.name

    if format is DatasetFormat.CANONICAL_JSONL:
        try:
            samples = read_records(path)
        except RecordError as exc:
            raise LoadError(str(exc)) from exc
        prov = Provenance(source=source).with_stage("loaded", len(samples))
        return DatasetBundle(tuple(samples), prov)

    samples = []
    try:
        with path.open("r", encoding="utf-8", errors="replace", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise LoadError(f"{path}: empty file, expected a header row")
            for row_index, row in enumerate(reader, start=1):
                if not row:
                    continue
                sid = f"{source}:{row_index:06d}"
                if format is DatasetFormat.TWO_COLUMN_CSV:
                    if len(row) != 2:
                        raise LoadError(f"{path}: row {row_index}: expected 2 columns, got {len(row)}")
                    text, label = row
                    sample = Sample(
                        id=sid,
                        text=text,
                        label=_parse_label(label, path, row_index),
                        category=categorize(text) if text.strip() else Category.TEXT,
                        source=source,
                    )
                else:  # EMAIL_TABLE_CSV: sender, receiver, subject, body, date, label, urls
                    if len(row) != 7:
                        raise LoadError(f"{path}: row {row_index}: expected 7 columns, got {len(row)}")
                    _sender, _receiver, subject, body, date, label, _urls = row
                    text = f"{subject}\n{body}" if subject.strip() else body
                    sample = Sample(
                        id=sid,
                        text=text,
                        label=_parse_label(label, path, row_index),
                        category=categorize(text) if text.strip() else Category.TEXT,
                        source=source,
                        date=parse_date(date),
                    )
                samples.append(sample)
    except LoadError:
        raise
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    except csv.Error as exc:
        raise LoadError(f"{path}: malformed CSV: {exc}") from exc

    prov = Provenance(source=source).with_stage("loaded", len(samples))
    return DatasetBundle(tuple(samples), prov)


def clean(bundle: DatasetBundle) -> DatasetBundle:
    """Drop null/empty texts, then (text, label) duplicates, then marker rows.

    Texts containing the literal invalid-encoding marker are removed
    case-insensitively. Identical text under conflicting labels is retained
    and noted in provenance rather than silently dropped.
    """
    non_empty = [s for s in bundle.samples if s.text and s.text.strip()]
    prov = bundle.provenance.with_stage("non_empty", len(non_empty))

    seen: set[tuple[str, int]] = set()
    texts_by_label: dict[str, set[int]] = {}
    deduped = []
    for s in non_empty:
        key = (s.text, s.label)
        if key in seen:
            continue
        seen.add(key)
        texts_by_label.setdefault(s.text, set()).add(s.label)
        deduped.append(s)
    prov = prov.with_stage("deduplicated", len(deduped))

    conflicts = sum(1 for labels in texts_by_label.values() if len(labels) > 1)
    if conflicts:
        prov = prov.with_note(f"{conflicts} texts retained with conflicting labels")

    kept = [s for s in deduped if INVALID_MARKER not in s.text.lower()]
    prov = prov.with_stage("marker_filtered", len(kept))
    return DatasetBundle(tuple(kept), prov)


_TAG_CHARS = set("abcdefghijklmnopqrstuvwxyz")


def _has_markup(text: str) -> bool:
    lower = text.lower()
    if "<!doctype" in lower:
        return True
    # Look for a matched <tag>...</tag> pair.
    pos = 0
    while True:
        start = lower.find("<", pos)
        if start == -1:
            return False
        end = start + 1
        while end < len(lower) and lower[end] in _TAG_CHARS:
            end += 1
        tag = lower[start + 1 : end]
        if tag and end < len(lower):
            close = lower.find(f"</{tag}", end)
            if close != -1:
                return True
        pos = start + 1


def _is_bare_domain(token: str) -> bool:
    host = token.split("/", 1)[0].split("?", 1)[0]
    if host.startswith("www."):
        host = host[4:]
    parts = host.split(".")
    if len(parts) < 2 or not all(parts):
        return False
    if not all(all(c.isalnum() or c == "-" for c in p) for p in parts):
        return False
    tld = parts[-1]
    return tld.isalpha() and 2 <= len(tld) <= 24


def categorize(text: str) -> Category:
    """Classify raw content as a URL, markup page, or plain text.

    A URL must be a single whitespace-free token: prose that merely contains
    a link stays in the text category, matching how mixed email bodies are
    treated upstream.
    """
    if not text or not text.strip():
        raise ValueError("cannot categorize empty text")
    token = text.strip()
    if not any(ch.isspace() for ch in token):
        if token.lower().startswith(_URI_SCHEMES) or _is_bare_domain(token):
            return Category.URL
    if _has_markup(text):
        return Category.WEB
    return Category.TEXT


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def _stratified_take(
    samples: list[Sample], per_label_targets: dict[int, int], rng: random.Random
) -> list[Sample]:
    """Pick targets[label] samples per label, preserving input order."""
    chosen: set[int] = set()
    for label in (0, 1):
        idx = [i for i, s in enumerate(samples) if s.label == label]
        take = min(per_label_targets.get(label, 0), len(idx))
        chosen.update(rng.sample(idx, take))
    return [s for i, s in enumerate(samples) if i in chosen]


def rebalance_sources(
    bundle: DatasetBundle, caps: dict[Category, int], seed: int = 0
) -> DatasetBundle:
    """Cap over-represented categories by seeded stratified down-sampling.

    Per capped category, at most `cap` samples survive and the benign/phishing
    ratio is preserved within one sample. Uncapped categories pass through.
    """
    for cat, cap in caps.items():
        if cap < 0:
            raise ValueError(f"cap for {cat.value} must be non-negative, got {cap}")

    rng = random.Random(seed)
    keep: set[str] = set()
    for cat in Category:  # fixed iteration order keeps the rng stream stable
        members = [s for s in bundle.samples if s.category is cat]
        cap = caps.get(cat)
        if cap is None or cap >= len(members):
            keep.update(s.id for s in members)
            continue
        ones = sum(s.label for s in members)
        target_1 = _round_half_up(cap * ones / len(members))
        target_1 = max(0, min(target_1, ones, cap))
        target_0 = cap - target_1
        kept = _stratified_take(members, {0: target_0, 1: target_1}, rng)
        keep.update(s.id for s in kept)

    samples = tuple(s for s in bundle.samples if s.id in keep)
    prov = bundle.provenance.with_stage("rebalanced", len(samples))
    return DatasetBundle(samples, prov)


def split(bundle: DatasetBundle, spec: SplitSpec) -> Split:
    """Stratified train/val/test split, deterministic under spec.seed.

    Per label class, val and test get round(fraction * class_count) samples
    (half-up) and train absorbs the remainder, so every split stays within
    one sample of its exact fractional target.
    """
    rng = random.Random(spec.seed)
    parts: dict[str, list[int]] = {"train": [], "val": [], "test": []}
    for label in (0, 1):
        idx = [i for i, s in enumerate(bundle.samples) if s.label == label]
        rng.shuffle(idx)
        n = len(idx)
        val_n = _round_half_up(spec.val_fraction * n)
        test_n = _round_half_up(spec.test_fraction * n)
        if val_n + test_n > n:  # degenerate fractions; keep the partition total
            test_n = n - val_n
        parts["val"] += idx[:val_n]
        parts["test"] += idx[val_n : val_n + test_n]
        parts["train"] += idx[val_n + test_n :]

    def take(name: str) -> DatasetBundle:
        members = [bundle.samples[i] for i in sorted(parts[name])]
        prov = bundle.provenance.with_stage(f"split_{name}", len(members))
        return DatasetBundle(tuple(members), prov)

    return Split(train=take("train"), val=take("val"), test=take("test"))


def class_distribution(bundles: dict[str, DatasetBundle]) -> dict[str, tuple[int, int]]:
    """Per-bundle (benign, phishing) counts."""
    return {name: b.label_counts() for name, b in bundles.items()}


def render_distribution(dist: dict[str, tuple[int, int]]) -> str:
    width = max([len(n) for n in dist] + [len("bundle")])
    lines = [f"{'bundle':<{width}}  class 0  class 1"]
    for name, (c0, c1) in dist.items():
        lines.append(f"{name:<{width}}  {c0:>7}  {c1:>7}")
    return "\n".join(lines) + "\n"


def sample_subset(
    bundle: DatasetBundle,
    n: int,
    seed: int,
    class_targets: tuple[int, int] | None = None,
) -> DatasetBundle:
    """Seeded stratified subset of size n.

    Default targets are as near-equal per class as the source allows; an
    explicit (benign, phishing) target pair overrides them, e.g. to reproduce
    a previously published subset shape. The targets used are recorded in
    provenance.
    """
    if n > len(bundle):
        raise ValueError(f"requested {n} samples from a bundle of {len(bundle)}")
    n0, n1 = bundle.label_counts()
    if class_targets is None:
        t0 = n - n // 2
        t1 = n // 2
        if t0 > n0:
            t1 += t0 - n0
            t0 = n0
        if t1 > n1:
            t0 += t1 - n1
            t1 = n1
    else:
        t0, t1 = class_targets
        if t0 + t1 != n:
            raise ValueError(f"class targets {class_targets} do not sum to n={n}")
        if t0 > n0 or t1 > n1:
            raise ValueError(f"class targets {class_targets} exceed available counts ({n0}, {n1})")

    rng = random.Random(seed)
    kept = _stratified_take(list(bundle.samples), {0: t0, 1: t1}, rng)
    prov = bundle.provenance.with_stage("sampled", len(kept)).with_note(
        f"subset targets: class0={t0} class1={t1}"
    )
    return DatasetBundle(tuple(kept), prov)
