"""Temporal and linguistic corpus analysis plus prediction error bucketing.

Outputs are plain data series (per-year counts, token frequency tables,
false-positive/false-negative buckets with score histograms) written as
delimited text files for external plotting.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .backends import PredictionRecord
from .records import DatasetBundle

DEFAULT_ERA_BOUNDARY_YEAR = 2007

# Small built-in English stopword list for frequency tables; override with a
# one-word-per-line file via load_stopwords().
DEFAULT_STOPWORDS = frozenset(
    """
    the and for you your are this that with from have has was were will can our
    not but all they their them then than its out get got when what which
    who whom how why there here his her she him had any may some more most
    one two been being able about into after before also just only very would
    could should shall must does did doing each other such over under between
    because where while these those please dear regards sincerely thanks thank
    """.split()
)

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)
MIN_TOKEN_LENGTH = 3


@dataclass(frozen=True)
class TemporalHistogram:
    year_counts: dict[int, int]
    pre_era: int
    post_era: int
    undated: int
    boundary_year: int = DEFAULT_ERA_BOUNDARY_YEAR


@dataclass(frozen=True)
class TokenFrequencyTable:
    entries: tuple[tuple[str, int], ...]  # (token, count), count descending
    top_n: int
    stopword_set_id: str = "builtin"


@dataclass(frozen=True)
class ErrorBuckets:
    false_positives: tuple[tuple[str, int | None, str | None], ...]  # (id, score, reason)
    false_negatives: tuple[tuple[str, int | None, str | None], ...]
    fp_score_histogram: dict[int, int] = field(default_factory=dict)
    fn_score_histogram: dict[int, int] = field(default_factory=dict)


def temporal_histogram(
    samples: DatasetBundle, boundary_year: int = DEFAULT_ERA_BOUNDARY_YEAR
) -> TemporalHistogram:
    """Per-year counts of dated samples, split into eras at Jan 1 of
    boundary_year (strictly earlier years are the pre era)."""
    year_counts: Counter[int] = Counter()
    undated = 0
    for s in samples:
        if s.date is None:
            undated += 1
        else:
            year_counts[s.date.year] += 1
    pre = sum(c for year, c in year_counts.items() if year < boundary_year)
    post = sum(year_counts.values()) - pre
    return TemporalHistogram(
        year_counts=dict(sorted(year_counts.items())),
        pre_era=pre,
        post_era=post,
        undated=undated,
        boundary_year=boundary_year,
    )


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) >= MIN_TOKEN_LENGTH]


def token_frequencies(
    samples: DatasetBundle | list,
    stopwords: frozenset[str] | set[str] = DEFAULT_STOPWORDS,
    top_n: int = 50,
    stopword_set_id: str = "builtin",
) -> TokenFrequencyTable:
    """Top-n token counts over all sample texts.

    Lowercased, split on non-alphanumeric runs, stopwords and tokens shorter
    than 3 characters dropped; ties break lexicographically.
    """
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    counts: Counter[str] = Counter()
    for s in samples:
        for token in tokenize(s.text):
            if token not in stopwords:
                counts[token] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_n]
    return TokenFrequencyTable(entries=tuple(ranked), top_n=top_n, stopword_set_id=stopword_set_id)


def load_stopwords(path: str | Path) -> frozenset[str]:
    words = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        word = line.strip().lower()
        if word:
            words.add(word)
    return frozenset(words)


def error_buckets(records: list[PredictionRecord], golds: dict[str, int]) -> ErrorBuckets:
    """Split misclassifications into false positives and false negatives,
    carrying verdict score and reason, with per-bucket score histograms."""
    fps: list[tuple[str, int | None, str | None]] = []
    fns: list[tuple[str, int | None, str | None]] = []
    fp_hist: Counter[int] = Counter()
    fn_hist: Counter[int] = Counter()
    for rec in records:
        if rec.sample_id not in golds:
            raise KeyError(f"sample id {rec.sample_id!r} not present in gold labels")
        if rec.error is not None or rec.predicted_label is None:
            continue
        gold = golds[rec.sample_id]
        if rec.predicted_label == 1 and gold == 0:
            fps.append((rec.sample_id, rec.score, rec.reason))
            if rec.score is not None:
                fp_hist[rec.score] += 1
        elif rec.predicted_label == 0 and gold == 1:
            fns.append((rec.sample_id, rec.score, rec.reason))
            if rec.score is not None:
                fn_hist[rec.score] += 1
    return ErrorBuckets(
        false_positives=tuple(fps),
        false_negatives=tuple(fns),
        fp_score_histogram=dict(sorted(fp_hist.items())),
        fn_score_histogram=dict(sorted(fn_hist.items())),
    )


def write_temporal_histogram(hist: TemporalHistogram, path: str | Path) -> None:
    lines = ["year\tcount"]
    lines += [f"{year}\t{count}" for year, count in hist.year_counts.items()]
    lines.append(f"pre_{hist.boundary_year}\t{hist.pre_era}")
    lines.append(f"post_{hist.boundary_year}\t{hist.post_era}")
    lines.append(f"undated\t{hist.undated}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_token_frequencies(table: TokenFrequencyTable, path: str | Path) -> None:
    lines = ["token\tcount"]
    lines += [f"{token}\t{count}" for token, count in table.entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_error_buckets(buckets: ErrorBuckets, path: str | Path) -> None:
    lines = ["bucket\tsample_id\tscore\treason"]
    for sid, score, reason in buckets.false_positives:
        lines.append(f"FP\t{sid}\t{'' if score is None else score}\t{reason or ''}")
    for sid, score, reason in buckets.false_negatives:
        lines.append(f"FN\t{sid}\t{'' if score is None else score}\t{reason or ''}")
    lines.append("")
    lines.append("bucket\tscore\tcount")
    for score, count in buckets.fp_score_histogram.items():
        lines.append(f"FP\t{score}\t{count}")
    for score, count in buckets.fn_score_histogram.items():
        lines.append(f"FN\t{score}\t{count}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
