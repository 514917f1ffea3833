"""Confusion counts, the four evaluation metrics, latency statistics, and
comparison-report rendering.

Positive class is phishing (label 1). Undefined ratios (0/0) are reported as
0 with an explicit flag instead of failing, so degenerate runs still render.
"""
from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .backends import PredictionRecord
from .records import Category


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    unscored: int = 0  # error records, excluded from the four counts

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn, self.unscored) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricSet:
    recall: float
    precision: float
    accuracy: float
    f1: float
    flags: tuple[str, ...] = ()  # names of ratios that were 0/0 and reported as 0


@dataclass(frozen=True)
class LatencyStats:
    mean_s: float
    median_s: float
    p95_s: float
    max_s: float
    n: int


def confusion(records: list[PredictionRecord], golds: dict[str, int]) -> ConfusionCounts:
    """Count tp/fp/tn/fn against gold labels; error records tally as unscored."""
    tp = fp = tn = fn = unscored = 0
    for rec in records:
        if rec.sample_id not in golds:
            raise KeyError(f"sample id {rec.sample_id!r} not present in gold labels")
        if rec.error is not None or rec.predicted_label is None:
            unscored += 1
            continue
        gold = golds[rec.sample_id]
        if rec.predicted_label == 1:
            if gold == 1:
                tp += 1
            else:
                fp += 1
        else:
            if gold == 1:
                fn += 1
            else:
                tn += 1
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn, unscored=unscored)


def compute_metrics(c: ConfusionCounts) -> MetricSet:
    """Recall, precision, accuracy, and F1 from one confusion matrix."""
    if c.total == 0:
        raise ValueError("cannot compute metrics over zero scored records")
    flags = []

    if c.tp + c.fn > 0:
        recall = c.tp / (c.tp + c.fn)
    else:
        recall, flags = 0.0, flags + ["recall"]
    if c.tp + c.fp > 0:
        precision = c.tp / (c.tp + c.fp)
    else:
        precision, flags = 0.0, flags + ["precision"]
    accuracy = (c.tp + c.tn) / c.total
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1, flags = 0.0, flags + ["f1"]
    return MetricSet(recall=recall, precision=precision, accuracy=accuracy, f1=f1, flags=tuple(flags))


def per_category_metrics(
    records: list[PredictionRecord],
    golds: dict[str, int],
    categories: dict[str, Category],
) -> dict[Category, MetricSet]:
    """MetricSet per content category; categories with no scored records are omitted."""
    buckets: dict[Category, list[PredictionRecord]] = {}
    for rec in records:
        if rec.sample_id not in categories:
            raise KeyError(f"sample id {rec.sample_id!r} has no category")
        buckets.setdefault(categories[rec.sample_id], []).append(rec)
    out: dict[Category, MetricSet] = {}
    for cat in Category:
        if cat not in buckets:
            continue
        counts = confusion(buckets[cat], golds)
        if counts.total == 0:
            continue
        out[cat] = compute_metrics(counts)
    return out


def nearest_rank_percentile(sorted_values: list[float], pct: float) -> float:
    """Nearest-rank percentile: element ceil(pct/100 * n) of the sorted list.

    Rank arithmetic runs on exact fractions so e.g. p95 of 20 values is
    element 19, never 20 through float drift.
    """
    if not sorted_values:
        raise ValueError("no values")
    n = len(sorted_values)
    rank = math.ceil(Fraction(str(pct)) * n / 100)
    return sorted_values[min(max(rank, 1), n) - 1]


def latency_stats(records: list[PredictionRecord]) -> LatencyStats:
    """Latency distribution over non-error records; p95 via nearest rank."""
    values = sorted(r.latency_s for r in records if r.error is None)
    if not values:
        raise ValueError("no usable records for latency statistics")
    return LatencyStats(
        mean_s=sum(values) / len(values),
        median_s=statistics.median(values),
        p95_s=nearest_rank_percentile(values, 95.0),
        max_s=values[-1],
        n=len(values),
    )


@dataclass(frozen=True)
class RunReport:
    """One evaluated run's aggregates, keyed by run name in the report."""

    metrics: MetricSet
    per_category: dict[Category, MetricSet] = field(default_factory=dict)
    latency: LatencyStats | None = None
    unscored: int = 0


_COLUMNS = ("recall", "precision", "accuracy", "f1")


def _cell(value: float, flagged: bool) -> str:
    return f"{value:.5f}" + ("*" if flagged else " ")


def _format_duration(seconds: float) -> str:
    if seconds < 1.0:
        return f"{seconds * 1000:.2f} ms"
    return f"{seconds:.2f} s"


def render_report(runs: dict[str, RunReport]) -> tuple[dict, str]:
    """Build the machine-readable document and the aligned text table.

    Values render at 5 decimals; a trailing ``*`` marks a ratio that was
    undefined and substituted by zero.
    """
    if not runs:
        raise ValueError("report needs at least one run")

    doc: dict = {"runs": {}}
    for name, run in runs.items():
        entry: dict = {
            "metrics": {col: getattr(run.metrics, col) for col in _COLUMNS},
            "flags": list(run.metrics.flags),
            "unscored": run.unscored,
            "per_category": {
                cat.value: {col: getattr(ms, col) for col in _COLUMNS}
                for cat, ms in run.per_category.items()
            },
        }
        if run.latency is not None:
            entry["latency"] = {
                "mean_s": run.latency.mean_s,
                "median_s": run.latency.median_s,
                "p95_s": run.latency.p95_s,
                "max_s": run.latency.max_s,
                "n": run.latency.n,
            }
        doc["runs"][name] = entry

    width = max([len(n) for n in runs] + [len("run")])
    lines = [f"{'run':<{width}}  " + "  ".join(f"{c:>9}" for c in _COLUMNS)]
    any_flag = False
    for name, run in runs.items():
        cells = []
        for col in _COLUMNS:
            flagged = col in run.metrics.flags
            any_flag = any_flag or flagged
            cells.append(f"{_cell(getattr(run.metrics, col), flagged):>9}")
        lines.append(f"{name:<{width}}  " + "  ".join(cells))
    if any_flag:
        lines.append("* undefined ratio reported as zero")

    per_cat_rows = [
        (name, cat, ms)
        for name, run in runs.items()
        for cat, ms in sorted(run.per_category.items(), key=lambda kv: kv[0].value)
    ]
    if per_cat_rows:
        lines.append("")
        lines.append(f"{'run / category':<{width + 12}}  " + "  ".join(f"{c:>9}" for c in _COLUMNS))
        for name, cat, ms in per_cat_rows:
            label = f"{name} / {cat.value}"
            cells = [f"{_cell(getattr(ms, col), col in ms.flags):>9}" for col in _COLUMNS]
            lines.append(f"{label:<{width + 12}}  " + "  ".join(cells))

    if any(run.latency is not None for run in runs.values()):
        lines.append("")
        lines.append(f"{'run':<{width}}  {'mean':>10}  {'median':>10}  {'p95':>10}  {'max':>10}  {'n':>6}")
        for name, run in runs.items():
            if run.latency is None:
                continue
            stat = run.latency
            lines.append(
                f"{name:<{width}}  {_format_duration(stat.mean_s):>10}  "
                f"{_format_duration(stat.median_s):>10}  {_format_duration(stat.p95_s):>10}  "
                f"{_format_duration(stat.max_s):>10}  {stat.n:>6}"
            )

    return doc, "\n".join(lines) + "\n"


def write_report(runs: dict[str, RunReport], json_path: str | Path, text_path: str | Path) -> None:
    doc, table = render_report(runs)
    Path(json_path).parent.mkdir(parents=True, exist_ok=True)
    Path(json_path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    Path(text_path).write_text(table, encoding="utf-8")
