"""Operator command line: prepare corpora, run evaluations, render reports,
run analyses, and drive synthetic generation and grading.

Configuration lives in one JSON file; credentials come only from environment
variables named there. Outputs land under a run-scoped directory so repeated
runs never clobber each other.
"""
from __future__ import annotations

import datetime as dt
import hashlib
import json
import time
from pathlib import Path

import click

from . import analysis, backends, corpus, metrics, synthgen
from .records import Category, DatasetBundle, read_records, write_records


class ConfigError(click.ClickException):
    pass


def load_config(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        config = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    if "seed" not in config:
        raise ConfigError("config must set a seed (every randomized step is seeded)")
    config.setdefault("out_dir", "out")
    config["_path"] = str(path)
    return config


def make_run_id(config: dict, seed: int) -> str:
    payload = json.dumps(
        {k: v for k, v in config.items() if not k.startswith("_")}, sort_keys=True
    )
    stamp = dt.datetime.now(dt.timezone.utc).isoformat()
    return hashlib.sha256(f"{payload}|{seed}|{stamp}".encode()).hexdigest()[:12]


def build_backend(config: dict, name: str) -> backends.Backend:
    entries = config.get("backends", {})
    if name not in entries:
        raise ConfigError(f"backend {name!r} not defined in config")
    entry = dict(entries[name])
    try:
        kind = backends.BackendKind(entry.pop("kind"))
    except (KeyError, ValueError):
        raise ConfigError(f"backend {name!r} needs a kind of remote_llm, sidecar, or mock")
    script_path = entry.pop("script_path", None)
    generator_script = entry.pop("generator_script", None)
    try:
        backend_config = backends.BackendConfig(kind=kind, **entry)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"backend {name!r}: {exc}")

    if kind is backends.BackendKind.MOCK:
        script = {}
        if script_path:
            base = Path(config["_path"]).parent
            for line in (base / script_path).read_text(encoding="utf-8").splitlines():
                line = line.strip()
                if not line:
                    continue
                entry_d = json.loads(line)
                err = entry_d.get("error")
                script[entry_d["sample_id"]] = backends.MockAnswer(
                    label=entry_d.get("label"),
                    score=entry_d.get("score"),
                    reason=entry_d.get("reason"),
                    latency_s=float(entry_d.get("latency_s", 0.0)),
                    error=backends.BackendFailure(err["kind"], err["detail"]) if err else None,
                )
        backend = backends.MockBackend(script, backend_config)
        backend.generator_script = generator_script  # type: ignore[attr-defined]
        return backend
    if kind is backends.BackendKind.SIDECAR:
        return backends.SidecarBackend(backend_config)
    return backends.RemoteLlmBackend(backend_config)


def _caps_from_config(config: dict) -> dict[Category, int]:
    caps = {}
    for key, value in config.get("rebalance_caps", {}).items():
        try:
            caps[Category(key)] = int(value)
        except ValueError:
            raise ConfigError(f"unknown rebalance category {key!r}")
    return caps


def _split_spec(config: dict, seed: int) -> corpus.SplitSpec:
    entry = config.get("split", {})
    try:
        return corpus.SplitSpec(
            train_fraction=float(entry.get("train_fraction", 0.70)),
            val_fraction=float(entry.get("val_fraction", 0.15)),
            test_fraction=float(entry.get("test_fraction", 0.15)),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc))


def _resolve(config: dict, raw: str) -> Path:
    path = Path(raw)
    return path if path.is_absolute() else Path(config["_path"]).parent / path


@click.group()
def main() -> None:
    """Phishing-detection benchmarking pipeline."""


@main.command("prepare")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Overrides config out_dir.")
def cmd_prepare(config_path: str, seed: int | None, out_dir: str | None) -> None:
    """Load, clean, rebalance, and split every configured dataset."""
    config = load_config(config_path)
    seed = seed if seed is not None else int(config["seed"])
    run_dir = Path(out_dir or config["out_dir"]) / make_run_id(config, seed)
    caps = _caps_from_config(config)
    spec = _split_spec(config, seed)

    datasets = config.get("datasets")
    if not datasets:
        raise ConfigError("config defines no datasets")

    for name, entry in datasets.items():
        try:
            fmt = corpus.DatasetFormat(entry["format"])
        except (KeyError, ValueError):
            raise ConfigError(f"dataset {name!r} needs a format of two_column_csv, "
                              f"email_table_csv, or canonical_jsonl")
        try:
            bundle = corpus.load_dataset(_resolve(config, entry["path"]), fmt, source=name)
            bundle = corpus.clean(bundle)
            if caps:
                bundle = corpus.rebalance_sources(bundle, caps, seed=seed)
            result = corpus.split(bundle, spec)
        except (corpus.LoadError, ValueError) as exc:
            raise click.ClickException(f"dataset {name!r}: {exc}")

        dataset_dir = run_dir / name
        dataset_dir.mkdir(parents=True, exist_ok=True)
        prov = bundle.provenance
        for split_name, split_bundle in result.as_dict().items():
            write_records(dataset_dir / f"{split_name}.jsonl", split_bundle)
            prov = prov.with_stage(f"split_{split_name}", len(split_bundle))
        (dataset_dir / "provenance.txt").write_text(prov.render(), encoding="utf-8")

        dist = corpus.class_distribution({"complete": bundle, **result.as_dict()})
        click.echo(f"[{name}] prepared under {dataset_dir}")
        click.echo(corpus.render_distribution(dist), nl=False)
    click.echo(f"done: {run_dir}")


def _load_golds(split_files: tuple[str, ...]) -> tuple[dict[str, int], dict[str, Category]]:
    golds: dict[str, int] = {}
    categories: dict[str, Category] = {}
    for path in split_files:
        for sample in read_records(path):
            golds[sample.id] = sample.label
            categories[sample.id] = sample.category
    return golds, categories


@main.command("evaluate")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--backend", "backend_name", required=True)
@click.option("--split-file", required=True, type=click.Path(exists=True))
@click.option("--journal", "journal_path", type=click.Path(), default=None,
              help="Journal to write (or resume, if it already has records).")
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
def cmd_evaluate(config_path: str, backend_name: str, split_file: str,
                 journal_path: str | None, out_dir: str | None, seed: int | None) -> None:
    """Run one backend over a split file, journaling each prediction."""
    config = load_config(config_path)
    seed = seed if seed is not None else int(config["seed"])
    backend = build_backend(config, backend_name)
    if isinstance(backend, (backends.RemoteLlmBackend, backends.SidecarBackend)):
        try:
            backend.probe()
        except backends.BackendUnreachable as exc:
            raise click.ClickException(f"backend {backend_name!r} unreachable: {exc}")
    samples = read_records(split_file)

    run_id = make_run_id(config, seed)
    if journal_path is None:
        run_dir = Path(out_dir or config["out_dir"]) / run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        journal_file = run_dir / f"{backend_name}.journal.jsonl"
    else:
        journal_file = Path(journal_path)
        journal_file.parent.mkdir(parents=True, exist_ok=True)

    resumed_run_id = _journal_run_id(journal_file)
    effective_run_id = resumed_run_id or run_id

    started = time.perf_counter()
    with backends.Journal(journal_file, effective_run_id) as journal:
        resumed = journal.preloaded
        records = backends.run_evaluation(backend, samples, journal=journal)
    wall = time.perf_counter() - started

    errors = sum(1 for r in records if r.error is not None)
    repaired = sum(1 for r in records if r.error is None and r.attempt_count > 1)
    summary = {
        "run_id": effective_run_id,
        "backend": backend_name,
        "split_file": str(split_file),
        "total": len(records),
        "errors": errors,
        "resumed": resumed > 0,
        "resumed_records": resumed,
        "new_requests": len(records) - resumed,
        "repaired_responses": repaired,
        "wall_time_s": round(wall, 3),
    }
    summary_file = journal_file.with_suffix(".summary.json")
    summary_file.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    click.echo(json.dumps(summary, indent=2))


def _journal_run_id(path: Path) -> str | None:
    if not path.exists():
        return None
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                return json.loads(line).get("run_id")
    return None


@main.command("report")
@click.argument("journals", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--golds", "split_files", multiple=True, required=True, type=click.Path(exists=True),
              help="Split file(s) providing gold labels and categories.")
@click.option("--out", "out_dir", type=click.Path(), default=".")
def cmd_report(journals: tuple[str, ...], split_files: tuple[str, ...], out_dir: str) -> None:
    """Render the comparison report for one or more evaluation journals."""
    golds, categories = _load_golds(split_files)
    runs: dict[str, metrics.RunReport] = {}
    for journal_path in journals:
        records = backends.read_journal_records(journal_path)
        name = Path(journal_path).name.split(".")[0]
        if name in runs:  # same stem from another directory; keep both rows
            suffix = 2
            while f"{name}-{suffix}" in runs:
                suffix += 1
            name = f"{name}-{suffix}"
        try:
            counts = metrics.confusion(records, golds)
            run_metrics = metrics.compute_metrics(counts)
            per_cat = metrics.per_category_metrics(records, golds, categories)
        except KeyError as exc:
            raise click.ClickException(f"{journal_path}: {exc}")
        except ValueError as exc:
            raise click.ClickException(f"{journal_path}: {exc}")
        scored = [r for r in records if r.error is None]
        latency = metrics.latency_stats(scored) if scored else None
        runs[name] = metrics.RunReport(
            metrics=run_metrics, per_category=per_cat, latency=latency, unscored=counts.unscored
        )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_report(runs, out / "report.json", out / "report.txt")
    click.echo((out / "report.txt").read_text(encoding="utf-8"), nl=False)
    for name, run in runs.items():
        if run.unscored:
            click.echo(f"note: {name} had {run.unscored} unscored (errored) records")


@main.command("analyze")
@click.option("--split-file", type=click.Path(exists=True), default=None)
@click.option("--journal", "journal_path", type=click.Path(exists=True), default=None)
@click.option("--golds", "split_files", multiple=True, type=click.Path(exists=True))
@click.option("--stopwords", "stopword_path", type=click.Path(exists=True), default=None)
@click.option("--top-n", type=int, default=50)
@click.option("--boundary-year", type=int, default=analysis.DEFAULT_ERA_BOUNDARY_YEAR)
@click.option("--out", "out_dir", type=click.Path(), default=".")
def cmd_analyze(split_file: str | None, journal_path: str | None, split_files: tuple[str, ...],
                stopword_path: str | None, top_n: int, boundary_year: int, out_dir: str) -> None:
    """Write temporal, token-frequency, and error-bucket data files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    wrote = []

    if split_file:
        samples = DatasetBundle(tuple(read_records(split_file)))
        hist = analysis.temporal_histogram(samples, boundary_year=boundary_year)
        analysis.write_temporal_histogram(hist, out / "temporal.tsv")
        wrote.append("temporal.tsv")
        if stopword_path:
            stopwords = analysis.load_stopwords(stopword_path)
            set_id = Path(stopword_path).name
        else:
            stopwords, set_id = analysis.DEFAULT_STOPWORDS, "builtin"
        table = analysis.token_frequencies(samples, stopwords, top_n, stopword_set_id=set_id)
        analysis.write_token_frequencies(table, out / "tokens.tsv")
        wrote.append("tokens.tsv")
        if hist.undated:
            click.echo(f"note: {hist.undated} samples had no usable date")

    if journal_path:
        if not split_files:
            raise click.ClickException("--journal requires --golds split file(s)")
        golds, _ = _load_golds(split_files)
        records = backends.read_journal_records(journal_path)
        try:
            buckets = analysis.error_buckets(records, golds)
        except KeyError as exc:
            raise click.ClickException(f"{journal_path}: {exc}")
        analysis.write_error_buckets(buckets, out / "error_buckets.tsv")
        wrote.append("error_buckets.tsv")

    if not wrote:
        raise click.ClickException("nothing to analyze: pass --split-file and/or --journal")
    click.echo(f"wrote {', '.join(wrote)} under {out}")


@main.command("synthgen")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--backend", "backend_name", required=True)
@click.option("--label", type=click.IntRange(0, 1), required=True)
@click.option("--tactic", type=click.Choice([t.value for t in synthgen.Tactic]), required=True)
@click.option("--count", type=click.IntRange(min=1), required=True)
@click.option("--store", "store_dir", type=click.Path(), default=None,
              help="Directory for pending pool and grading journal (default <out_dir>/synth).")
def cmd_synthgen(config_path: str, backend_name: str, label: int, tactic: str,
                 count: int, store_dir: str | None) -> None:
    """Generate synthetic email candidates and queue them for grading."""
    config = load_config(config_path)
    spec = synthgen.GenerationSpec(target_label=label, tactic=synthgen.Tactic(tactic), count=count)
    prompt = synthgen.build_generation_prompt(spec)

    backend = build_backend(config, backend_name)
    if isinstance(backend, backends.MockBackend):
        script = getattr(backend, "generator_script", None)
        if not script:
            raise ConfigError(f"mock backend {backend_name!r} needs generator_script for synthgen")
        raw = _resolve(config, script).read_text(encoding="utf-8")
    elif isinstance(backend, backends.RemoteLlmBackend):
        raw = backend.complete(prompt)
    else:
        raise ConfigError("synthgen needs a remote_llm or mock backend")

    responses = [part.strip() for part in raw.split("\n---\n")]
    store = _open_store(config, store_dir)
    pending, dropped = synthgen.ingest_generated(responses, spec, start_index=store.next_index)
    store.add_pending(pending)

    # record generator identity so later evaluations can declare independence
    # from the model that wrote the corpus
    entry = config.get("backends", {}).get(backend_name, {})
    generator_log = store.pending_path.parent / "generators.jsonl"
    with generator_log.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "backend": backend_name,
            "kind": entry.get("kind"),
            "model_name": entry.get("model_name", ""),
            "tactic": tactic,
            "label": label,
            "queued": len(pending),
            "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(),
        }) + "\n")

    flagged = sum(1 for p in pending if p.flagged)
    click.echo(f"queued {len(pending)} pending samples ({flagged} flagged for attention, "
               f"{dropped} empty responses dropped)")


def _open_store(config: dict, store_dir: str | None) -> synthgen.GradingStore:
    base = Path(store_dir) if store_dir else Path(config["out_dir"]) / "synth"
    return synthgen.GradingStore(base / "pending.jsonl", base / "grading.jsonl")


@main.command("grade")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--store", "store_dir", type=click.Path(), default=None)
@click.option("--list", "list_only", is_flag=True, help="List pending samples and exit.")
@click.option("--finalize", is_flag=True, help="Partition accepted samples instead of grading.")
@click.option("--seed", type=int, default=None)
@click.option("--show-chars", type=int, default=800, help="How much of each text to display.")
def cmd_grade(config_path: str, store_dir: str | None, list_only: bool, finalize: bool,
              seed: int | None, show_chars: int) -> None:
    """Grade pending synthetic samples interactively, or finalize the pools."""
    config = load_config(config_path)
    seed = seed if seed is not None else int(config["seed"])
    store = _open_store(config, store_dir)

    if list_only:
        pending = store.ungraded()
        for item in pending:
            flag = " [flagged]" if item.flagged else ""
            click.echo(f"{item.sample.id}  label {item.sample.label}{flag}  "
                       f"{item.sample.text[:60]!r}")
        click.echo(f"{len(pending)} pending")
        return

    if finalize:
        accepted = store.accepted()
        if not accepted:
            raise click.ClickException("no accepted samples to finalize")
        partition = synthgen.finalize_partition(accepted, seed)
        base = store.pending_path.parent
        write_records(base / "fine_tune_pool.jsonl", partition.fine_tune_pool)
        write_records(base / "held_out_test.jsonl", partition.held_out_test)
        store.mark_finalized([s.id for s in accepted])
        dist = corpus.class_distribution({
            "complete": DatasetBundle(tuple(accepted)),
            "fine_tune_pool": DatasetBundle(partition.fine_tune_pool),
            "held_out_test": DatasetBundle(partition.held_out_test),
        })
        click.echo(corpus.render_distribution(dist), nl=False)
        click.echo(f"wrote pools under {base}")
        return

    pending = store.ungraded()
    if not pending:
        click.echo("no pending samples to grade")
        return
    click.echo(f"{len(pending)} pending samples")
    for item in pending:
        sample = item.sample
        click.echo("-" * 60)
        flag = "  [FLAGGED: placeholder text]" if item.flagged else ""
        click.echo(f"{sample.id}  provisional label {sample.label}{flag}")
        click.echo(sample.text[:show_chars])
        decision = click.prompt("decision", type=click.Choice(["a", "r", "s", "q"]),
                                show_choices=True)
        if decision == "q":
            break
        if decision == "s":
            continue
        if decision == "a":
            confirmed = click.prompt("confirmed label", type=click.IntRange(0, 1),
                                     default=sample.label)
            note = click.prompt("note", default="", show_default=False)
            store.grade(sample.id, synthgen.GradingDecision.ACCEPT, confirmed, note)
        else:
            note = click.prompt("note", default="", show_default=False)
            store.grade(sample.id, synthgen.GradingDecision.REJECT, note=note)
    remaining = len(store.ungraded())
    click.echo(f"done; {remaining} still pending")


if __name__ == "__main__":
    main()
