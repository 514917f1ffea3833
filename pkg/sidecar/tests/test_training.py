from __future__ import annotations

import json

import pytest

from conftest import BENIGN_TEXTS, PHISH_TEXTS, toy_config, write_canonical
from phishsidecar.training import DatasetError, Predictor, Trainer, fingerprint, read_canonical


def test_read_canonical_happy_path(tmp_path):
    path = write_canonical(tmp_path / "d.jsonl", [("a", "hello", 0), ("b", "scam", 1)])
    records = read_canonical(path)
    assert [r.label for r in records] == [0, 1]
    assert records[0].text == "hello"


def test_read_canonical_tolerates_full_pipeline_records(tmp_path):
    # the pipeline writes category/source/date alongside id/text/label
    path = tmp_path / "full.jsonl"
    path.write_text(
        '{"category": "text", "date": "2007-03-01", "id": "hf:000001", '
        '"label": 1, "source": "hf", "text": "verify your account"}\n'
    )
    [record] = read_canonical(path)
    assert record.id == "hf:000001"
    assert record.label == 1


def test_read_canonical_rejects_bad_label(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"id": "a", "text": "x", "label": 2}\n')
    with pytest.raises(DatasetError, match="label"):
        read_canonical(path)


def test_read_canonical_rejects_missing_file(tmp_path):
    with pytest.raises(DatasetError, match="not found"):
        read_canonical(tmp_path / "nope.jsonl")


def test_read_canonical_rejects_empty(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text("\n")
    with pytest.raises(DatasetError, match="no records"):
        read_canonical(path)


def test_fingerprint_changes_iff_bytes_change(tmp_path):
    path = write_canonical(tmp_path / "d.jsonl", [("a", "hello", 0)])
    first = fingerprint(path)
    assert fingerprint(path) == first
    write_canonical(path, [("a", "hello!", 0)])
    assert fingerprint(path) != first


def test_toy_training_loss_descends(toy_dataset, tmp_path):
    train, val = toy_dataset
    manifest, _ = Trainer(toy_config(), tmp_path / "runs").train(train, val)
    assert manifest.status == "completed"
    assert len(manifest.epoch_metrics) == 3
    losses = [m.training_loss for m in manifest.epoch_metrics]
    assert losses[-1] < losses[0]
    assert all(m.validation_loss >= 0 for m in manifest.epoch_metrics)


def test_toy_training_classifies_train_set(toy_dataset, tmp_path):
    train, val = toy_dataset
    _, predictor = Trainer(toy_config(), tmp_path / "runs").train(train, val)
    texts = PHISH_TEXTS + BENIGN_TEXTS
    golds = [1] * 10 + [0] * 10
    predictions = predictor.predict(texts)
    correct = sum(1 for (label, _), gold in zip(predictions, golds) if label == gold)
    assert correct >= 18


def test_manifest_file_written_and_updated(toy_dataset, tmp_path):
    train, val = toy_dataset
    manifest, _ = Trainer(toy_config(epochs=2), tmp_path / "runs").train(train, val)
    on_disk = json.loads((tmp_path / "runs" / manifest.run_id / "manifest.json").read_text())
    assert on_disk["status"] == "completed"
    assert len(on_disk["epoch_metrics"]) == 2
    assert on_disk["config"]["base_model_name"] == "builtin:tiny"
    assert on_disk["checkpoint_path"].endswith("checkpoint.pt")


def test_manifest_fingerprints_match_inputs(toy_dataset, tmp_path):
    train, val = toy_dataset
    manifest, _ = Trainer(toy_config(epochs=1), tmp_path / "runs").train(train, val)
    assert manifest.dataset_fingerprints["train"] == fingerprint(train)
    assert manifest.dataset_fingerprints["val"] == fingerprint(val)


def test_predict_order_length_and_determinism(toy_dataset, tmp_path):
    train, val = toy_dataset
    _, predictor = Trainer(toy_config(epochs=1), tmp_path / "runs").train(train, val)
    texts = [PHISH_TEXTS[0], BENIGN_TEXTS[0], PHISH_TEXTS[0], "something else entirely"]
    first = predictor.predict(texts)
    second = predictor.predict(texts)
    assert len(first) == len(texts)
    assert first == second  # pure at fixed checkpoint
    assert first[0] == first[2]  # duplicates agree
    assert all(0.0 <= confidence <= 1.0 for _, confidence in first)


def test_predict_empty_list(toy_dataset, tmp_path):
    train, val = toy_dataset
    _, predictor = Trainer(toy_config(epochs=1), tmp_path / "runs").train(train, val)
    assert predictor.predict([]) == []


def test_checkpoint_reload_serves_identical_outputs(toy_dataset, tmp_path):
    train, val = toy_dataset
    manifest, predictor = Trainer(toy_config(), tmp_path / "runs").train(train, val)
    reloaded = Predictor.load(manifest.checkpoint_path)
    texts = PHISH_TEXTS[:3] + BENIGN_TEXTS[:3]
    assert reloaded.predict(texts) == predictor.predict(texts)


def test_training_deterministic_under_seed(toy_dataset, tmp_path):
    train, val = toy_dataset
    m1, _ = Trainer(toy_config(), tmp_path / "runs-a").train(train, val)
    m2, _ = Trainer(toy_config(), tmp_path / "runs-b").train(train, val)
    losses = lambda m: [(e.training_loss, e.validation_loss) for e in m.epoch_metrics]
    assert losses(m1) == pytest.approx(losses(m2))
