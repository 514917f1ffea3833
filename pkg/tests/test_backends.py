from __future__ import annotations

import json
import random
import time

import pytest

from conftest import llm_response, make_sample
from phishbench import backends
from phishbench.backends import (
    BackendConfig,
    BackendFailure,
    BackendKind,
    Journal,
    MockAnswer,
    MockBackend,
    PredictionRecord,
    RemoteLlmBackend,
    SidecarBackend,
    run_evaluation,
)

NO_SLEEP = lambda _s: None


def remote_config(url: str, **kw) -> BackendConfig:
    defaults = dict(kind=BackendKind.REMOTE_LLM, endpoint=url, model_name="stub-model",
                    timeout_s=2.0, max_retries=2, max_in_flight=4, retry_backoff_base_s=0.01)
    defaults.update(kw)
    return BackendConfig(**defaults)


def test_backend_config_validation():
    with pytest.raises(ValueError):
        BackendConfig(kind=BackendKind.MOCK, temperature=-0.1)
    with pytest.raises(ValueError):
        BackendConfig(kind=BackendKind.MOCK, max_in_flight=0)


def test_prediction_record_exactly_one_authority():
    with pytest.raises(ValueError):
        PredictionRecord(sample_id="x", predicted_label=1,
                         error=BackendFailure("parse", "both set"))
    with pytest.raises(ValueError):
        PredictionRecord(sample_id="x", predicted_label=None)


def test_prediction_record_round_trip():
    records = [
        PredictionRecord(sample_id="a", predicted_label=1, score=9, reason="r",
                         latency_s=0.5, attempt_count=2),
        PredictionRecord(sample_id="b", predicted_label=None, latency_s=1.0,
                         error=BackendFailure("timeout", "slow")),
        PredictionRecord(sample_id="c", predicted_label=0, confidence=0.25),
    ]
    for record in records:
        assert PredictionRecord.from_dict(record.to_dict()) == record


# --- mock backend -----------------------------------------------------------------

def test_mock_scripted_answer():
    backend = MockBackend({"s00001": MockAnswer(label=1, score=8)})
    record = backend.classify(make_sample(1, 1))
    assert record.predicted_label == 1
    assert record.score == 8
    assert record.error is None


def test_mock_unscripted_sample_yields_error_record():
    backend = MockBackend({})
    record = backend.classify(make_sample(2, 0))
    assert record.error is not None
    assert record.predicted_label is None


def test_mock_latency_is_scripted_exactly():
    backend = MockBackend({"s00003": MockAnswer(label=0, latency_s=1.25)})
    assert backend.classify(make_sample(3, 0)).latency_s == 1.25


# --- remote llm -----------------------------------------------------------------------

def test_remote_llm_against_stub(stub_server_factory):
    server = stub_server_factory(
        lambda path, body: (200, llm_response('{"is_phishing": true, "reason": "credential bait", "score": 9}'))
    )
    backend = RemoteLlmBackend(remote_config(server.url), sleep=NO_SLEEP)
    record = backend.classify(make_sample(1, 1))
    assert record.predicted_label == 1
    assert record.score == 9
    assert record.reason == "credential bait"
    assert record.attempt_count == 1
    assert record.error is None

    _, request = server.requests[0]
    assert request["model"] == "stub-model"
    assert request["temperature"] == pytest.approx(0.1)
    roles = [m["role"] for m in request["messages"]]
    assert roles == ["system", "user"]
    assert "Rule 7" in request["messages"][1]["content"]


def test_remote_llm_timeout_attempts_exactly_max_retries_plus_one(stub_server_factory):
    def slow(path, body):
        time.sleep(0.5)
        return 200, llm_response('{"is_phishing": false, "reason": "", "score": 1}')

    server = stub_server_factory(slow)
    backend = RemoteLlmBackend(
        remote_config(server.url, timeout_s=0.1, max_retries=2), sleep=NO_SLEEP,
        rng=random.Random(0),
    )
    record = backend.classify(make_sample(4, 1))
    assert record.error is not None
    assert record.error.kind == "timeout"
    assert record.attempt_count == 3
    assert len(server.requests) == 3


def test_remote_llm_retries_500_then_succeeds(stub_server_factory):
    state = {"calls": 0}

    def flaky(path, body):
        state["calls"] += 1
        if state["calls"] == 1:
            return 500, {"error": "internal"}
        return 200, llm_response('{"is_phishing": false, "reason": "newsletter", "score": 2}')

    server = stub_server_factory(flaky)
    backend = RemoteLlmBackend(remote_config(server.url), sleep=NO_SLEEP, rng=random.Random(0))
    record = backend.classify(make_sample(5, 0))
    assert record.predicted_label == 0
    assert record.attempt_count == 2


def test_remote_llm_4xx_is_fatal_without_retry(stub_server_factory):
    server = stub_server_factory(lambda path, body: (404, {"error": "nope"}))
    backend = RemoteLlmBackend(remote_config(server.url), sleep=NO_SLEEP)
    record = backend.classify(make_sample(6, 0))
    assert record.error is not None
    assert record.error.kind == "protocol"
    assert len(server.requests) == 1


def test_remote_llm_repair_round_trip(stub_server_factory):
    state = {"calls": 0}

    def drifting(path, body):
        state["calls"] += 1
        if state["calls"] == 1:
            return 200, llm_response("I think it is phishing but I will not say more.")
        return 200, llm_response('{"is_phishing": true, "reason": "after reminder", "score": 7}')

    server = stub_server_factory(drifting)
    backend = RemoteLlmBackend(remote_config(server.url), sleep=NO_SLEEP)
    record = backend.classify(make_sample(7, 1))
    assert record.predicted_label == 1
    assert record.reason == "after reminder"
    assert record.attempt_count == 2
    second_prompt = server.requests[1][1]["messages"][1]["content"]
    assert "only the structured object" in second_prompt


def test_remote_llm_parse_failure_after_repair(stub_server_factory):
    server = stub_server_factory(lambda path, body: (200, llm_response("never valid")))
    backend = RemoteLlmBackend(remote_config(server.url), sleep=NO_SLEEP)
    record = backend.classify(make_sample(8, 1))
    assert record.error is not None
    assert record.error.kind == "parse"
    assert len(server.requests) == 2


def test_remote_llm_sends_api_key_from_env(stub_server_factory, monkeypatch):
    monkeypatch.setenv("STUB_LLM_KEY", "secret-token")
    server = stub_server_factory(
        lambda path, body: (200, llm_response('{"is_phishing": false, "reason": "", "score": 1}'))
    )
    backend = RemoteLlmBackend(remote_config(server.url, api_key_env="STUB_LLM_KEY"),
                               sleep=NO_SLEEP)
    assert backend._headers["Authorization"] == "Bearer secret-token"
    record = backend.classify(make_sample(9, 0))
    assert record.error is None


def test_remote_llm_complete_returns_raw_text(stub_server_factory):
    server = stub_server_factory(lambda path, body: (200, llm_response("raw generation text")))
    backend = RemoteLlmBackend(remote_config(server.url), sleep=NO_SLEEP)
    assert backend.complete("write something") == "raw generation text"


def test_probe_reachable_and_unreachable(stub_server_factory):
    server = stub_server_factory(lambda path, body: (200, {}))
    RemoteLlmBackend(remote_config(server.url), sleep=NO_SLEEP).probe()  # no raise

    dead = RemoteLlmBackend(remote_config("http://127.0.0.1:9/nothing", timeout_s=0.5),
                            sleep=NO_SLEEP)
    with pytest.raises(backends.BackendUnreachable):
        dead.probe()


def test_runner_drives_remote_backend_concurrently(stub_server_factory):
    def respond(path, body):
        time.sleep(0.01)
        return 200, llm_response('{"is_phishing": true, "reason": "ok", "score": 9}')

    server = stub_server_factory(respond)
    backend = RemoteLlmBackend(remote_config(server.url, max_in_flight=6), sleep=NO_SLEEP)
    samples = [make_sample(i, 1) for i in range(24)]
    records = run_evaluation(backend, samples)
    assert [r.sample_id for r in records] == [s.id for s in samples]
    assert all(r.error is None and r.predicted_label == 1 for r in records)
    assert len(server.requests) == 24


# --- sidecar client ----------------------------------------------------------------------

def test_sidecar_classify_against_stub(stub_server_factory, schema_dir):
    import jsonschema

    request_schema = json.loads((schema_dir / "predict_request.schema.json").read_text())
    response_schema = json.loads((schema_dir / "predict_response.schema.json").read_text())

    def respond(path, body):
        assert path == "/predict"
        jsonschema.validate(body, request_schema)
        payload = {"predictions": [{"label": 1, "confidence": 0.93}]}
        jsonschema.validate(payload, response_schema)
        return 200, payload

    server = stub_server_factory(respond)
    config = BackendConfig(kind=BackendKind.SIDECAR, endpoint=server.url, timeout_s=2.0,
                           max_retries=0)
    backend = SidecarBackend(config, sleep=NO_SLEEP)
    record = backend.classify(make_sample(1, 1))
    assert record.predicted_label == 1
    assert record.confidence == pytest.approx(0.93)
    assert record.error is None


def test_sidecar_malformed_prediction_is_protocol_error(stub_server_factory):
    server = stub_server_factory(lambda path, body: (200, {"predictions": [{"label": 7}]}))
    config = BackendConfig(kind=BackendKind.SIDECAR, endpoint=server.url, max_retries=0)
    record = SidecarBackend(config, sleep=NO_SLEEP).classify(make_sample(2, 0))
    assert record.error is not None
    assert record.error.kind == "protocol"


# --- runner -----------------------------------------------------------------------------

def scripted_mock(n: int, max_in_flight: int = 4, hold_s: float = 0.0) -> tuple[MockBackend, list]:
    samples = [make_sample(i, i % 2) for i in range(n)]
    script = {
        s.id: MockAnswer(label=s.label, score=5, latency_s=0.001, hold_s=hold_s)
        for s in samples
    }
    config = BackendConfig(kind=BackendKind.MOCK, max_in_flight=max_in_flight)
    return MockBackend(script, config), samples


def test_run_evaluation_order_and_count():
    backend, samples = scripted_mock(4)
    records = run_evaluation(backend, samples)
    assert [r.sample_id for r in records] == [s.id for s in samples]
    assert backend.calls == 4


def test_run_evaluation_bounded_concurrency():
    backend, samples = scripted_mock(100, max_in_flight=8, hold_s=0.005)
    records = run_evaluation(backend, samples)
    assert len(records) == 100
    assert backend.peak_in_flight <= 8
    assert backend.peak_in_flight >= 2  # sanity: it actually ran concurrently


def test_run_evaluation_embeds_per_sample_errors():
    samples = [make_sample(i, 0) for i in range(3)]
    script = {
        samples[0].id: MockAnswer(label=0),
        samples[1].id: MockAnswer(error=BackendFailure("timeout", "scripted failure")),
        samples[2].id: MockAnswer(label=1),
    }
    backend = MockBackend(script)
    records = run_evaluation(backend, samples)
    assert records[1].error is not None
    assert records[0].error is None and records[2].error is None


def test_journal_resume_reissues_only_missing(tmp_path):
    journal_path = tmp_path / "journal.jsonl"
    backend, samples = scripted_mock(800)

    with Journal(journal_path, run_id="run-1") as journal:
        run_evaluation(backend, samples[:50], journal=journal)
    assert backend.calls == 50

    resumed_backend = MockBackend(backend.script, backend.config)
    with Journal(journal_path, run_id="run-1") as journal:
        assert journal.preloaded == 50
        records = run_evaluation(resumed_backend, samples, journal=journal)
    assert resumed_backend.calls == 750
    assert len(records) == 800
    assert [r.sample_id for r in records] == [s.id for s in samples]


def test_journal_full_resume_reissues_nothing(tmp_path):
    journal_path = tmp_path / "journal.jsonl"
    backend, samples = scripted_mock(20)
    with Journal(journal_path, run_id="r") as journal:
        run_evaluation(backend, samples, journal=journal)

    fresh = MockBackend(backend.script, backend.config)
    with Journal(journal_path, run_id="r") as journal:
        records = run_evaluation(fresh, samples, journal=journal)
    assert fresh.calls == 0
    assert len(records) == 20


def test_journal_no_duplicate_lines_per_sample(tmp_path):
    journal_path = tmp_path / "journal.jsonl"
    backend, samples = scripted_mock(10)
    with Journal(journal_path, run_id="r") as journal:
        run_evaluation(backend, samples, journal=journal)
        # appending an already-journaled sample is a no-op
        journal.append(PredictionRecord(sample_id=samples[0].id, predicted_label=0))
    lines = [json.loads(l) for l in journal_path.read_text().splitlines() if l.strip()]
    ids = [entry["sample_id"] for entry in lines]
    assert len(ids) == len(set(ids)) == 10


def test_journal_tolerates_torn_final_line(tmp_path):
    journal_path = tmp_path / "journal.jsonl"
    backend, samples = scripted_mock(5)
    with Journal(journal_path, run_id="r") as journal:
        run_evaluation(backend, samples, journal=journal)
    # simulate a crash mid-append: truncate the last line
    text = journal_path.read_text()
    journal_path.write_text(text[: len(text) - 20])

    resumed_backend = MockBackend(backend.script, backend.config)
    with Journal(journal_path, run_id="r") as journal:
        assert journal.preloaded == 4
        records = run_evaluation(resumed_backend, samples, journal=journal)
    assert resumed_backend.calls == 1
    assert len(records) == 5
    assert all(r.error is None for r in records)


def test_journal_filters_by_run_id(tmp_path):
    journal_path = tmp_path / "journal.jsonl"
    with Journal(journal_path, run_id="run-a") as journal:
        journal.append(PredictionRecord(sample_id="s1", predicted_label=1))
    with Journal(journal_path, run_id="run-b") as journal:
        assert journal.preloaded == 0


def test_journal_replays_latency_exactly(tmp_path):
    journal_path = tmp_path / "journal.jsonl"
    backend, samples = scripted_mock(5)
    with Journal(journal_path, run_id="r") as journal:
        first = run_evaluation(backend, samples, journal=journal)
    with Journal(journal_path, run_id="r") as journal:
        second = run_evaluation(MockBackend({}, backend.config), samples, journal=journal)
    assert first == second


def test_mock_latency_statistics_exact():
    samples = [make_sample(i, 1) for i in range(3)]
    script = {s.id: MockAnswer(label=1, latency_s=lat) for s, lat in zip(samples, (0.001, 0.002, 0.003))}
    records = run_evaluation(MockBackend(script), samples)
    from phishbench.metrics import latency_stats

    stats = latency_stats(records)
    assert stats.mean_s == pytest.approx(0.002)
    assert stats.max_s == 0.003


def test_classify_module_function_delegates():
    backend = MockBackend({"s00001": MockAnswer(label=1)})
    record = backends.classify(backend, make_sample(1, 1))
    assert record.predicted_label == 1
