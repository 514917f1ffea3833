"""Classifier backends and the evaluation runner.

Three backend kinds answer the same question (is this sample phishing?):
a remote chat-completion LLM, the local fine-tune/serve sidecar, and a
scripted mock for tests. The runner drives any of them over a bundle with
bounded concurrency, journaling completed answers so interrupted runs resume
without re-querying.
"""
from __future__ import annotations

import json
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable

import httpx

from . import promptkit
from .records import DatasetBundle, Sample

SYSTEM_MESSAGE = "You are a security analyst who classifies content as phishing or legitimate."
REPAIR_REMINDER = "\n\nRespond with only the structured object, no other text."

_RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


class BackendKind(Enum):
    REMOTE_LLM = "remote_llm"
    SIDECAR = "sidecar"
    MOCK = "mock"


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind
    endpoint: str = ""
    model_name: str = ""
    temperature: float = 0.1
    timeout_s: float = 60.0
    max_retries: int = 3
    max_in_flight: int = 4
    retry_backoff_base_s: float = 1.0
    api_key_env: str | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class BackendFailure:
    kind: str  # timeout | transport | protocol | parse
    detail: str


@dataclass(frozen=True)
class PredictionRecord:
    """One backend answer for one sample. Either predicted_label or error is
    authoritative, never both."""

    sample_id: str
    predicted_label: int | None
    score: int | None = None
    reason: str | None = None
    confidence: float | None = None
    latency_s: float = 0.0
    attempt_count: int = 1
    error: BackendFailure | None = None

    def __post_init__(self) -> None:
        if (self.predicted_label is None) == (self.error is None):
            raise ValueError(
                f"record for {self.sample_id!r} must carry exactly one of predicted_label/error"
            )
        if self.latency_s < 0:
            raise ValueError("latency must be >= 0")

    def to_dict(self) -> dict:
        d: dict = {
            "sample_id": self.sample_id,
            "predicted_label": self.predicted_label,
            "latency_s": self.latency_s,
            "attempt_count": self.attempt_count,
        }
        if self.score is not None:
            d["score"] = self.score
        if self.reason is not None:
            d["reason"] = self.reason
        if self.confidence is not None:
            d["confidence"] = self.confidence
        if self.error is not None:
            d["error"] = {"kind": self.error.kind, "detail": self.error.detail}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PredictionRecord":
        err = d.get("error")
        return cls(
            sample_id=str(d["sample_id"]),
            predicted_label=d.get("predicted_label"),
            score=d.get("score"),
            reason=d.get("reason"),
            confidence=d.get("confidence"),
            latency_s=float(d.get("latency_s", 0.0)),
            attempt_count=int(d.get("attempt_count", 1)),
            error=BackendFailure(err["kind"], err["detail"]) if err else None,
        )


class BackendUnreachable(RuntimeError):
    """Startup probe could not reach the backend endpoint."""


class _Retryable(Exception):
    def __init__(self, kind: str, detail: str):
        super().__init__(detail)
        self.kind = kind
        self.detail = detail


class _Fatal(Exception):
    def __init__(self, kind: str, detail: str, attempts: int = 0):
        super().__init__(detail)
        self.kind = kind
        self.detail = detail
        self.attempts = attempts


class _HttpBackend:
    """Shared retry/backoff plumbing for backends that speak HTTP."""

    def __init__(
        self,
        config: BackendConfig,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout_s)
        self._sleep = sleep
        self._rng = rng or random.Random()

    def close(self) -> None:
        self._client.close()

    def _post_json(self, url: str, payload: dict, headers: dict | None = None) -> dict:
        try:
            response = self._client.post(url, json=payload, headers=headers or {})
        except httpx.TimeoutException as exc:
            raise _Retryable("timeout", f"request timed out after {self.config.timeout_s}s: {exc}")
        except httpx.HTTPError as exc:
            raise _Retryable("transport", f"transport failure: {exc}")
        if response.status_code in _RETRYABLE_STATUS:
            raise _Retryable("transport", f"server returned status {response.status_code}")
        if response.status_code != 200:
            raise _Fatal("protocol", f"unexpected status {response.status_code}: {response.text[:200]}")
        try:
            body = response.json()
        except ValueError:
            raise _Fatal("protocol", f"non-JSON response body: {response.text[:200]}")
        if not isinstance(body, dict):
            raise _Fatal("protocol", f"expected JSON object, got {type(body).__name__}")
        return body

    def _probe_url(self) -> str:
        return self.config.endpoint

    def probe(self) -> None:
        """Cheap reachability check; raises BackendUnreachable on failure.

        Any HTTP response counts as reachable (chat endpoints often reject
        GET); only a transport-level failure means the service is absent.
        """
        try:
            self._client.get(self._probe_url(), timeout=min(5.0, self.config.timeout_s))
        except httpx.HTTPError as exc:
            raise BackendUnreachable(f"{self.config.endpoint}: {exc}") from exc

    def _call_with_retries(
        self, call: Callable[[], dict], attempts_so_far: int = 0
    ) -> tuple[dict, int, float]:
        """Run `call`, retrying retryable failures with full-jitter backoff.

        Returns (result, total attempts, duration of the successful attempt).
        Total attempts per call site is at most max_retries + 1.
        """
        attempts = attempts_so_far
        for retry_index in range(self.config.max_retries + 1):
            attempts += 1
            attempt_started = time.perf_counter()
            try:
                return call(), attempts, time.perf_counter() - attempt_started
            except _Retryable as exc:
                if retry_index == self.config.max_retries:
                    raise _Fatal(exc.kind, f"{exc.detail} (after {attempts} attempts)", attempts)
                cap = self.config.retry_backoff_base_s * (2**retry_index)
                self._sleep(self._rng.uniform(0.0, cap))
            except _Fatal as exc:
                exc.attempts = attempts
                raise
        raise AssertionError("unreachable")


class RemoteLlmBackend(_HttpBackend):
    """Chat-completion backend: prompt in, three-field verdict out."""

    def __init__(self, config: BackendConfig, prompt_spec: promptkit.PromptSpec | None = None, **kw):
        super().__init__(config, **kw)
        self._prompt_spec = prompt_spec or promptkit.PromptSpec()
        self._headers = {}
        if config.api_key_env:
            key = os.environ.get(config.api_key_env)
            if key:
                self._headers["Authorization"] = f"Bearer {key}"

    def _request(self, prompt: str) -> dict:
        return {
            "model": self.config.model_name,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": SYSTEM_MESSAGE},
                {"role": "user", "content": prompt},
            ],
        }

    @staticmethod
    def _extract_text(body: dict) -> str:
        choices = body.get("choices")
        if isinstance(choices, list) and choices and isinstance(choices[0], dict):
            message = choices[0].get("message")
            if isinstance(message, dict) and isinstance(message.get("content"), str):
                return message["content"]
            if isinstance(choices[0].get("text"), str):
                return choices[0]["text"]
        for key in ("content", "text"):
            if isinstance(body.get(key), str):
                return body[key]
        raise _Fatal("protocol", f"no generated text in response: {json.dumps(body)[:200]}")

    def complete(self, prompt: str) -> str:
        """One raw chat completion (used for synthetic generation)."""
        body, _, _ = self._call_with_retries(
            lambda: self._post_json(self.config.endpoint, self._request(prompt), self._headers)
        )
        return self._extract_text(body)

    def classify(self, sample: Sample) -> PredictionRecord:
        started = time.perf_counter()
        prompt = promptkit.build_prompt(sample, self._prompt_spec)
        attempts = 0
        try:
            call = lambda: self._post_json(self.config.endpoint, self._request(prompt), self._headers)
            body, attempts, latency = self._call_with_retries(call)
            try:
                verdict = promptkit.parse_verdict(self._extract_text(body))
            except promptkit.VerdictParseError:
                # One repair round-trip: models that wrapped or mangled the
                # object usually comply when reminded.
                repair = lambda: self._post_json(
                    self.config.endpoint, self._request(prompt + REPAIR_REMINDER), self._headers
                )
                body, attempts, latency = self._call_with_retries(repair, attempts)
                try:
                    verdict = promptkit.parse_verdict(self._extract_text(body))
                except promptkit.VerdictParseError as exc:
                    raise _Fatal("parse", str(exc), attempts)
            record = promptkit.verdict_to_prediction(verdict, sample.id, latency)
            return replace(record, attempt_count=attempts)
        except _Fatal as exc:
            return PredictionRecord(
                sample_id=sample.id,
                predicted_label=None,
                latency_s=time.perf_counter() - started,
                attempt_count=max(attempts, exc.attempts, 1),
                error=BackendFailure(exc.kind, exc.detail),
            )


class SidecarBackend(_HttpBackend):
    """Client for the local fine-tune/serve sidecar's prediction endpoint."""

    def _probe_url(self) -> str:
        return self.config.endpoint.rstrip("/") + "/status"

    def classify(self, sample: Sample) -> PredictionRecord:
        started = time.perf_counter()
        url = self.config.endpoint.rstrip("/") + "/predict"
        attempts = 0
        try:
            call = lambda: self._post_json(url, {"texts": [sample.text]})
            body, attempts, latency = self._call_with_retries(call)
            predictions = body.get("predictions")
            if not isinstance(predictions, list) or len(predictions) != 1:
                raise _Fatal("protocol", f"expected 1 prediction, got: {json.dumps(body)[:200]}")
            entry = predictions[0]
            label = entry.get("label") if isinstance(entry, dict) else None
            confidence = entry.get("confidence") if isinstance(entry, dict) else None
            if label not in (0, 1) or not isinstance(confidence, (int, float)):
                raise _Fatal("protocol", f"malformed prediction entry: {entry!r}")
            return PredictionRecord(
                sample_id=sample.id,
                predicted_label=int(label),
                confidence=float(confidence),
                latency_s=latency,
                attempt_count=attempts,
            )
        except _Fatal as exc:
            return PredictionRecord(
                sample_id=sample.id,
                predicted_label=None,
                latency_s=time.perf_counter() - started,
                attempt_count=max(attempts, exc.attempts, 1),
                error=BackendFailure(exc.kind, exc.detail),
            )


@dataclass(frozen=True)
class MockAnswer:
    label: int | None = None
    score: int | None = None
    reason: str | None = None
    latency_s: float = 0.0
    error: BackendFailure | None = None
    hold_s: float = 0.0  # real sleep, to exercise concurrency in tests


class MockBackend:
    """Scripted backend keyed by sample id, with concurrency instrumentation."""

    def __init__(self, script: dict[str, MockAnswer], config: BackendConfig | None = None):
        self.script = script
        self.config = config or BackendConfig(kind=BackendKind.MOCK)
        self._lock = threading.Lock()
        self.calls = 0
        self.in_flight = 0
        self.peak_in_flight = 0

    def classify(self, sample: Sample) -> PredictionRecord:
        with self._lock:
            self.calls += 1
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
        try:
            answer = self.script.get(sample.id)
            if answer is not None and answer.hold_s > 0:
                time.sleep(answer.hold_s)
            if answer is None:
                return PredictionRecord(
                    sample_id=sample.id,
                    predicted_label=None,
                    error=BackendFailure("protocol", f"no scripted answer for {sample.id!r}"),
                )
            if answer.error is not None:
                return PredictionRecord(
                    sample_id=sample.id,
                    predicted_label=None,
                    latency_s=answer.latency_s,
                    error=answer.error,
                )
            return PredictionRecord(
                sample_id=sample.id,
                predicted_label=answer.label,
                score=answer.score,
                reason=answer.reason,
                latency_s=answer.latency_s,
            )
        finally:
            with self._lock:
                self.in_flight -= 1


Backend = RemoteLlmBackend | SidecarBackend | MockBackend


def classify(backend: Backend, sample: Sample) -> PredictionRecord:
    return backend.classify(sample)


class Journal:
    """Append-only line journal of completed predictions, keyed by
    (run_id, sample_id). Re-opening with the same run id replays completions."""

    def __init__(self, path: str | Path, run_id: str):
        self.path = Path(path)
        self.run_id = run_id
        self._lock = threading.Lock()
        self.completed: dict[str, PredictionRecord] = {}
        if self.path.exists():
            with self.path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        entry = json.loads(line)
                    except json.JSONDecodeError:
                        continue  # torn append from an interrupted run; re-query it
                    if entry.get("run_id") != run_id:
                        continue
                    record = PredictionRecord.from_dict(entry)
                    self.completed.setdefault(record.sample_id, record)
        self.preloaded = len(self.completed)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("a", encoding="utf-8")

    def append(self, record: PredictionRecord) -> None:
        with self._lock:
            if record.sample_id in self.completed:
                return
            self.completed[record.sample_id] = record
            entry = {"run_id": self.run_id, **record.to_dict()}
            self._fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
            self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "Journal":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def run_evaluation(
    backend: Backend,
    samples: DatasetBundle | list[Sample],
    journal: Journal | None = None,
) -> list[PredictionRecord]:
    """Classify every sample, one record per sample in input order.

    At most config.max_in_flight requests are outstanding at once. Samples
    already present in the journal are not re-queried; fresh completions are
    journaled as they arrive.
    """
    sample_list = list(samples)
    done = dict(journal.completed) if journal is not None else {}
    pending = [s for s in sample_list if s.id not in done]

    if pending:
        max_workers = max(1, backend.config.max_in_flight)
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = {pool.submit(_classify_safely, backend, s): s for s in pending}
            for future in as_completed(futures):
                record = future.result()
                done[record.sample_id] = record
                if journal is not None:
                    journal.append(record)

    return [done[s.id] for s in sample_list]


def _classify_safely(backend: Backend, sample: Sample) -> PredictionRecord:
    try:
        return backend.classify(sample)
    except Exception as exc:  # backends should not raise; belt and braces
        return PredictionRecord(
            sample_id=sample.id,
            predicted_label=None,
            error=BackendFailure("protocol", f"backend raised {type(exc).__name__}: {exc}"),
        )


def read_journal_records(path: str | Path, run_id: str | None = None) -> list[PredictionRecord]:
    """All records in a journal file, optionally filtered to one run id."""
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            if run_id is not None and entry.get("run_id") != run_id:
                continue
            records.append(PredictionRecord.from_dict(entry))
    return records
