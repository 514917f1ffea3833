from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from phishbench.records import DatasetBundle, Provenance, Sample

GOLDEN_DIR = Path(__file__).parent / "golden"
SCHEMA_DIR = Path(__file__).parent.parent / "schemas"


def make_sample(i: int, label: int, text: str | None = None, **kw) -> Sample:
    return Sample(
        id=f"s{i:05d}",
        text=text if text is not None else f"sample text number {i}",
        label=label,
        **kw,
    )


def make_bundle(labels: list[int], texts: list[str] | None = None, **kw) -> DatasetBundle:
    samples = tuple(
        make_sample(i, label, texts[i] if texts else None, **kw)
        for i, label in enumerate(labels)
    )
    return DatasetBundle(samples, Provenance(source="fixture"))


def balanced_bundle(n0: int, n1: int) -> DatasetBundle:
    return make_bundle([0] * n0 + [1] * n1)


@pytest.fixture
def schema_dir() -> Path:
    return SCHEMA_DIR


class StubHandler(BaseHTTPRequestHandler):
    """Scripted HTTP responder; behavior injected via the server instance."""

    def do_POST(self) -> None:  # noqa: N802 (http.server API)
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        with self.server.lock:  # type: ignore[attr-defined]
            self.server.requests.append((self.path, body))  # type: ignore[attr-defined]
        status, payload = self.server.respond(self.path, body)  # type: ignore[attr-defined]
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args) -> None:
        pass


class QuietServer(ThreadingHTTPServer):
    daemon_threads = True

    def handle_error(self, request, client_address) -> None:
        pass  # client hang-ups (timeout tests) are expected


class StubServer:
    """Local HTTP stub standing in for a chat-completion API or the sidecar."""

    def __init__(self, respond):
        self.httpd = QuietServer(("127.0.0.1", 0), StubHandler)
        self.httpd.respond = respond  # type: ignore[attr-defined]
        self.httpd.requests = []  # type: ignore[attr-defined]
        self.httpd.lock = threading.Lock()  # type: ignore[attr-defined]
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def requests(self) -> list:
        return self.httpd.requests  # type: ignore[attr-defined]

    def close(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def stub_server_factory():
    servers: list[StubServer] = []

    def factory(respond) -> StubServer:
        server = StubServer(respond)
        servers.append(server)
        return server

    yield factory
    for server in servers:
        server.close()


def llm_response(verdict_json: str) -> dict:
    return {"choices": [{"message": {"content": verdict_json}}]}
