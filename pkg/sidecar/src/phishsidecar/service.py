"""Local HTTP service: POST /train, GET /status, POST /predict, GET /runs/{id}.

One training run at a time; prediction requests are serialized behind a lock
so concurrent clients are safe. Payload shapes match the golden schemas
shared with the evaluation pipeline.
"""
from __future__ import annotations

import json
import threading
import uuid
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field

from .config import TrainConfig
from .training import DatasetError, Predictor, Trainer


class TrainConfigPayload(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    base_model_name: str | None = None
    learning_rate: float | None = Field(default=None, gt=0)
    warmup_ratio: float | None = Field(default=None, ge=0, le=1)
    weight_decay: float | None = Field(default=None, ge=0)
    epochs: int | None = Field(default=None, ge=1)
    max_sequence_length: int | None = Field(default=None, ge=1)
    batch_size: int | None = Field(default=None, ge=1)
    seed: int | None = None

    def to_config(self) -> TrainConfig:
        overrides = {k: v for k, v in self.model_dump().items() if v is not None}
        return TrainConfig(**overrides)


class TrainRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: TrainConfigPayload
    train_path: str
    val_path: str


class PredictRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    texts: list[str]


class ServiceState:
    """All mutation funnels through this object's lock."""

    def __init__(self, runs_dir: str | Path):
        self.runs_dir = Path(runs_dir)
        self.runs_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._predict_lock = threading.Lock()
        self.state = "idle"  # idle | training | serving
        self.run_id: str | None = None
        self.epoch = 0
        self.predictor: Predictor | None = None
        self._worker: threading.Thread | None = None

    # -- status ---------------------------------------------------------------

    def status(self) -> dict:
        with self._lock:
            if self.state == "training":
                return {"state": "training", "run_id": self.run_id, "epoch": self.epoch}
            if self.state == "serving":
                return {"state": "serving", "run_id": self.run_id}
            return {"state": "idle"}

    # -- training -------------------------------------------------------------

    def start_training(self, config: TrainConfig, train_path: str, val_path: str) -> str:
        trainer = Trainer(config, self.runs_dir)
        # validate datasets up front so the caller gets a synchronous error
        from .training import read_canonical

        read_canonical(train_path)
        read_canonical(val_path)

        with self._lock:
            if self.state == "training":
                raise Busy(f"run {self.run_id} still training")
            run_id = uuid.uuid4().hex[:12]
            previous_run_id = self.run_id
            self.state = "training"
            self.run_id = run_id
            self.epoch = 0

        def work() -> None:
            try:
                _, predictor = trainer.train(
                    train_path, val_path, on_epoch=self._note_epoch, run_id=run_id
                )
                with self._lock:
                    self.predictor = predictor
                    self.state = "serving"
            except Exception as exc:
                # structured failure (covers encoder unavailability and OOM)
                failure = {
                    "run_id": run_id,
                    "status": "failed",
                    "error": f"{type(exc).__name__}: {exc}",
                }
                fail_dir = self.runs_dir / run_id
                fail_dir.mkdir(parents=True, exist_ok=True)
                (fail_dir / "failure.json").write_text(json.dumps(failure, indent=2) + "\n")
                manifest_path = fail_dir / "manifest.json"
                if manifest_path.is_file():
                    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
                    manifest["status"] = "failed"
                    manifest["error"] = failure["error"]
                    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
                with self._lock:
                    # fall back to whatever was being served before the failed run
                    if self.predictor is not None:
                        self.state = "serving"
                        self.run_id = previous_run_id
                    else:
                        self.state = "idle"
                        self.run_id = None

        worker = threading.Thread(target=work, daemon=True)
        with self._lock:
            self._worker = worker
        worker.start()
        return run_id

    def _note_epoch(self, epoch: int) -> None:
        with self._lock:
            self.epoch = epoch

    def wait(self, timeout: float | None = None) -> None:
        worker = self._worker
        if worker is not None:
            worker.join(timeout)

    # -- predict / manifests ----------------------------------------------------

    def predict(self, texts: list[str]) -> list[tuple[int, float]]:
        with self._lock:
            predictor = self.predictor
        if predictor is None:
            raise NoCheckpoint("no checkpoint loaded; train or load a run first")
        with self._predict_lock:
            return predictor.predict(texts)

    def load_run(self, run_id: str) -> None:
        checkpoint = self.runs_dir / run_id / "checkpoint.pt"
        if not checkpoint.is_file():
            raise KeyError(run_id)
        predictor = Predictor.load(checkpoint)
        with self._lock:
            self.predictor = predictor
            self.run_id = run_id
            self.state = "serving"

    def manifest(self, run_id: str) -> dict:
        path = self.runs_dir / run_id / "manifest.json"
        if not path.is_file():
            raise KeyError(run_id)
        return json.loads(path.read_text(encoding="utf-8"))


class Busy(RuntimeError):
    pass


class NoCheckpoint(RuntimeError):
    pass


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="phishsidecar")
    app.state.service = state

    @app.post("/train")
    def train(request: TrainRequest) -> dict:
        try:
            config = request.config.to_config()
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        try:
            run_id = state.start_training(config, request.train_path, request.val_path)
        except DatasetError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        except Busy as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {"run_id": run_id}

    @app.get("/status")
    def status() -> dict:
        return state.status()

    @app.post("/predict")
    def predict(request: PredictRequest) -> dict:
        try:
            results = state.predict(request.texts)
        except NoCheckpoint as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {
            "predictions": [
                {"label": label, "confidence": confidence} for label, confidence in results
            ]
        }

    @app.get("/runs/{run_id}")
    def run_manifest(run_id: str) -> dict:
        try:
            return state.manifest(run_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")

    return app


def main() -> None:
    import argparse

    import uvicorn

    parser = argparse.ArgumentParser(description="fine-tune-and-serve sidecar")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8731)
    parser.add_argument("--runs-dir", default="sidecar_runs")
    parser.add_argument("--load-run", default=None, help="Serve an existing run id at startup.")
    args = parser.parse_args()

    state = ServiceState(args.runs_dir)
    if args.load_run:
        state.load_run(args.load_run)
    uvicorn.run(create_app(state), host=args.host, port=args.port)


if __name__ == "__main__":
    main()
