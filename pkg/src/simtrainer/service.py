"""HTTP service exposing scenes, sessions, scoring, and metrics.

Persistence is event-sourced: every state-changing request is appended to
the per-session event log before the response goes out, and startup replays
the logs to restore any in-flight session, so a crash loses at most the
request that never finished. Requests for one session are serialized by a
per-session lock; distinct sessions run concurrently against the shared
read-only engine.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import httpx
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .artifacts import ModelBundle, load_model_bundle
from .corpus import ingest_scripts
from .errors import (
    ConfigurationError,
    ContractViolation,
    IllegalStateError,
    NotFoundError,
    SchemaError,
    SimtrainerError,
    UndefinedResultError,
)
from .respond import FallbackResponder, FeatureExtractor, NGramGenerator, load_ranker
from .scorecard import (
    ScoreBundle,
    aggregate_metrics,
    load_rules,
    score_report,
    score_session,
)
from .simcore import (
    CloseReason,
    SessionEventLog,
    SessionPhase,
    SessionRecord,
    SessionState,
    SimPolicy,
    SimulatorEngine,
    fold_events,
    load_session_records,
)
from .textenc import HybridMatcher, load_embeddings
from .vindex import VectorIndex

ENV_PREFIX = "SIMTRAINER_"


@dataclass
class ServiceConfig:
    scripts_path: str
    embeddings_path: str
    lm_path: str
    ranker_path: str
    session_log_dir: str
    index_path: str | None = None
    rules_path: str | None = None
    host: str = "127.0.0.1"
    port: int = 8200
    advance_threshold: float = 0.5
    context_window: int = 4
    max_misses_before_hint: int = 2
    max_rounds: int = 60
    external_generator_url: str | None = None
    external_generator_timeout_ms: int = 2000
    ui_dir: str | None = None
    seed: int = 0

    @classmethod
    def from_file(cls, path: str | Path, seed: int | None = None) -> "ServiceConfig":
        """Load a JSON config; SIMTRAINER_* environment variables override fields."""
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name: f for f in fields(cls)}
        unknown = set(payload) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        for name, spec in known.items():
            env = os.environ.get(ENV_PREFIX + name.upper())
            if env is not None:
                if spec.type in ("int", "float", "int | None"):
                    payload[name] = json.loads(env)
                else:
                    payload[name] = env
        if seed is not None:
            payload["seed"] = seed
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ConfigurationError(f"bad service config: {exc}") from exc


class ExternalHttpGenerator:
    """Adapter for an external generation backend with n-gram fallback.

    One POST per call: {"context": [turns], "n": n, "scene": scene} ->
    {"candidates": [text, ...]}. Timeouts or malformed replies fall back to
    the local n-gram generator so a dead backend never stalls a session;
    ``last_source`` records which path produced the latest batch.
    """

    def __init__(
        self,
        url: str,
        timeout_s: float,
        fallback: NGramGenerator,
        transport: httpx.BaseTransport | None = None,
    ):
        self.url = url
        self.timeout_s = timeout_s
        self.fallback = fallback
        self.client = httpx.Client(transport=transport, timeout=timeout_s)
        self.last_source = "external"

    def generate_candidates(
        self, context_turns: Sequence[str], n: int, seed: int, scene: str | None = None
    ) -> list[str]:
        try:
            response = self.client.post(
                self.url, json={"context": list(context_turns), "n": n, "scene": scene}
            )
            response.raise_for_status()
            candidates = [str(c) for c in response.json()["candidates"]][:n]
            if len(candidates) != n or any(not c.strip() for c in candidates):
                raise ValueError("backend returned a bad candidate batch")
            self.last_source = "external"
            return candidates
        except Exception:
            self.last_source = "external_fallback_ngram"
            return self.fallback.generate_candidates(context_turns, n, seed, scene)


@dataclass
class Runtime:
    """Everything the API needs, assembled from the configured artifacts."""

    engine: SimulatorEngine
    scorer: ScoreBundle
    log: SessionEventLog
    config: ServiceConfig


def build_runtime(
    config: ServiceConfig,
    clock: Callable[[], float] = time.time,
    generator_transport: httpx.BaseTransport | None = None,
) -> Runtime:
    """Load and validate all artifacts at the configured paths."""
    scripts, errors = ingest_scripts(config.scripts_path)
    if errors:
        raise ConfigurationError(
            f"{config.scripts_path}: {len(errors)} invalid scripts, first: "
            f"line {errors[0].line}: {errors[0].message}"
        )
    if not scripts:
        raise ConfigurationError(f"{config.scripts_path}: no scripts")
    vocab, embeddings = load_embeddings(config.embeddings_path)
    bundle: ModelBundle = load_model_bundle(config.lm_path)
    ranker = load_ranker(config.ranker_path)
    index = VectorIndex.load(config.index_path) if config.index_path else None
    rules = load_rules(config.rules_path) if config.rules_path else []

    matcher = HybridMatcher(embeddings, vocab)
    ngram_generator = NGramGenerator(bundle.generator_lm)
    generator = (
        ExternalHttpGenerator(
            config.external_generator_url,
            config.external_generator_timeout_ms / 1000.0,
            fallback=ngram_generator,
            transport=generator_transport,
        )
        if config.external_generator_url
        else ngram_generator
    )
    responder = FallbackResponder(
        embeddings=embeddings,
        vocab=vocab,
        generator=generator,
        ranker=ranker,
        extractor=FeatureExtractor(embeddings, vocab, bundle.generator_lm),
        index=index,
    )
    policy = SimPolicy(
        advance_threshold=config.advance_threshold,
        context_window=config.context_window,
        max_misses_before_hint=config.max_misses_before_hint,
        max_rounds=config.max_rounds,
        seed=config.seed,
    )
    log = SessionEventLog(config.session_log_dir)
    engine = SimulatorEngine(
        scripts, matcher, responder, policy, clock=clock, event_sink=log.append
    )
    scorer = ScoreBundle(
        lm=bundle.fluency_lm,
        calibration=bundle.calibration,
        matcher=matcher,
        rules=rules,
    )
    return Runtime(engine=engine, scorer=scorer, log=log, config=config)


class CreateSessionBody(BaseModel):
    scene_id: str


class MessageBody(BaseModel):
    text: str
    idempotency_token: str | None = None


class CloseBody(BaseModel):
    reason: str = CloseReason.TRAINEE_QUIT.value


@dataclass
class _SessionHandle:
    state: SessionState
    lock: threading.Lock = field(default_factory=threading.Lock)
    responses_by_token: dict[str, dict] = field(default_factory=dict)
    record: SessionRecord | None = None


def create_app(runtime: Runtime) -> FastAPI:
    app = FastAPI(title="simtrainer", version="0.1.0")
    engine = runtime.engine
    handles: dict[str, _SessionHandle] = {}
    registry_lock = threading.Lock()

    # crash recovery: fold every event log back into a live or closed session
    for session_id in runtime.log.session_ids():
        folded = fold_events(runtime.log.read(session_id))
        handles[session_id] = _SessionHandle(
            state=folded.state,
            responses_by_token=folded.responses_by_token,
            record=folded.record,
        )

    def _handle(session_id: str) -> _SessionHandle:
        handle = handles.get(session_id)
        if handle is None:
            raise NotFoundError(f"unknown session {session_id!r}")
        return handle

    @app.exception_handler(NotFoundError)
    def _not_found(request: Request, exc: NotFoundError) -> JSONResponse:
        return JSONResponse({"code": "not_found", "message": str(exc)}, status_code=404)

    @app.exception_handler(IllegalStateError)
    def _illegal(request: Request, exc: IllegalStateError) -> JSONResponse:
        return JSONResponse({"code": "illegal_state", "message": str(exc)}, status_code=409)

    @app.exception_handler(UndefinedResultError)
    def _undefined(request: Request, exc: UndefinedResultError) -> JSONResponse:
        return JSONResponse({"code": "illegal_state", "message": str(exc)}, status_code=409)

    @app.exception_handler(ContractViolation)
    def _bad_request(request: Request, exc: ContractViolation) -> JSONResponse:
        return JSONResponse({"code": "bad_request", "message": str(exc)}, status_code=400)

    @app.exception_handler(SchemaError)
    def _bad_schema(request: Request, exc: SchemaError) -> JSONResponse:
        return JSONResponse({"code": "bad_request", "message": str(exc)}, status_code=400)

    @app.exception_handler(RequestValidationError)
    def _bad_body(request: Request, exc: RequestValidationError) -> JSONResponse:
        return JSONResponse({"code": "bad_request", "message": str(exc)}, status_code=400)

    @app.exception_handler(SimtrainerError)
    def _internal(request: Request, exc: SimtrainerError) -> JSONResponse:
        return JSONResponse({"code": "internal", "message": str(exc)}, status_code=500)

    @app.get("/scenes")
    def get_scenes() -> dict:
        return {"scenes": engine.scene_summaries()}

    @app.post("/sessions")
    def create_session(body: CreateSessionBody) -> dict:
        state, opening = engine.start_session(body.scene_id)
        with registry_lock:
            handles[state.session_id] = _SessionHandle(state=state)
        return {"session_id": state.session_id, "opening_utterance": opening}

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageBody) -> dict:
        handle = _handle(session_id)
        with handle.lock:
            token = body.idempotency_token
            if token and token in handle.responses_by_token:
                return handle.responses_by_token[token]
            result = engine.agent_reply(handle.state, body.text, token=token)
            response = {
                "bot_utterance": result.bot_utterance,
                "path": result.path.value,
                "completed": result.completed,
            }
            if token:
                handle.responses_by_token[token] = response
            return response

    @app.post("/sessions/{session_id}/hint")
    def post_hint(session_id: str) -> dict:
        handle = _handle(session_id)
        with handle.lock:
            hint = engine.request_hint(handle.state)
            return {"hint": hint.text, "revealed": hint.revealed, "full_text": hint.full_text}

    @app.post("/sessions/{session_id}/close")
    def post_close(session_id: str, body: CloseBody) -> dict:
        handle = _handle(session_id)
        try:
            reason = CloseReason(body.reason)
        except ValueError as exc:
            raise ContractViolation(f"unknown close reason {body.reason!r}") from exc
        with handle.lock:
            handle.record = engine.close_session(handle.state, reason)
            return {
                "session_id": session_id,
                "completed": handle.record.completed,
                "phase": handle.record.phase.value,
            }

    @app.get("/sessions/{session_id}/score")
    def get_score(session_id: str) -> dict:
        handle = _handle(session_id)
        with handle.lock:
            if handle.record is None:
                raise IllegalStateError("session must be closed before scoring")
            score = score_session(handle.record, runtime.scorer)
            return score_report(session_id, score)

    @app.get("/sessions/{session_id}/transcript")
    def get_transcript(session_id: str) -> dict:
        handle = _handle(session_id)
        with handle.lock:
            return {
                "session_id": session_id,
                "phase": handle.state.phase.value,
                "transcript": [
                    {
                        "speaker": e.speaker.value,
                        "text": e.text,
                        "tag": e.tag.value if e.tag else None,
                    }
                    for e in handle.state.transcript
                ],
            }

    @app.get("/metrics")
    def get_metrics() -> dict:
        records = load_session_records(runtime.log)
        if not records:
            return {
                "num_sessions": 0,
                "waiting_time_avg": None,
                "avg_duration": None,
                "avg_rounds": None,
                "completion_rate": None,
            }
        return aggregate_metrics(records).as_report()

    if runtime.config.ui_dir and Path(runtime.config.ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=runtime.config.ui_dir, html=True), name="ui")

    return app


def serve(config: ServiceConfig) -> None:
    """Validate artifacts, then run the API until interrupted."""
    import uvicorn

    runtime = build_runtime(config)
    app = create_app(runtime)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
