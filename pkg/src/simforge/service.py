"""HTTP facade over the orchestrator: session lifecycle, requirement
submission, live event streaming, human feedback, and report retrieval.

All state lives in the orchestrator's persisted sessions; the server itself
is stateless and can be restarted, after which streams resume from the
journal. Every error response carries a machine-readable code from the
closed set documented in ERROR_CODES.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
from contextlib import asynccontextmanager
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .orchestrator import (
    FeedbackNotExpected,
    InvalidTransition,
    Orchestrator,
    SessionFinished,
    UnknownSession,
)

log = logging.getLogger(__name__)

ERROR_CODES = (
    "unknown_session",
    "session_already_started",
    "session_finished",
    "feedback_not_expected",
    "capacity_exceeded",
    "validation_error",
    "internal_error",
)

HEARTBEAT_SECONDS = 15.0


@dataclass
class ServiceConfig:
    capacity: int = 8  # concurrent non-terminal sessions
    heartbeat_s: float = HEARTBEAT_SECONDS
    cors_origins: list[str] = field(default_factory=lambda: ["http://localhost:5173", "http://127.0.0.1:5173"])


class CreateSessionBody(BaseModel):
    model: str | None = None
    max_iterations: int | None = None
    pause_for_human: bool | None = None
    payload_kind: str | None = None


class RequirementsBody(BaseModel):
    requirements: str
    pause_for_human: bool | None = None
    payload_kind: str | None = None
    model: str | None = None


class FeedbackBody(BaseModel):
    text: str = ""
    approve: bool = False


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": {"code": code, "message": message}})


def sse_frame(event_kind: str, sequence: int, data: dict) -> str:
    body = json.dumps(data, sort_keys=True)
    return f"id: {sequence}\nevent: {event_kind}\ndata: {body}\n\n"


def create_app(orchestrator: Orchestrator, config: ServiceConfig | None = None) -> FastAPI:
    cfg = config or ServiceConfig()
    pipeline_threads: list[threading.Thread] = []

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        for thread in list(pipeline_threads):
            if thread.is_alive():
                thread.join(timeout=10.0)

    app = FastAPI(title="simforge", docs_url=None, redoc_url=None, lifespan=lifespan)
    app.state.orchestrator = orchestrator
    app.state.config = cfg
    app.state.pipeline_threads = pipeline_threads

    app.add_middleware(
        CORSMiddleware,
        allow_origins=cfg.cors_origins,
        allow_methods=["GET", "POST"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        return _error(422, "validation_error", str(exc.errors()[:3]))

    @app.exception_handler(Exception)
    async def on_internal_error(request: Request, exc: Exception):
        log.exception("unhandled service error")
        return _error(500, "internal_error", str(exc))

    def load_session(session_id: str):
        """In-memory first, then the on-disk store (server restart case)."""
        try:
            return orchestrator.get_state(session_id)
        except UnknownSession:
            return orchestrator.resume(session_id)  # raises UnknownSession again if absent

    @app.get("/api/health")
    def health():
        return {
            "status": "ok",
            "sessions": len(orchestrator.session_ids()),
            "active": orchestrator.active_count(),
            "capacity": cfg.capacity,
        }

    @app.post("/api/sessions", status_code=201)
    def create_session(body: CreateSessionBody | None = None):
        if orchestrator.active_count() >= cfg.capacity:
            return _error(503, "capacity_exceeded", f"at the limit of {cfg.capacity} active sessions")
        body = body or CreateSessionBody()
        kwargs: dict = {}
        if body.model is not None:
            kwargs["model"] = body.model
        if body.max_iterations is not None:
            kwargs["max_iterations"] = body.max_iterations
        if body.pause_for_human is not None:
            kwargs["pause_for_human"] = body.pause_for_human
        if body.payload_kind is not None:
            kwargs["payload_kind"] = body.payload_kind
        try:
            state = orchestrator.create_session(**kwargs)
        except ValueError as exc:
            return _error(422, "validation_error", str(exc))
        return {"session_id": state.session_id, "status": state.status, "created_at": state.created_at}

    @app.get("/api/sessions/{session_id}")
    def get_session(session_id: str):
        try:
            state = load_session(session_id)
        except UnknownSession:
            return _error(404, "unknown_session", session_id)
        return {
            "session_id": state.session_id,
            "status": state.status,
            "iterations_run": state.iteration,
            "max_iterations": state.max_iterations,
            "pause_for_human": state.pause_for_human,
            "verdict": state.last_record.verdict if state.last_record else None,
            "failure_reason": state.failure_reason,
        }

    @app.post("/api/sessions/{session_id}/requirements", status_code=202)
    def submit_requirements(session_id: str, body: RequirementsBody):
        if not body.requirements.strip():
            return _error(422, "validation_error", "requirements must be non-empty")
        try:
            state = load_session(session_id)
        except UnknownSession:
            return _error(404, "unknown_session", session_id)
        if state.status in ("converged", "failed"):
            return _error(409, "session_finished", f"session already {state.status}")
        if state.status != "created":
            return _error(409, "session_already_started", f"session is {state.status}")

        def run() -> None:
            try:
                orchestrator.submit_requirements(
                    session_id,
                    body.requirements,
                    pause_for_human=body.pause_for_human,
                    payload_kind=body.payload_kind,
                    model=body.model,
                )
            except Exception:
                log.exception("pipeline failed for session %s", session_id)

        thread = threading.Thread(target=run, name=f"pipeline-{session_id[:8]}", daemon=True)
        app.state.pipeline_threads.append(thread)
        thread.start()
        return {"status": "accepted", "session_id": session_id}

    @app.post("/api/sessions/{session_id}/feedback", status_code=202)
    def post_feedback(session_id: str, body: FeedbackBody):
        if not body.approve and not body.text.strip():
            return _error(422, "validation_error", "feedback requires text unless approve is set")
        try:
            load_session(session_id)
        except UnknownSession:
            return _error(404, "unknown_session", session_id)

        # approval is quick; refinement drives a whole iteration, so detach it
        if body.approve:
            try:
                state = orchestrator.apply_feedback(session_id, body.text, approve=True)
            except SessionFinished as exc:
                return _error(409, "session_finished", str(exc))
            except FeedbackNotExpected as exc:
                return _error(409, "feedback_not_expected", str(exc))
            return {"status": "accepted", "session_status": state.status}

        state = orchestrator.get_state(session_id)
        if state.status in ("converged", "failed"):
            return _error(409, "session_finished", f"session already {state.status}")
        if state.status == "created":
            return _error(409, "feedback_not_expected", "session has no running pipeline yet")

        if state.status == "awaiting_human":
            def run() -> None:
                try:
                    orchestrator.apply_feedback(session_id, body.text, approve=False)
                except Exception:
                    log.exception("feedback pipeline failed for session %s", session_id)

            thread = threading.Thread(target=run, name=f"feedback-{session_id[:8]}", daemon=True)
            app.state.pipeline_threads.append(thread)
            thread.start()
            return {"status": "accepted", "session_status": "resuming"}

        try:
            orchestrator.apply_feedback(session_id, body.text, approve=False)
        except SessionFinished as exc:
            return _error(409, "session_finished", str(exc))
        except FeedbackNotExpected as exc:
            return _error(409, "feedback_not_expected", str(exc))
        return {"status": "accepted", "session_status": state.status}

    @app.get("/api/sessions/{session_id}/events")
    def stream_events(session_id: str, from_sequence: int = 0):
        try:
            load_session(session_id)
        except UnknownSession:
            return _error(404, "unknown_session", session_id)

        def frames():
            live = orchestrator.bus.subscribe(session_id)
            try:
                last = from_sequence
                done = False
                # journal first so a reconnect never misses frames
                for ev in orchestrator.store.read_events(session_id, from_sequence=last):
                    last = ev.sequence
                    done = done or ev.kind == "session_done"
                    yield sse_frame(ev.kind, ev.sequence, ev.to_dict())
                while not done:
                    try:
                        ev = live.get(timeout=cfg.heartbeat_s)
                    except queue.Empty:
                        yield ": heartbeat\n\n"
                        continue
                    if ev.sequence <= last:
                        continue  # already served from the journal
                    last = ev.sequence
                    done = ev.kind == "session_done"
                    yield sse_frame(ev.kind, ev.sequence, ev.to_dict())
            finally:
                orchestrator.bus.unsubscribe(session_id, live)

        return StreamingResponse(frames(), media_type="text/event-stream", headers={
            "Cache-Control": "no-cache",
            "X-Accel-Buffering": "no",
        })

    @app.get("/api/sessions/{session_id}/report")
    def get_report(session_id: str):
        try:
            load_session(session_id)
        except UnknownSession:
            return _error(404, "unknown_session", session_id)
        return orchestrator.build_report(session_id)

    return app


def serve(orchestrator: Orchestrator, host: str = "127.0.0.1", port: int = 8000,
          config: ServiceConfig | None = None) -> None:
    """Blocking uvicorn server; SIGTERM/SIGINT drain in-flight work."""
    import uvicorn

    app = create_app(orchestrator, config)
    uvicorn.run(app, host=host, port=port, log_level="warning")
