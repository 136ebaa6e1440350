"""Session orchestration: drives the agents through iterative refinement.

A session walks a fixed status graph, emits a gapless typed event stream
(every phase gets exactly one started/finished pair), and persists everything
(journal, state snapshots, scripts, raw run outputs) under its own directory
so any run can be resumed or replayed later.
"""

from __future__ import annotations

import copy
import json
import logging
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from queue import SimpleQueue

from .agents import (
    DEFAULT_MODEL,
    ExtractionIncomplete,
    GeneratedScript,
    InterpretationReport,
    NoCodeBlock,
    OutOfDomain,
    Retriever,
    ShapeCheckFailed,
    SimulationSpec,
    TestCase,
    TestSuite,
    Check,
    ToolchainUnavailable,
    design_tests,
    execute_and_collect,
    extract_spec,
    generate_script,
    interpret_results,
    revalidate_suite,
)
from .gateway import ChatRequest, ChatResponse, GatewayError
from .results import ExecutionReport
from .toolchain import SimulationToolchain, fake_toolchain

log = logging.getLogger(__name__)

STATE_FORMAT_VERSION = 1
DEFAULT_MAX_ITERATIONS = 5

STATUSES = (
    "created",
    "extracting",
    "generating",
    "testing",
    "executing",
    "interpreting",
    "awaiting_human",
    "converged",
    "failed",
)

TERMINAL_STATUSES = ("converged", "failed")

# generating -> generating covers regeneration after a failed shape check
LEGAL_TRANSITIONS: dict[str, tuple[str, ...]] = {
    "created": ("extracting",),
    "extracting": ("generating", "failed"),
    "generating": ("testing", "generating", "failed"),
    "testing": ("executing", "failed"),
    "executing": ("interpreting", "failed"),
    "interpreting": ("generating", "awaiting_human", "converged", "failed"),
    "awaiting_human": ("generating", "converged", "failed"),
    "converged": (),
    "failed": (),
}

EVENT_KINDS = (
    "phase_started",
    "phase_finished",
    "llm_call",
    "tool_run",
    "case_result",
    "iteration_done",
    "human_feedback_applied",
    "session_done",
)

PHASES = ("extract", "generate", "design", "execute", "interpret")

# status the session shows while each phase runs
_PHASE_STATUS = {
    "extract": "extracting",
    "generate": "generating",
    "design": "testing",
    "execute": "executing",
    "interpret": "interpreting",
}


class OrchestratorError(Exception):
    pass


class UnknownSession(OrchestratorError):
    pass


class InvalidTransition(OrchestratorError):
    def __init__(self, current: str, requested: str):
        super().__init__(f"illegal status transition {current} -> {requested}")
        self.current = current
        self.requested = requested


class SessionFinished(OrchestratorError):
    """Feedback or requirements arrived after the session reached a terminal status."""


class FeedbackNotExpected(OrchestratorError):
    """Feedback arrived in a status that cannot accept it."""


def new_session_id() -> str:
    # token_urlsafe(16) carries 128 bits, comfortably past unguessable
    return secrets.token_urlsafe(16)


@dataclass
class AgentEvent:
    session_id: str
    sequence: int
    kind: str
    timestamp: float
    payload: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "sequence": self.sequence,
            "kind": self.kind,
            "timestamp": self.timestamp,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AgentEvent":
        return cls(
            session_id=d["session_id"],
            sequence=int(d["sequence"]),
            kind=d["kind"],
            timestamp=float(d["timestamp"]),
            payload=d.get("payload") or {},
        )


class EventBus:
    """Fan-out of live session events to any number of subscriber queues.

    Emission never blocks: subscribers get unbounded queues and slow consumers
    only grow their own backlog.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._subs: dict[str, list[SimpleQueue]] = {}

    def subscribe(self, session_id: str) -> SimpleQueue:
        q: SimpleQueue = SimpleQueue()
        with self._lock:
            self._subs.setdefault(session_id, []).append(q)
        return q

    def unsubscribe(self, session_id: str, q: SimpleQueue) -> None:
        with self._lock:
            subs = self._subs.get(session_id, [])
            if q in subs:
                subs.remove(q)
            if not subs:
                self._subs.pop(session_id, None)

    def publish(self, event: AgentEvent) -> None:
        with self._lock:
            subs = list(self._subs.get(event.session_id, []))
        for q in subs:
            q.put(event)


@dataclass
class IterationRecord:
    """Everything one refinement round produced, serialized for persistence."""

    index: int
    script: dict | None = None
    suite: dict | None = None
    report: dict | None = None
    interpretation: dict | None = None
    feedback_source: str | None = None  # agent | human | both, None on round 1
    phase_timings: dict = field(default_factory=dict)
    wall_s: float = 0.0
    shape_missing: list[str] = field(default_factory=list)
    feedback_out: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "script": self.script,
            "suite": self.suite,
            "report": self.report,
            "interpretation": self.interpretation,
            "feedback_source": self.feedback_source,
            "phase_timings": dict(self.phase_timings),
            "wall_s": self.wall_s,
            "shape_missing": list(self.shape_missing),
            "feedback_out": list(self.feedback_out),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IterationRecord":
        return cls(
            index=int(d["index"]),
            script=d.get("script"),
            suite=d.get("suite"),
            report=d.get("report"),
            interpretation=d.get("interpretation"),
            feedback_source=d.get("feedback_source"),
            phase_timings=dict(d.get("phase_timings", {})),
            wall_s=float(d.get("wall_s", 0.0)),
            shape_missing=list(d.get("shape_missing", [])),
            feedback_out=list(d.get("feedback_out", [])),
        )

    @property
    def verdict(self) -> str | None:
        return (self.interpretation or {}).get("verdict")

    @property
    def all_cases_passed(self) -> bool:
        return bool((self.report or {}).get("all_passed"))

    def observed_error_names(self) -> list[str]:
        return [e["class"] for e in (self.report or {}).get("error_classes", [])]


@dataclass
class SessionState:
    session_id: str
    status: str = "created"
    requirements: str | None = None
    pause_for_human: bool = False
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    payload_kind: str = "cpp"
    model: str = DEFAULT_MODEL
    spec: SimulationSpec | None = None
    suite: TestSuite | None = None
    iterations: list[IterationRecord] = field(default_factory=list)
    human_feedback: list[dict] = field(default_factory=list)  # {timestamp, text, approve}
    pending_agent_feedback: list[str] = field(default_factory=list)
    pending_human_feedback: list[str] = field(default_factory=list)
    failure_reason: str | None = None
    llm_calls: int = 0
    llm_time_s: float = 0.0
    tool_time_s: float = 0.0
    created_at: float = 0.0
    updated_at: float = 0.0

    @property
    def iteration(self) -> int:
        return len(self.iterations)

    @property
    def last_record(self) -> IterationRecord | None:
        return self.iterations[-1] if self.iterations else None

    def to_dict(self) -> dict:
        return {
            "format_version": STATE_FORMAT_VERSION,
            "session_id": self.session_id,
            "status": self.status,
            "requirements": self.requirements,
            "pause_for_human": self.pause_for_human,
            "max_iterations": self.max_iterations,
            "payload_kind": self.payload_kind,
            "model": self.model,
            "spec": self.spec.to_dict() if self.spec else None,
            "suite": self.suite.to_dict() if self.suite else None,
            "iterations": [r.to_dict() for r in self.iterations],
            "human_feedback": list(self.human_feedback),
            "pending_agent_feedback": list(self.pending_agent_feedback),
            "pending_human_feedback": list(self.pending_human_feedback),
            "failure_reason": self.failure_reason,
            "llm_calls": self.llm_calls,
            "llm_time_s": self.llm_time_s,
            "tool_time_s": self.tool_time_s,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionState":
        if d.get("format_version") != STATE_FORMAT_VERSION:
            raise OrchestratorError(f"unsupported state format: {d.get('format_version')!r}")
        spec = SimulationSpec(**d["spec"]) if d.get("spec") else None
        suite = suite_from_dict(d["suite"]) if d.get("suite") else None
        return cls(
            session_id=d["session_id"],
            status=d["status"],
            requirements=d.get("requirements"),
            pause_for_human=bool(d.get("pause_for_human", False)),
            max_iterations=int(d.get("max_iterations", DEFAULT_MAX_ITERATIONS)),
            payload_kind=d.get("payload_kind", "cpp"),
            model=d.get("model", DEFAULT_MODEL),
            spec=spec,
            suite=suite,
            iterations=[IterationRecord.from_dict(r) for r in d.get("iterations", [])],
            human_feedback=list(d.get("human_feedback", [])),
            pending_agent_feedback=list(d.get("pending_agent_feedback", [])),
            pending_human_feedback=list(d.get("pending_human_feedback", [])),
            failure_reason=d.get("failure_reason"),
            llm_calls=int(d.get("llm_calls", 0)),
            llm_time_s=float(d.get("llm_time_s", 0.0)),
            tool_time_s=float(d.get("tool_time_s", 0.0)),
            created_at=float(d.get("created_at", 0.0)),
            updated_at=float(d.get("updated_at", 0.0)),
        )


def suite_from_dict(d: dict) -> TestSuite:
    return TestSuite(
        cases=[
            TestCase(
                case_id=c["case_id"],
                kind=c["kind"],
                description=c.get("description", ""),
                check=Check(c["check"]["field"], c["check"]["op"], c["check"].get("value")),
                overrides=c.get("overrides", {}),
            )
            for c in d["cases"]
        ]
    )


class SessionStore:
    """Append-only journal plus snapshot persistence, one directory per session."""

    def __init__(self, root: Path):
        # resolve so workdirs and payload paths stay valid for toolchain
        # children, which run with cwd set to their own sandbox
        self.root = Path(root).resolve()
        self.root.mkdir(parents=True, exist_ok=True)

    def session_dir(self, session_id: str) -> Path:
        return self.root / session_id

    def events_path(self, session_id: str) -> Path:
        return self.session_dir(session_id) / "events.jsonl"

    def state_path(self, session_id: str) -> Path:
        return self.session_dir(session_id) / "state.json"

    def prepare(self, session_id: str) -> None:
        d = self.session_dir(session_id)
        (d / "scripts").mkdir(parents=True, exist_ok=True)
        (d / "outputs").mkdir(parents=True, exist_ok=True)

    def append_event(self, event: AgentEvent) -> None:
        with open(self.events_path(event.session_id), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event.to_dict(), sort_keys=True) + "\n")

    def write_state(self, state: SessionState) -> None:
        path = self.state_path(state.session_id)
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(state.to_dict(), sort_keys=True, indent=2), encoding="utf-8")
        tmp.replace(path)

    def load_state(self, session_id: str) -> SessionState:
        path = self.state_path(session_id)
        if not path.exists():
            raise UnknownSession(session_id)
        return SessionState.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def read_events(self, session_id: str, from_sequence: int = 0) -> list[AgentEvent]:
        path = self.events_path(session_id)
        if not path.exists():
            return []
        events = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                ev = AgentEvent.from_dict(json.loads(line))
                if ev.sequence > from_sequence:
                    events.append(ev)
        return events

    def save_script(self, session_id: str, script: GeneratedScript) -> Path:
        ext = ".cc" if script.payload_kind == "cpp" else ".py"
        path = self.session_dir(session_id) / "scripts" / f"iter-{script.iteration:02d}{ext}"
        path.write_text(script.source_text, encoding="utf-8")
        return path

    def outputs_dir(self, session_id: str, iteration: int) -> Path:
        d = self.session_dir(session_id) / "outputs" / f"iter-{iteration:02d}"
        d.mkdir(parents=True, exist_ok=True)
        return d

    def list_sessions(self) -> list[str]:
        if not self.root.exists():
            return []
        return sorted(p.name for p in self.root.iterdir() if (p / "state.json").exists())


class _Session:
    """In-memory handle: state plus the event sequence counter and run lock."""

    def __init__(self, state: SessionState, last_sequence: int = 0):
        self.state = state
        self.last_sequence = last_sequence
        self.run_lock = threading.Lock()
        self.seq_lock = threading.Lock()
        self.feedback_lock = threading.Lock()  # guards the pending feedback queues
        self.wall_anchor: float | None = None  # iteration wall clock start
        self.carry_timings: dict[str, float] = {}  # extract time rides into round 1


class InstrumentedGateway:
    """Wraps a provider so every chat call lands in the event stream."""

    def __init__(self, provider, on_call):
        self._provider = provider
        self._on_call = on_call

    def chat_tagged(self, req: ChatRequest, tag: str) -> ChatResponse:
        resp = self._provider.chat(req)
        self._on_call(tag, req, resp)
        return resp

    def chat(self, req: ChatRequest) -> ChatResponse:
        return self.chat_tagged(req, "untagged")


def check_convergence(record: IterationRecord, max_iterations: int) -> str:
    """Decide what follows a finished iteration: "converged" when every case
    passed, no error class fired, and the verdict agrees; "give_up" at the
    iteration cap; "continue" otherwise."""
    if (
        record.all_cases_passed
        and not record.observed_error_names()
        and record.verdict == "meets_criteria"
    ):
        return "converged"
    if record.index >= max_iterations:
        return "give_up"
    return "continue"


def derive_feedback(interpretation: InterpretationReport, report: ExecutionReport) -> list[str]:
    items = []
    for f in interpretation.findings:
        line = f"{f.metric}: {f.observation}"
        if f.recommendation:
            line += f" (suggested: {f.recommendation})"
        items.append(line)
    for c in report.cases:
        if not c.passed and not any(c.case_id in it for it in items):
            items.append(f"{c.case_id}: failed ({c.detail})")
    return items[:8]


class Orchestrator:
    """Owns all sessions for one provider/toolchain/store configuration.

    One session's pipeline is strictly sequential; concurrent sessions are
    bounded by ``max_workers``.
    """

    def __init__(
        self,
        provider,
        store: SessionStore,
        toolchain: SimulationToolchain | None = None,
        retriever: Retriever | None = None,
        bus: EventBus | None = None,
        max_workers: int = 4,
        clock=time.time,
    ):
        self.provider = provider
        self.store = store
        self.toolchain = toolchain or fake_toolchain()
        self.retriever = retriever
        self.bus = bus or EventBus()
        self.clock = clock
        self._workers = threading.Semaphore(max(1, max_workers))
        self._sessions: dict[str, _Session] = {}
        self._sessions_lock = threading.Lock()

    # -- session lifecycle -----------------------------------------------------

    def create_session(
        self,
        pause_for_human: bool = False,
        max_iterations: int = DEFAULT_MAX_ITERATIONS,
        payload_kind: str = "cpp",
        model: str = DEFAULT_MODEL,
        session_id: str | None = None,
    ) -> SessionState:
        if max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if payload_kind not in ("cpp", "python"):
            raise ValueError("payload_kind must be cpp or python")
        sid = session_id or new_session_id()
        now = self.clock()
        state = SessionState(
            session_id=sid,
            pause_for_human=pause_for_human,
            max_iterations=max_iterations,
            payload_kind=payload_kind,
            model=model,
            created_at=now,
            updated_at=now,
        )
        session = _Session(state)
        with self._sessions_lock:
            if sid in self._sessions:
                raise OrchestratorError(f"session id collision: {sid}")
            self._sessions[sid] = session
        self.store.prepare(sid)
        self.store.write_state(state)
        return state

    def _get(self, session_id: str) -> _Session:
        with self._sessions_lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise UnknownSession(session_id)
        return session

    def get_state(self, session_id: str) -> SessionState:
        return self._get(session_id).state

    def session_ids(self) -> list[str]:
        with self._sessions_lock:
            return sorted(self._sessions)

    def active_count(self) -> int:
        with self._sessions_lock:
            return sum(1 for s in self._sessions.values() if s.state.status not in TERMINAL_STATUSES)

    def resume(self, session_id: str) -> SessionState:
        """Reload a persisted session (e.g. after a process restart); event
        sequences continue from the journal."""
        with self._sessions_lock:
            if session_id in self._sessions:
                return self._sessions[session_id].state
        state = self.store.load_state(session_id)
        events = self.store.read_events(session_id)
        last_seq = events[-1].sequence if events else 0
        session = _Session(state, last_sequence=last_seq)
        with self._sessions_lock:
            self._sessions[session_id] = session
        return state

    # -- event plumbing ----------------------------------------------------------

    def _emit(self, session: _Session, kind: str, payload: dict) -> AgentEvent:
        with session.seq_lock:
            session.last_sequence += 1
            event = AgentEvent(
                session_id=session.state.session_id,
                sequence=session.last_sequence,
                kind=kind,
                timestamp=self.clock(),
                payload=payload,
            )
            self.store.append_event(event)
        self.bus.publish(event)
        return event

    def _transition(self, session: _Session, new_status: str) -> None:
        current = session.state.status
        if new_status not in LEGAL_TRANSITIONS.get(current, ()):
            raise InvalidTransition(current, new_status)
        session.state.status = new_status
        session.state.updated_at = self.clock()
        self.store.write_state(session.state)

    def _gateway_for(self, session: _Session) -> InstrumentedGateway:
        def on_call(tag: str, req: ChatRequest, resp: ChatResponse) -> None:
            session.state.llm_calls += 1
            session.state.llm_time_s += resp.latency
            self._emit(session, "llm_call", {
                "tag": tag,
                "model": req.model_name,
                "messages": len(req.messages),
                "prompt_tokens": resp.token_usage.prompt,
                "completion_tokens": resp.token_usage.completion,
                "latency_s": resp.latency,
            })

        return InstrumentedGateway(self.provider, on_call)

    def _finish(self, session: _Session, status: str, reason: str | None = None) -> None:
        state = session.state
        if status == "failed":
            state.failure_reason = reason
        self._transition(session, status)
        payload = {"status": status, "iterations": state.iteration}
        if reason:
            payload["reason"] = reason
        if state.last_record and state.last_record.verdict:
            payload["verdict"] = state.last_record.verdict
        self._emit(session, "session_done", payload)
        self.store.write_state(state)

    # -- the pipeline ------------------------------------------------------------

    def submit_requirements(
        self,
        session_id: str,
        requirements: str,
        pause_for_human: bool | None = None,
        payload_kind: str | None = None,
        model: str | None = None,
    ) -> SessionState:
        """Run the full pipeline: extraction, then refinement rounds until
        convergence, failure, or a pause for human review."""
        if not requirements or not requirements.strip():
            raise ValueError("requirements must be non-empty")
        session = self._get(session_id)
        with self._workers, session.run_lock:
            state = session.state
            if state.status in TERMINAL_STATUSES:
                raise SessionFinished(f"session already {state.status}")
            if state.status != "created":
                raise InvalidTransition(state.status, "extracting")
            if pause_for_human is not None:
                state.pause_for_human = pause_for_human
            if payload_kind is not None:
                if payload_kind not in ("cpp", "python"):
                    raise ValueError("payload_kind must be cpp or python")
                state.payload_kind = payload_kind
            if model is not None:
                state.model = model
            state.requirements = requirements.strip()
            gateway = self._gateway_for(session)

            self._transition(session, "extracting")
            self._emit(session, "phase_started", {"phase": "extract"})
            phase_start = time.perf_counter()
            session.wall_anchor = phase_start
            try:
                state.spec = extract_spec(state.requirements, gateway, self.retriever, state.model)
            except (OutOfDomain, ExtractionIncomplete, GatewayError) as exc:
                self._emit(session, "phase_finished", {
                    "phase": "extract",
                    "duration_s": time.perf_counter() - phase_start,
                    "error": str(exc),
                })
                self._finish(session, "failed", f"extraction failed: {exc}")
                return state
            extract_s = time.perf_counter() - phase_start
            session.carry_timings = {"extract": extract_s}
            self._emit(session, "phase_finished", {
                "phase": "extract",
                "duration_s": extract_s,
                "spec": state.spec.to_dict(),
            })
            self.store.write_state(state)
            return self._iterate(session, gateway)

    def apply_feedback(self, session_id: str, text: str = "", approve: bool = False) -> SessionState:
        """Route a human decision into the loop.

        On a paused session, approve finalizes the convergence check and text
        feedback seeds the next round. On a running session, text is queued
        and merged into the next generation prompt.
        """
        session = self._get(session_id)
        state = session.state
        if state.status in TERMINAL_STATUSES:
            raise SessionFinished(f"session already {state.status}")
        if state.status == "created":
            raise FeedbackNotExpected("session has no running pipeline yet")
        if not approve and not text.strip():
            raise ValueError("feedback requires text unless approve is set")

        if state.status != "awaiting_human":
            # pipeline is mid-flight: queue for the next generate prompt
            if approve:
                raise FeedbackNotExpected("approve is only valid while the session is paused")
            with session.feedback_lock:
                state.pending_human_feedback.append(text.strip())
            state.human_feedback.append({"timestamp": self.clock(), "text": text.strip(), "approve": False})
            self._emit(session, "human_feedback_applied", {"text": text.strip(), "approve": False, "queued": True})
            return state

        with self._workers, session.run_lock:
            if approve:
                record = state.last_record
                if record is None or check_convergence(record, state.max_iterations) != "converged":
                    raise FeedbackNotExpected("cannot approve: the last iteration did not meet the criteria")
            state.human_feedback.append({"timestamp": self.clock(), "text": text.strip(), "approve": approve})
            self._emit(session, "human_feedback_applied", {"text": text.strip(), "approve": approve, "queued": False})
            if approve:
                self._finish(session, "converged")
                return state
            if state.iteration >= state.max_iterations:
                self._finish(session, "failed", "iteration cap reached without convergence")
                return state
            state.pending_human_feedback.append(text.strip())
            gateway = self._gateway_for(session)
            return self._iterate(session, gateway)

    def _iterate(self, session: _Session, gateway: InstrumentedGateway) -> SessionState:
        state = session.state
        while True:
            index = state.iteration + 1
            record = IterationRecord(index=index)
            record.phase_timings.update(session.carry_timings)
            session.carry_timings = {}
            if session.wall_anchor is None:
                session.wall_anchor = time.perf_counter()

            with session.feedback_lock:
                human_items = list(state.pending_human_feedback)
                agent_items = list(state.pending_agent_feedback)
                state.pending_human_feedback.clear()
                state.pending_agent_feedback.clear()
            feedback = human_items + agent_items
            if human_items and agent_items:
                record.feedback_source = "both"
            elif human_items:
                record.feedback_source = "human"
            elif agent_items:
                record.feedback_source = "agent"

            self._transition(session, "generating")
            self._emit(session, "phase_started", {"phase": "generate", "iteration": index})
            phase_start = time.perf_counter()
            try:
                script = generate_script(
                    state.spec,
                    feedback or None,
                    gateway,
                    self.retriever,
                    state.model,
                    payload_kind=state.payload_kind,
                    iteration=index,
                )
            except ShapeCheckFailed as exc:
                record.phase_timings["generate"] = time.perf_counter() - phase_start
                record.script = exc.script.to_dict()
                record.shape_missing = list(exc.missing)
                record.feedback_out = [
                    "static shape check failed; the script must include these blocks: "
                    + ", ".join(exc.missing)
                ]
                self.store.save_script(state.session_id, exc.script)
                self._emit(session, "phase_finished", {
                    "phase": "generate",
                    "iteration": index,
                    "duration_s": record.phase_timings["generate"],
                    "error": "shape check failed",
                    "missing": exc.missing,
                })
                record.wall_s = time.perf_counter() - session.wall_anchor
                session.wall_anchor = None
                state.iterations.append(record)
                decision = "give_up" if index >= state.max_iterations else "continue"
                self._emit(session, "iteration_done", {
                    "iteration": index,
                    "decision": decision,
                    "outcome": "shape_check_failed",
                    "awaiting_human": False,
                })
                if decision == "give_up":
                    self._finish(session, "failed", "iteration cap reached without convergence")
                    return state
                state.pending_agent_feedback = list(record.feedback_out)
                self.store.write_state(state)
                continue
            except (NoCodeBlock, GatewayError) as exc:
                self._emit(session, "phase_finished", {
                    "phase": "generate",
                    "iteration": index,
                    "duration_s": time.perf_counter() - phase_start,
                    "error": str(exc),
                })
                record.wall_s = time.perf_counter() - session.wall_anchor
                session.wall_anchor = None
                state.iterations.append(record)
                self._finish(session, "failed", f"script generation failed: {exc}")
                return state

            record.phase_timings["generate"] = time.perf_counter() - phase_start
            record.script = script.to_dict()
            self.store.save_script(state.session_id, script)
            self._emit(session, "phase_finished", {
                "phase": "generate",
                "iteration": index,
                "duration_s": record.phase_timings["generate"],
                "payload_kind": script.payload_kind,
                "fingerprint": script.prompt_fingerprint,
                "retrieved_chunk_ids": script.retrieved_chunk_ids,
                "source_chars": len(script.source_text),
            })

            self._transition(session, "testing")
            self._emit(session, "phase_started", {"phase": "design", "iteration": index})
            phase_start = time.perf_counter()
            try:
                if state.suite is None:
                    state.suite = design_tests(state.spec, script, gateway, self.retriever, state.model)
                else:
                    state.suite = revalidate_suite(state.suite, state.spec)
            except GatewayError as exc:
                self._emit(session, "phase_finished", {
                    "phase": "design",
                    "iteration": index,
                    "duration_s": time.perf_counter() - phase_start,
                    "error": str(exc),
                })
                record.wall_s = time.perf_counter() - session.wall_anchor
                session.wall_anchor = None
                state.iterations.append(record)
                self._finish(session, "failed", f"test design failed: {exc}")
                return state
            record.phase_timings["design"] = time.perf_counter() - phase_start
            record.suite = state.suite.to_dict()
            self._emit(session, "phase_finished", {
                "phase": "design",
                "iteration": index,
                "duration_s": record.phase_timings["design"],
                "case_count": len(state.suite.cases),
                "case_ids": [c.case_id for c in state.suite.cases],
            })

            self._transition(session, "executing")
            self._emit(session, "phase_started", {"phase": "execute", "iteration": index})
            phase_start = time.perf_counter()
            workdir = self.store.outputs_dir(state.session_id, index)

            def on_case(result) -> None:
                self._emit(session, "tool_run", {
                    "iteration": index,
                    "case_id": result.case_id,
                    "exit_status": result.exit_status,
                    "duration_s": result.duration_s,
                })
                self._emit(session, "case_result", {
                    "iteration": index,
                    "case_id": result.case_id,
                    "kind": result.kind,
                    "passed": result.passed,
                    "detail": result.detail,
                    "error_classes": result.error_class_names(),
                })

            try:
                report = execute_and_collect(
                    script, state.suite, self.toolchain, workdir, on_case=on_case
                )
            except ToolchainUnavailable as exc:
                self._emit(session, "phase_finished", {
                    "phase": "execute",
                    "iteration": index,
                    "duration_s": time.perf_counter() - phase_start,
                    "error": str(exc),
                })
                record.wall_s = time.perf_counter() - session.wall_anchor
                session.wall_anchor = None
                state.iterations.append(record)
                self._finish(session, "failed", f"toolchain unavailable: {exc}")
                return state
            record.phase_timings["execute"] = time.perf_counter() - phase_start
            record.report = report.to_dict()
            state.tool_time_s += report.tool_time_s
            self._emit(session, "phase_finished", {
                "phase": "execute",
                "iteration": index,
                "duration_s": record.phase_timings["execute"],
                "all_passed": report.all_passed,
                "cases_passed": sum(1 for c in report.cases if c.passed),
                "cases_total": len(report.cases),
                "error_classes": report.observed_error_names(),
                "tool_time_s": report.tool_time_s,
            })

            self._transition(session, "interpreting")
            self._emit(session, "phase_started", {"phase": "interpret", "iteration": index})
            phase_start = time.perf_counter()
            try:
                interpretation = interpret_results(report, state.spec, gateway, state.model)
            except GatewayError as exc:
                self._emit(session, "phase_finished", {
                    "phase": "interpret",
                    "iteration": index,
                    "duration_s": time.perf_counter() - phase_start,
                    "error": str(exc),
                })
                record.wall_s = time.perf_counter() - session.wall_anchor
                session.wall_anchor = None
                state.iterations.append(record)
                self._finish(session, "failed", f"interpretation failed: {exc}")
                return state
            record.phase_timings["interpret"] = time.perf_counter() - phase_start
            record.interpretation = interpretation.to_dict()
            self._emit(session, "phase_finished", {
                "phase": "interpret",
                "iteration": index,
                "duration_s": record.phase_timings["interpret"],
                "verdict": interpretation.verdict,
                "summary": interpretation.summary,
                "findings": len(interpretation.findings),
            })

            decision = check_convergence(record, state.max_iterations)
            if decision != "converged":
                record.feedback_out = derive_feedback(interpretation, report)
            record.wall_s = time.perf_counter() - session.wall_anchor
            session.wall_anchor = None
            state.iterations.append(record)
            pausing = state.pause_for_human and decision != "give_up"
            self._emit(session, "iteration_done", {
                "iteration": index,
                "decision": decision,
                "verdict": interpretation.verdict,
                "cases_passed": sum(1 for c in report.cases if c.passed),
                "cases_total": len(report.cases),
                "awaiting_human": pausing,
            })

            if decision == "converged":
                if pausing:
                    self._transition(session, "awaiting_human")
                    self.store.write_state(state)
                    return state
                self._finish(session, "converged")
                return state
            if decision == "give_up":
                self._finish(session, "failed", "iteration cap reached without convergence")
                return state
            state.pending_agent_feedback = list(record.feedback_out)
            if pausing:
                self._transition(session, "awaiting_human")
                self.store.write_state(state)
                return state
            self.store.write_state(state)

    # -- reporting -----------------------------------------------------------------

    def build_report(self, session_id: str) -> dict:
        return build_report(self._get(session_id).state)


def run_pipeline(
    requirements: str,
    provider,
    store_root: Path,
    toolchain: SimulationToolchain | None = None,
    retriever: Retriever | None = None,
    pause_for_human: bool = False,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    payload_kind: str = "cpp",
    model: str = DEFAULT_MODEL,
    session_id: str | None = None,
    bus: EventBus | None = None,
) -> tuple[Orchestrator, SessionState]:
    """One-shot convenience wrapper: create a session and drive it to its
    final (or paused) status. Returns the orchestrator for report access."""
    orch = Orchestrator(
        provider,
        SessionStore(Path(store_root)),
        toolchain=toolchain,
        retriever=retriever,
        bus=bus,
    )
    state = orch.create_session(
        pause_for_human=pause_for_human,
        max_iterations=max_iterations,
        payload_kind=payload_kind,
        model=model,
        session_id=session_id,
    )
    state = orch.submit_requirements(state.session_id, requirements)
    return orch, state


def build_report(state: SessionState) -> dict:
    """Full session report: spec, per-iteration scripts and evidence,
    interpretations, and resource counters. Field names are stable."""
    last = state.last_record
    return {
        "format_version": STATE_FORMAT_VERSION,
        "session_id": state.session_id,
        "status": state.status,
        "verdict": last.verdict if last else None,
        "requirements": state.requirements,
        "pause_for_human": state.pause_for_human,
        "max_iterations": state.max_iterations,
        "spec": state.spec.to_dict() if state.spec else None,
        "suite": state.suite.to_dict() if state.suite else None,
        "script": (last.script if last else None),
        "execution": (last.report if last else None),
        "interpretation": (last.interpretation if last else None),
        "iterations": [r.to_dict() for r in state.iterations],
        "human_feedback": list(state.human_feedback),
        "failure_reason": state.failure_reason,
        "counters": {
            "iterations_run": state.iteration,
            "llm_calls": state.llm_calls,
            "llm_time_s": state.llm_time_s,
            "tool_time_s": state.tool_time_s,
        },
        "created_at": state.created_at,
        "updated_at": state.updated_at,
    }


# keys holding wall-clock measurements; zeroed when comparing replays
_VOLATILE_TIME_KEYS = frozenset(
    {
        "created_at",
        "updated_at",
        "timestamp",
        "latency_s",
        "duration_s",
        "tool_time_s",
        "llm_time_s",
        "elapsed_s",
        "wall_s",
        "setup_s",
        "base_s",
        "overhead_s",
        "total_s",
    }
)


def normalize_report(report: dict) -> dict:
    """Zero every wall-clock measurement so two replays of the same transcript
    serialize to identical bytes. KPI values are untouched."""

    def scrub(node, parent_key: str | None = None):
        if isinstance(node, dict):
            out = {}
            for k, v in node.items():
                if parent_key == "phase_timings" or (k in _VOLATILE_TIME_KEYS and isinstance(v, (int, float))):
                    out[k] = 0.0 if isinstance(v, (int, float)) else scrub(v, k)
                else:
                    out[k] = scrub(v, k)
            return out
        if isinstance(node, list):
            return [scrub(v, parent_key) for v in node]
        return node

    return scrub(copy.deepcopy(report))


def report_to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"
