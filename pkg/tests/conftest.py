"""Shared fixtures: transcript loaders and an in-process toolchain double."""

from __future__ import annotations

import json
import threading
import uuid
from pathlib import Path

import pytest

from simforge.gateway import EmbeddingVector, load_scripted_provider
from simforge.results import FlowRecord, records_to_xml
from simforge.toolchain import (
    PAYLOAD_ENTRY,
    CompileFailed,
    ExecutionOutcome,
    ToolInvocation,
    ToolTimeout,
    ToolTimings,
)

FIXTURES = Path(__file__).parent / "fixtures"

CASE_STUDY_PROMPT = (
    "Simulate a 5G New Radio environment with 100 UEs and one gNB at 28 GHz "
    "with 200 MHz bandwidth. Implement TCP communication and enable traffic "
    "steering using beamforming"
)


def load_fixture_json(name: str):
    return json.loads((FIXTURES / name).read_text(encoding="utf-8"))


def transcript_pairs(name: str) -> list[tuple[str, str]]:
    return [(e["tag"], e["reply"]) for e in load_fixture_json(name)]


class OneHotEmbedder:
    """Maps every distinct text to its own orthogonal axis."""

    def __init__(self, dimension: int):
        self.dimension = dimension
        self._slots: dict[str, int] = {}

    def embed(self, texts):
        out = []
        for text in texts:
            slot = self._slots.setdefault(text, len(self._slots))
            if slot >= self.dimension:
                raise ValueError("dimension exhausted")
            values = [0.0] * self.dimension
            values[slot] = 1.0
            out.append(EmbeddingVector(tuple(values)))
        return out


@pytest.fixture
def case_study_provider():
    return load_scripted_provider(transcript_pairs("transcript_case_study.json"))


@pytest.fixture
def failing_provider():
    return load_scripted_provider(transcript_pairs("transcript_always_failing.json"))


class InProcessToolchain:
    """Toolchain double driven by the same payload markers as the bundled fake
    simulator, but without spawning subprocesses. Used where a test needs many
    full pipeline runs and subprocess startup would dominate the runtime."""

    def __init__(self, flow_overrides: dict | None = None):
        self.flow_overrides = dict(flow_overrides or {})
        self.run_count = 0
        self._lock = threading.Lock()

    def new_invocation(self, payload_kind: str, args: list[str], workdir_root: Path) -> ToolInvocation:
        workdir = Path(workdir_root) / f"run-{uuid.uuid4().hex[:12]}"
        return ToolInvocation(
            payload_kind=payload_kind,
            entry=PAYLOAD_ENTRY[payload_kind],
            args=list(args),
            workdir=workdir,
        )

    def _flow_record(self, text: str) -> FlowRecord:
        flow = {
            "flow_id": 1,
            "tx": 1000,
            "rx": 998,
            "rx_bytes": 1250000,
            "tx_bytes": 1252500,
            "delay_sum_s": 19.96,
            "jitter_sum_s": 9.97,
            "first_tx_s": 0.0,
            "last_rx_s": 1.0,
        }
        flow.update(self.flow_overrides)
        for line in text.splitlines():
            if "FAKESIM:FLOWMON" not in line:
                continue
            for token in line.split()[1:]:
                if "=" not in token:
                    continue
                key, value = token.split("=", 1)
                if key in ("flow_id", "tx", "rx", "rx_bytes", "tx_bytes"):
                    flow[key] = int(value)
                elif key in ("delay_sum_s", "jitter_sum_s", "first_tx_s", "last_rx_s"):
                    flow[key] = float(value)
        return FlowRecord(
            flow_id=flow["flow_id"],
            tx_packets=flow["tx"],
            rx_packets=flow["rx"],
            lost_packets=flow["tx"] - flow["rx"],
            tx_bytes=flow["tx_bytes"],
            rx_bytes=flow["rx_bytes"],
            delay_sum=flow["delay_sum_s"],
            jitter_sum=flow["jitter_sum_s"],
            time_first_tx=flow["first_tx_s"],
            time_last_rx=flow["last_rx_s"],
        )

    def run_native(self, source_text: str, inv: ToolInvocation) -> ExecutionOutcome:
        with self._lock:
            self.run_count += 1
        timings = ToolTimings(setup=0.0, base=0.0, overhead=0.0, total=0.001)
        marker = None
        for probe in ("FAKESIM:COMPILE_ERROR", "FAKESIM:CRASH", "FAKESIM:ASSERT", "FAKESIM:HANG"):
            if probe in source_text:
                marker = probe
                break
        if marker == "FAKESIM:COMPILE_ERROR":
            msg = source_text.split("FAKESIM:COMPILE_ERROR", 1)[1].splitlines()[0].strip()
            raise CompileFailed((msg or "payload.cc:1:1: error: synthetic failure") + "\n")
        if marker == "FAKESIM:CRASH":
            return ExecutionOutcome(139, "", "Segmentation fault (core dumped)\n", [], timings)
        if marker == "FAKESIM:ASSERT":
            stderr = 'NS_ASSERT failed, cond="synthetic"\nAborted (core dumped)\n'
            return ExecutionOutcome(134, "", stderr, [], timings)
        if marker == "FAKESIM:HANG":
            raise ToolTimeout(inv.limits.wall_timeout)
        inv.workdir.mkdir(parents=True, exist_ok=True)
        out = inv.workdir / "flowmon.xml"
        out.write_text(records_to_xml([self._flow_record(source_text)]), encoding="utf-8")
        return ExecutionOutcome(0, "wrote flowmon.xml\n", "", [out], timings, workdir=inv.workdir)

    run_wrapped = run_native


@pytest.fixture
def quick_toolchain():
    return InProcessToolchain()


# inter-phase bookkeeping (event writes, persistence) is inside wall_s but
# outside every phase timer; keep the cap well above scheduler noise
OVERHEAD_CAP_S = 1.0


def assert_event_invariants(events, state) -> None:
    """The cross-cutting event-stream guarantees every finished session obeys:
    gapless sequences from 1, a phase_started/phase_finished pair per phase,
    the stream opening with extraction and closing with session_done, and
    per-iteration phase timings covering exactly the phases that ran, as
    disjoint sub-spans of the iteration wall time."""
    from simforge.orchestrator import EVENT_KINDS, PHASES

    assert events, "finished session must have events"
    assert [e.sequence for e in events] == list(range(1, len(events) + 1))
    assert all(e.kind in EVENT_KINDS for e in events)
    assert events[0].kind == "phase_started"
    assert events[0].payload.get("phase") == "extract"
    assert events[-1].kind == "session_done"
    assert sum(1 for e in events if e.kind == "session_done") == 1

    open_phase = None
    started: dict[str, int] = {}
    finished: dict[str, int] = {}
    for ev in events:
        if ev.kind == "phase_started":
            assert open_phase is None, f"phase_started while {open_phase} open"
            phase = ev.payload["phase"]
            assert phase in PHASES
            open_phase = (phase, ev.payload.get("iteration"))
            started[phase] = started.get(phase, 0) + 1
        elif ev.kind == "phase_finished":
            assert open_phase == (ev.payload["phase"], ev.payload.get("iteration"))
            finished[ev.payload["phase"]] = finished.get(ev.payload["phase"], 0) + 1
            open_phase = None
    assert open_phase is None, f"phase {open_phase} never finished"
    assert started == finished

    # extraction runs once before round 1 and carries no iteration tag
    timed_by_iter: dict[int, set[str]] = {}
    for ev in events:
        if ev.kind == "phase_finished":
            iteration = ev.payload.get("iteration") or 1
            timed_by_iter.setdefault(iteration, set()).add(ev.payload["phase"])
    for record in state.iterations:
        ran = timed_by_iter.get(record.index, set())
        assert set(record.phase_timings) == ran, (
            f"iteration {record.index}: timed {sorted(record.phase_timings)}, ran {sorted(ran)}"
        )
        total = sum(record.phase_timings.values())
        assert total <= record.wall_s + 1e-3, (
            f"iteration {record.index}: phases sum to {total:.3f}s, wall {record.wall_s:.3f}s"
        )
        overhead = record.wall_s - total
        assert overhead <= OVERHEAD_CAP_S, (
            f"iteration {record.index}: {overhead:.3f}s unaccounted between phases"
        )
