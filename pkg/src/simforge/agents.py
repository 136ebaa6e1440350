"""The four pipeline agents: spec extraction + script generation, test suite
design, execution with evidence collection, and result interpretation.

Agents are stateless transformers: prompt templates (versioned files under
``prompts/``) plus retrieved documentation chunks go in, structured replies
come back out and are validated locally. Parse failures earn exactly one
automatic repair re-prompt before they become errors.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .gateway import ChatMessage, ChatRequest
from .knowledge import EmptyIndex, VectorIndex, search
from .results import (
    CaseResult,
    ErrorClass,
    ExecutionReport,
    MalformedXml,
    classify_errors,
    compute_kpis,
    has_errors,
    parse_flowmonitor,
)
from .toolchain import CompileFailed, EnvMissing, SimulationToolchain, ToolTimeout

log = logging.getLogger(__name__)

DEFAULT_MODEL = "gpt-4o-mini"
DEFAULT_RETRIEVAL_K = 4
QOS_MAX_MEAN_DELAY_S = 0.050
QOS_MAX_LOSS_RATIO = 0.02

TRANSPORT_PROTOCOLS = ("TCP", "UDP")
SCENARIOS = ("UMi", "UMa", "RMa", "InH", "custom")
CASE_KINDS = ("primary", "edge", "scalability")
VERDICTS = ("meets_criteria", "needs_refinement")


class AgentError(Exception):
    pass


class ExtractionIncomplete(AgentError):
    def __init__(self, missing: list[str]):
        super().__init__(f"required fields missing after repair: {', '.join(missing)}")
        self.missing = missing


class OutOfDomain(AgentError):
    pass


class NoCodeBlock(AgentError):
    pass


class ShapeCheckFailed(AgentError):
    """Generated code lacks mandatory blocks; fed back into the next iteration."""

    def __init__(self, script: "GeneratedScript", missing: list[str]):
        super().__init__(f"script shape check failed, missing: {', '.join(missing)}")
        self.script = script
        self.missing = missing


class MalformedInterpretation(AgentError):
    pass


class ToolchainUnavailable(AgentError):
    pass


# --- domain types -----------------------------------------------------------


@dataclass
class SimulationSpec:
    carrier_frequency_ghz: float
    bandwidth_mhz: float
    num_ues: int
    num_gnbs: int = 1
    transport_protocol: str = "UDP"
    scenario: str = "UMi"
    channel_model: str = "3GPP 38.901"
    mobility_model: str = "static"
    beamforming_enabled: bool = False
    app_profile: str = "bulk-send"
    sim_duration_s: float = 10.0

    def validate(self) -> None:
        if self.carrier_frequency_ghz <= 0:
            raise ValueError("carrier_frequency_ghz must be > 0")
        if self.bandwidth_mhz <= 0:
            raise ValueError("bandwidth_mhz must be > 0")
        if self.num_ues < 1 or self.num_gnbs < 1:
            raise ValueError("num_ues and num_gnbs must be >= 1")
        if self.sim_duration_s <= 0:
            raise ValueError("sim_duration_s must be > 0")
        if self.transport_protocol not in TRANSPORT_PROTOCOLS:
            raise ValueError(f"transport_protocol must be one of {TRANSPORT_PROTOCOLS}")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")

    def to_dict(self) -> dict:
        return {
            "carrier_frequency_ghz": self.carrier_frequency_ghz,
            "bandwidth_mhz": self.bandwidth_mhz,
            "num_ues": self.num_ues,
            "num_gnbs": self.num_gnbs,
            "transport_protocol": self.transport_protocol,
            "scenario": self.scenario,
            "channel_model": self.channel_model,
            "mobility_model": self.mobility_model,
            "beamforming_enabled": self.beamforming_enabled,
            "app_profile": self.app_profile,
            "sim_duration_s": self.sim_duration_s,
        }

    def describe(self) -> str:
        return "\n".join(f"- {k}: {v}" for k, v in self.to_dict().items())


SPEC_REQUIRED_FIELDS = ("carrier_frequency_ghz", "bandwidth_mhz", "num_ues")

_SPEC_FIELD_TYPES = {
    "carrier_frequency_ghz": float,
    "bandwidth_mhz": float,
    "num_ues": int,
    "num_gnbs": int,
    "transport_protocol": str,
    "scenario": str,
    "channel_model": str,
    "mobility_model": str,
    "beamforming_enabled": bool,
    "app_profile": str,
    "sim_duration_s": float,
}


@dataclass
class GeneratedScript:
    payload_kind: str  # language of the simulation payload: cpp or python
    source_text: str
    iteration: int
    prompt_fingerprint: str = ""
    retrieved_chunk_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "payload_kind": self.payload_kind,
            "source_text": self.source_text,
            "iteration": self.iteration,
            "prompt_fingerprint": self.prompt_fingerprint,
            "retrieved_chunk_ids": list(self.retrieved_chunk_ids),
        }


@dataclass(frozen=True)
class Check:
    """One machine-checkable predicate over a per-case execution view."""

    check_field: str
    op: str
    value: object = None

    def to_dict(self) -> dict:
        return {"field": self.check_field, "op": self.op, "value": self.value}


@dataclass
class TestCase:
    __test__ = False  # domain object, not a pytest class

    case_id: str
    kind: str
    description: str
    check: Check
    overrides: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "kind": self.kind,
            "description": self.description,
            "check": self.check.to_dict(),
            "overrides": dict(self.overrides),
        }


@dataclass
class TestSuite:
    __test__ = False  # domain object, not a pytest class

    cases: list[TestCase]

    def validate(self) -> None:
        if not any(c.kind == "primary" for c in self.cases):
            raise ValueError("suite must contain at least one primary case")
        ids = [c.case_id for c in self.cases]
        if len(ids) != len(set(ids)):
            raise ValueError("case_ids must be unique")
        for case in self.cases:
            if case.kind not in CASE_KINDS:
                raise ValueError(f"unknown case kind {case.kind!r}")
            if case.check.check_field not in CHECK_FIELDS:
                raise ValueError(f"check references unknown field {case.check.check_field!r}")
            if case.check.op not in CHECK_OPS:
                raise ValueError(f"unknown check op {case.check.op!r}")

    def to_dict(self) -> dict:
        return {"cases": [c.to_dict() for c in self.cases]}


@dataclass
class Finding:
    metric: str
    observation: str
    hypothesized_cause: str = ""
    recommendation: str = ""

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "observation": self.observation,
            "hypothesized_cause": self.hypothesized_cause,
            "recommendation": self.recommendation,
        }


@dataclass
class InterpretationReport:
    summary: str
    findings: list[Finding]
    verdict: str

    def to_dict(self) -> dict:
        return {
            "summary": self.summary,
            "verdict": self.verdict,
            "findings": [f.to_dict() for f in self.findings],
        }


# --- prompt plumbing ---------------------------------------------------------


def load_prompt(name: str) -> string.Template:
    text = resources.files("simforge.prompts").joinpath(f"{name}.md").read_text(encoding="utf-8")
    return string.Template(text)


def fingerprint_messages(messages: list[ChatMessage]) -> str:
    h = hashlib.sha256()
    for m in messages:
        h.update(m.role.encode())
        h.update(b"\x00")
        h.update(m.content.encode())
        h.update(b"\x01")
    return h.hexdigest()


_FENCE_RE = re.compile(r"```([A-Za-z0-9_+-]*)[ \t]*\n(.*?)```", re.DOTALL)


def fenced_blocks(text: str) -> list[tuple[str, str]]:
    return [(m.group(1).lower(), m.group(2)) for m in _FENCE_RE.finditer(text)]


def find_block(text: str, tag: str) -> str | None:
    for block_tag, body in fenced_blocks(text):
        if block_tag == tag:
            return body
    return None


@dataclass
class Retriever:
    """Bundles the vector index with its embedder and a fixed top-k."""

    embedder: object
    index: VectorIndex
    k: int = DEFAULT_RETRIEVAL_K

    def context_for(self, query: str) -> tuple[str, list[str]]:
        try:
            hits = search(query, self.k, self.embedder, self.index)
        except EmptyIndex:
            return "(no documentation indexed)", []
        lines = [f"[{chunk.chunk_id}] {chunk.text.strip()}" for chunk, _ in hits]
        return "\n\n".join(lines), [chunk.chunk_id for chunk, _ in hits]


def _chat(gateway, messages: list[ChatMessage], model: str, tag: str) -> str:
    req = ChatRequest(model_name=model, messages=messages, temperature=0.0)
    if hasattr(gateway, "chat_tagged"):
        return gateway.chat_tagged(req, tag).content
    return gateway.chat(req).content


def _repair_message(reason: str) -> ChatMessage:
    return ChatMessage("user", load_prompt("repair").substitute(reason=reason))


# --- Agent 1: spec extraction -------------------------------------------------


def _coerce_spec_value(key: str, raw: str):
    kind = _SPEC_FIELD_TYPES[key]
    text = raw.strip()
    if kind is bool:
        return text.lower() in ("true", "yes", "1", "enabled", "on")
    if kind is int:
        return int(float(text))
    if kind is float:
        return float(text)
    return text


def parse_params_block(reply: str) -> dict | None:
    """Parse a fenced ``params`` block of ``key: value`` lines. None if absent."""
    body = find_block(reply, "params")
    if body is None:
        return None
    values: dict = {}
    for line in body.splitlines():
        line = line.strip().lstrip("-").strip()
        if not line or ":" not in line:
            continue
        key, raw = line.split(":", 1)
        key = key.strip().lower()
        if key == "out_of_domain" and raw.strip().lower() in ("true", "yes", "1"):
            values["out_of_domain"] = True
        elif key == "reason":
            values["reason"] = raw.strip()
        elif key in _SPEC_FIELD_TYPES:
            try:
                values[key] = _coerce_spec_value(key, raw)
            except ValueError:
                log.warning("dropping unparseable param %s=%r", key, raw.strip())
        else:
            log.warning("ignoring unrecognized param key %r", key)
    return values


def extract_spec(
    requirements: str,
    gateway,
    retriever: Retriever | None = None,
    model: str = DEFAULT_MODEL,
) -> SimulationSpec:
    """Turn natural-language requirements into a validated SimulationSpec."""
    if not requirements or not requirements.strip():
        raise ValueError("requirements must be non-empty")
    context = ""
    if retriever is not None:
        snippet, _ = retriever.context_for(requirements)
        if snippet and "(no documentation" not in snippet:
            context = "\nReference material:\n" + snippet
    prompt = load_prompt("extract_spec").substitute(requirements=requirements.strip(), context=context)
    messages = [ChatMessage("user", prompt)]
    reply = _chat(gateway, messages, model, "extract")

    values = parse_params_block(reply)
    missing = _missing_required(values)
    if values is not None and values.get("out_of_domain"):
        raise OutOfDomain(values.get("reason", "request is not a network-simulation task"))
    if values is None or missing:
        reason = (
            "no fenced params block found"
            if values is None
            else f"required keys missing: {', '.join(missing)}"
        )
        messages = messages + [ChatMessage("assistant", reply), _repair_message(reason)]
        reply = _chat(gateway, messages, model, "extract-repair")
        values = parse_params_block(reply)
        if values is not None and values.get("out_of_domain"):
            raise OutOfDomain(values.get("reason", "request is not a network-simulation task"))
        missing = _missing_required(values)
        if values is None or missing:
            raise ExtractionIncomplete(missing or list(SPEC_REQUIRED_FIELDS))

    fields = {k: v for k, v in values.items() if k in _SPEC_FIELD_TYPES}
    spec = SimulationSpec(**fields)
    spec.validate()
    return spec


def _missing_required(values: dict | None) -> list[str]:
    if values is None:
        return list(SPEC_REQUIRED_FIELDS)
    return [k for k in SPEC_REQUIRED_FIELDS if k not in values]


# --- Agent 1: script generation ------------------------------------------------

# Mandatory structural blocks every emitted script must carry.
SHAPE_RULES: dict[str, list[str]] = {
    "node-creation": [r"NodeContainer", r"CreateObject\s*<\s*Node", r"\bNode\s*\(\s*\)"],
    "device-install": [r"Install\w*Device", r"\.Install\s*\(", r"\.install\s*\("],
    "application": [
        r"ApplicationContainer",
        r"BulkSendHelper|OnOffHelper|UdpClientHelper|PacketSinkHelper|UdpEchoClientHelper",
        r"SetStartTime|\.Start\s*\(",
    ],
}

_CODE_TAGS = {"cpp": "cpp", "c++": "cpp", "cc": "cpp", "cxx": "cpp", "python": "python", "py": "python"}


def check_script_shape(source_text: str) -> list[str]:
    """Names of mandatory blocks missing from the script (empty when it passes)."""
    missing = []
    for block, patterns in SHAPE_RULES.items():
        if not any(re.search(p, source_text) for p in patterns):
            missing.append(block)
    return missing


def _extract_code(reply: str, default_kind: str) -> tuple[str, str] | None:
    for tag, body in fenced_blocks(reply):
        if tag in _CODE_TAGS:
            return _CODE_TAGS[tag], body.strip("\n") + "\n"
        if tag == "" and body.strip():
            return default_kind, body.strip("\n") + "\n"
    return None


def generate_script(
    spec: SimulationSpec,
    feedback: list[str] | None,
    gateway,
    retriever: Retriever | None = None,
    model: str = DEFAULT_MODEL,
    payload_kind: str = "cpp",
    iteration: int = 1,
) -> GeneratedScript:
    """Staged-reasoning script synthesis with retrieval-augmented context.

    Prior feedback items are injected verbatim; the reply's fenced code block
    becomes the script after a static shape check.
    """
    spec.validate()
    query = (
        f"ns-3 5G NR {spec.scenario} simulation {spec.transport_protocol} "
        f"{spec.num_ues} UEs {spec.carrier_frequency_ghz} GHz NrHelper example"
    )
    context, chunk_ids = ("(no documentation indexed)", [])
    if retriever is not None:
        context, chunk_ids = retriever.context_for(query)
    feedback_section = ""
    if feedback:
        items = "\n".join(f"- {item}" for item in feedback)
        feedback_section = (
            "\nFeedback from the previous iteration; address every item:\n" + items + "\n"
        )
    prompt = load_prompt("generate_script").substitute(
        parameters=spec.describe(),
        context=context,
        payload_kind=payload_kind,
        feedback=feedback_section,
    )
    messages = [ChatMessage("user", prompt)]
    reply = _chat(gateway, messages, model, f"generate-{iteration}")

    extracted = _extract_code(reply, payload_kind)
    if extracted is None:
        messages = messages + [
            ChatMessage("assistant", reply),
            _repair_message("the reply contained no fenced code block"),
        ]
        reply = _chat(gateway, messages, model, f"generate-{iteration}-repair")
        extracted = _extract_code(reply, payload_kind)
        if extracted is None:
            raise NoCodeBlock("reply lacks an extractable code block after repair")
    kind, source = extracted
    script = GeneratedScript(
        payload_kind=kind,
        source_text=source,
        iteration=iteration,
        prompt_fingerprint=fingerprint_messages(messages),
        retrieved_chunk_ids=chunk_ids,
    )
    missing = check_script_shape(source)
    if missing:
        raise ShapeCheckFailed(script, missing)
    return script


# --- Agent 2: test design -------------------------------------------------------

CHECK_FIELDS = (
    "exit_status",
    "error_classes",
    "artifact_count",
    "flow_count",
    "kpis.throughput_bps",
    "kpis.mean_delay_s",
    "kpis.mean_jitter_s",
    "kpis.loss_ratio",
    "kpis.rx_packets",
    "kpis.tx_packets",
)

CHECK_OPS = ("eq", "ne", "lt", "le", "gt", "ge", "empty", "nonempty", "contains")

OVERRIDE_ARG_NAMES = {
    "carrier_frequency_ghz": "frequencyGhz",
    "bandwidth_mhz": "bandwidthMhz",
    "num_ues": "numUes",
    "num_gnbs": "numGnbs",
    "transport_protocol": "transport",
    "scenario": "scenario",
    "channel_model": "channelModel",
    "mobility_model": "mobility",
    "beamforming_enabled": "beamforming",
    "app_profile": "appProfile",
    "sim_duration_s": "simTime",
}


def evaluate_check(check: Check, view: dict) -> tuple[bool, str]:
    """Evaluate one predicate against a per-case view. Missing or null values
    fail comparisons instead of raising."""
    actual = view.get(check.check_field)
    op = check.op
    if op == "empty":
        return (not actual, f"{check.check_field}={actual!r} expected empty")
    if op == "nonempty":
        return (bool(actual), f"{check.check_field}={actual!r} expected nonempty")
    if op == "contains":
        ok = actual is not None and check.value in actual
        return (ok, f"{check.check_field}={actual!r} expected to contain {check.value!r}")
    if actual is None:
        return (False, f"{check.check_field} unavailable")
    try:
        if op == "eq":
            ok = actual == check.value
        elif op == "ne":
            ok = actual != check.value
        elif op == "lt":
            ok = actual < check.value
        elif op == "le":
            ok = actual <= check.value
        elif op == "gt":
            ok = actual > check.value
        elif op == "ge":
            ok = actual >= check.value
        else:
            return (False, f"unknown op {op!r}")
    except TypeError:
        return (False, f"{check.check_field}={actual!r} not comparable to {check.value!r}")
    return (ok, f"{check.check_field}={actual!r} {op} {check.value!r}")


def mandatory_cases(spec: SimulationSpec) -> list[TestCase]:
    """The deterministic rule-based core of every suite."""
    scaled_ues = spec.num_ues * 2
    return [
        TestCase(
            "attach-baseline",
            "primary",
            "simulation completes, so UEs attached to the gNB(s)",
            Check("exit_status", "eq", 0),
        ),
        TestCase(
            "data-flow",
            "primary",
            "at least one flow delivers packets end to end",
            Check("kpis.rx_packets", "ge", 1),
        ),
        TestCase(
            "qos-delay",
            "primary",
            f"mean delay within {QOS_MAX_MEAN_DELAY_S * 1000:.0f} ms QoS bound",
            Check("kpis.mean_delay_s", "le", QOS_MAX_MEAN_DELAY_S),
        ),
        TestCase(
            "qos-loss",
            "primary",
            f"packet loss within {QOS_MAX_LOSS_RATIO:.0%} QoS bound",
            Check("kpis.loss_ratio", "le", QOS_MAX_LOSS_RATIO),
        ),
        TestCase(
            "edge-high-mobility",
            "edge",
            "survives high UE mobility stress",
            Check("exit_status", "eq", 0),
            overrides={"mobility_model": "constant-velocity-120kmh"},
        ),
        TestCase(
            "edge-high-load",
            "edge",
            "survives saturating application load",
            Check("exit_status", "eq", 0),
            overrides={"app_profile": "saturating"},
        ),
        TestCase(
            "scale-ues",
            "scalability",
            f"completes with the UE count raised to {scaled_ues}",
            Check("exit_status", "eq", 0),
            overrides={"num_ues": scaled_ues},
        ),
    ]


def _validate_proposed_case(raw: dict, existing_ids: set[str], counter: int) -> TestCase | None:
    try:
        check_raw = raw["check"]
        check = Check(str(check_raw["field"]), str(check_raw["op"]), check_raw.get("value"))
        if check.check_field not in CHECK_FIELDS or check.op not in CHECK_OPS:
            raise ValueError(f"unknown check field/op: {check.check_field}/{check.op}")
        kind = str(raw.get("kind", "edge"))
        if kind not in CASE_KINDS:
            raise ValueError(f"unknown kind {kind!r}")
        overrides = raw.get("overrides") or {}
        if not isinstance(overrides, dict) or any(k not in OVERRIDE_ARG_NAMES for k in overrides):
            raise ValueError("override keys must be spec field names")
        case_id = str(raw.get("case_id") or f"llm-case-{counter}")
        if case_id in existing_ids:
            case_id = f"{case_id}-{counter}"
        return TestCase(
            case_id=case_id,
            kind=kind,
            description=str(raw.get("description", "")),
            check=check,
            overrides=overrides,
        )
    except (KeyError, TypeError, ValueError) as exc:
        log.warning("dropping unparseable proposed test case: %s", exc)
        return None


def design_tests(
    spec: SimulationSpec,
    script: GeneratedScript,
    gateway,
    retriever: Retriever | None = None,
    model: str = DEFAULT_MODEL,
) -> TestSuite:
    """Mandatory rule-based cases plus schema-validated LLM proposals."""
    spec.validate()
    cases = mandatory_cases(spec)
    context = "(no documentation indexed)"
    if retriever is not None:
        context, _ = retriever.context_for(
            f"ns-3 test cases attachment QoS {spec.scenario} {spec.transport_protocol}"
        )
    prompt = load_prompt("design_tests").substitute(
        parameters=spec.describe(),
        script_excerpt=script.source_text[:2000],
        context=context,
        check_fields=", ".join(CHECK_FIELDS),
        check_ops=", ".join(CHECK_OPS),
        override_keys=", ".join(OVERRIDE_ARG_NAMES),
    )
    reply = _chat(gateway, [ChatMessage("user", prompt)], model, "design")
    body = find_block(reply, "cases")
    proposals = []
    if body is not None:
        try:
            proposals = json.loads(body)
            if not isinstance(proposals, list):
                raise ValueError("cases block is not a JSON list")
        except ValueError as exc:
            log.warning("dropping unparseable cases block: %s", exc)
            proposals = []
    else:
        log.warning("design reply carried no cases block; keeping mandatory suite")
    ids = {c.case_id for c in cases}
    for i, raw in enumerate(proposals):
        case = _validate_proposed_case(raw, ids, i) if isinstance(raw, dict) else None
        if case is not None:
            ids.add(case.case_id)
            cases.append(case)
    suite = TestSuite(cases=cases)
    suite.validate()
    return suite


def revalidate_suite(suite: TestSuite, spec: SimulationSpec) -> TestSuite:
    """Cheap per-iteration applicability pass: drop cases that stopped
    validating (never the mandatory core, which is rebuilt from the spec)."""
    kept = []
    for case in suite.cases:
        try:
            TestSuite(cases=[*_primary_stub(), case]).validate()
            kept.append(case)
        except ValueError as exc:
            log.warning("dropping stale case %s: %s", case.case_id, exc)
    suite = TestSuite(cases=kept)
    suite.validate()
    return suite


def _primary_stub() -> list[TestCase]:
    return [TestCase("stub-primary", "primary", "", Check("exit_status", "eq", 0))]


# --- Agent 3: execution and evidence collection ----------------------------------


def overrides_to_args(overrides: dict) -> list[str]:
    return [f"--{OVERRIDE_ARG_NAMES[k]}={v}" for k, v in overrides.items() if k in OVERRIDE_ARG_NAMES]


def _case_view(exit_status: int, error_names: list[str], kpis, artifact_count: int) -> dict:
    view = {
        "exit_status": exit_status,
        "error_classes": error_names,
        "artifact_count": artifact_count,
        "flow_count": kpis.flow_count if kpis else 0,
        "kpis.throughput_bps": None,
        "kpis.mean_delay_s": None,
        "kpis.mean_jitter_s": None,
        "kpis.loss_ratio": None,
        "kpis.rx_packets": None,
        "kpis.tx_packets": None,
    }
    if kpis:
        view.update(
            {
                "kpis.throughput_bps": kpis.throughput_bps,
                "kpis.mean_delay_s": kpis.mean_delay_s,
                "kpis.mean_jitter_s": kpis.mean_jitter_s,
                "kpis.loss_ratio": kpis.loss_ratio,
                "kpis.rx_packets": kpis.rx_packets,
                "kpis.tx_packets": kpis.tx_packets,
            }
        )
    return view


def _kpis_from_artifacts(artifacts) -> tuple[object, str]:
    for path in artifacts:
        if path.suffix == ".xml":
            try:
                records = parse_flowmonitor(Path(path).read_text(encoding="utf-8"))
            except (MalformedXml, OSError):
                continue
            if records:
                return compute_kpis(records), str(path.name)
    return None, ""


def execute_and_collect(
    script: GeneratedScript,
    suite: TestSuite,
    toolchain: SimulationToolchain,
    workdir_root: Path,
    wrapped: bool = False,
    on_case=None,
) -> ExecutionReport:
    """Run the script once per test case, parse artifacts into KPIs, classify
    logs, and evaluate every case's check. Case failures are data, not errors."""
    suite.validate()
    run = toolchain.run_wrapped if wrapped else toolchain.run_native
    case_results: list[CaseResult] = []
    seen_errors: dict[str, ErrorClass] = {}
    tool_time = 0.0
    report_kpis = None

    for case in suite.cases:
        args = overrides_to_args(case.overrides)
        inv = toolchain.new_invocation(script.payload_kind, args, Path(workdir_root))
        kpis = None
        try:
            outcome = run(script.source_text, inv)
            classes = classify_errors(outcome.stdout, outcome.stderr, outcome.exit_status)
            kpis, _ = _kpis_from_artifacts(outcome.artifacts)
            exit_status = outcome.exit_status
            duration = outcome.timings.total
            stdout_tail, stderr_tail = outcome.stdout[-500:], outcome.stderr[-500:]
            artifact_count = len(outcome.artifacts)
        except CompileFailed as exc:
            classes = classify_errors("", exc.stderr, 1)
            exit_status, duration, artifact_count = 1, 0.0, 0
            stdout_tail, stderr_tail = "", exc.stderr[-500:]
        except ToolTimeout as exc:
            classes = classify_errors(exc.stdout, exc.stderr, -9)
            exit_status, duration, artifact_count = -9, exc.seconds, 0
            stdout_tail, stderr_tail = exc.stdout[-500:], exc.stderr[-500:]
        except EnvMissing as exc:
            raise ToolchainUnavailable(str(exc)) from exc

        error_names = [c.error_class for c in classes if has_errors([c])]
        view = _case_view(exit_status, error_names, kpis, artifact_count)
        passed, detail = evaluate_check(case.check, view)
        result = CaseResult(
            case_id=case.case_id,
            kind=case.kind,
            passed=passed,
            error_classes=classes,
            kpis=kpis,
            exit_status=exit_status,
            detail=detail,
            duration_s=duration,
            stdout_tail=stdout_tail,
            stderr_tail=stderr_tail,
        )
        case_results.append(result)
        tool_time += duration
        if report_kpis is None and case.kind == "primary" and kpis is not None:
            report_kpis = kpis
        for cls in classes:
            if has_errors([cls]) and cls.error_class not in seen_errors:
                seen_errors[cls.error_class] = cls
        if on_case is not None:
            on_case(result)

    return ExecutionReport(
        cases=case_results,
        kpis=report_kpis,
        error_classes=list(seen_errors.values()),
        tool_time_s=tool_time,
    )


# --- Agent 4: result interpretation ----------------------------------------------


def _kpi_table(report: ExecutionReport) -> str:
    if report.kpis is None:
        return "(no KPI data: no flow records were produced)"
    agg = report.kpis
    delay = f"{agg.mean_delay_s * 1000:.3f} ms" if agg.mean_delay_s is not None else "n/a"
    jitter = f"{agg.mean_jitter_s * 1000:.3f} ms" if agg.mean_jitter_s is not None else "n/a"
    return (
        f"flows: {agg.flow_count}\n"
        f"throughput: {agg.throughput_bps / 1e6:.3f} Mbit/s\n"
        f"mean delay: {delay}\n"
        f"mean jitter: {jitter}\n"
        f"loss ratio: {agg.loss_ratio:.3%}"
    )


def _case_table(report: ExecutionReport) -> str:
    return "\n".join(
        f"- {c.case_id} [{c.kind}]: {'PASS' if c.passed else 'FAIL'} ({c.detail})"
        for c in report.cases
    )


def _error_table(report: ExecutionReport) -> str:
    if not report.observed_error_names():
        return "(none)"
    return "\n".join(f"- {c.error_class}: {c.evidence}" for c in report.error_classes)


def _fallback_findings(report: ExecutionReport) -> list[Finding]:
    findings = []
    for c in report.cases:
        if not c.passed:
            findings.append(
                Finding(
                    metric=c.case_id,
                    observation=f"test case failed: {c.detail}",
                    hypothesized_cause=", ".join(c.error_class_names()) or "unmet check threshold",
                    recommendation="regenerate the script addressing this failure",
                )
            )
    for e in report.error_classes:
        findings.append(
            Finding(
                metric="error-log",
                observation=e.evidence,
                hypothesized_cause=e.error_class,
                recommendation="fix the reported error before the next run",
            )
        )
    return findings or [
        Finding(metric="execution", observation="no passing evidence collected", recommendation="rerun")
    ]


def interpret_results(
    report: ExecutionReport,
    spec: SimulationSpec,
    gateway,
    model: str = DEFAULT_MODEL,
) -> InterpretationReport:
    """LLM analysis of the evidence; the verdict is rule-bound: meets_criteria
    is only ever allowed when every case passed and no error class fired."""
    prompt = load_prompt("interpret_results").substitute(
        parameters=spec.describe(),
        kpi_table=_kpi_table(report),
        case_table=_case_table(report),
        error_table=_error_table(report),
    )
    messages = [ChatMessage("user", prompt)]
    reply = _chat(gateway, messages, model, "interpret")
    parsed = _parse_interpretation(reply)
    if parsed is None:
        messages = messages + [
            ChatMessage("assistant", reply),
            _repair_message("the interpretation block was missing or not valid JSON"),
        ]
        reply = _chat(gateway, messages, model, "interpret-repair")
        parsed = _parse_interpretation(reply)
        if parsed is None:
            raise MalformedInterpretation("no parseable interpretation block after repair")

    allowed = report.all_passed and not report.observed_error_names()
    verdict = parsed.verdict if allowed else "needs_refinement"
    findings = parsed.findings
    if verdict == "needs_refinement" and not findings:
        findings = _fallback_findings(report)
    return InterpretationReport(summary=parsed.summary, findings=findings, verdict=verdict)


def _parse_interpretation(reply: str) -> InterpretationReport | None:
    body = find_block(reply, "interpretation")
    if body is None:
        return None
    try:
        doc = json.loads(body)
        verdict = doc.get("verdict", "needs_refinement")
        if verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {verdict!r}")
        findings = [
            Finding(
                metric=str(f.get("metric", "")),
                observation=str(f.get("observation", "")),
                hypothesized_cause=str(f.get("hypothesized_cause", "")),
                recommendation=str(f.get("recommendation", "")),
            )
            for f in doc.get("findings", [])
            if isinstance(f, dict)
        ]
        return InterpretationReport(summary=str(doc.get("summary", "")), findings=findings, verdict=verdict)
    except (ValueError, AttributeError, TypeError):
        return None
