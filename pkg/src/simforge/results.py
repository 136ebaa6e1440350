"""Parsing of simulation outputs into KPIs plus log-text error classification.

FlowMonitor XML is the primary evidence source. Times arrive as nanosecond
strings ("+1.9e+09ns" or bare numbers, depending on the ns-3 version) and are
normalized to seconds here. All functions are pure.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from xml.etree import ElementTree

FLOW_REQUIRED_ATTRS = (
    "flowId",
    "txPackets",
    "rxPackets",
    "lostPackets",
    "txBytes",
    "rxBytes",
    "delaySum",
    "jitterSum",
    "timeFirstTxPacket",
    "timeLastRxPacket",
)


class ResultsError(Exception):
    pass


class MalformedXml(ResultsError):
    pass


class SchemaMismatch(ResultsError):
    def __init__(self, attr: str):
        super().__init__(f"FlowMonitor record missing required attribute: {attr}")
        self.attr = attr


class DegenerateFlow(ResultsError):
    pass


@dataclass
class FlowRecord:
    flow_id: int
    tx_packets: int
    rx_packets: int
    lost_packets: int
    tx_bytes: int
    rx_bytes: int
    delay_sum: float  # seconds
    jitter_sum: float  # seconds
    time_first_tx: float  # seconds
    time_last_rx: float  # seconds


@dataclass
class FlowKpis:
    flow_id: int
    throughput_bps: float
    mean_delay_s: float | None
    mean_jitter_s: float | None
    loss_ratio: float
    delivery_ratio: float
    tx_packets: int
    rx_packets: int
    rx_bytes: int


@dataclass
class KpiSet:
    per_flow: list[FlowKpis]
    throughput_bps: float
    mean_delay_s: float | None
    mean_jitter_s: float | None
    loss_ratio: float
    tx_packets: int
    rx_packets: int

    @property
    def flow_count(self) -> int:
        return len(self.per_flow)

    def to_dict(self) -> dict:
        return {
            "flow_count": self.flow_count,
            "aggregate": {
                "throughput_bps": self.throughput_bps,
                "mean_delay_s": self.mean_delay_s,
                "mean_jitter_s": self.mean_jitter_s,
                "loss_ratio": self.loss_ratio,
                "tx_packets": self.tx_packets,
                "rx_packets": self.rx_packets,
            },
            "flows": [
                {
                    "flow_id": f.flow_id,
                    "throughput_bps": f.throughput_bps,
                    "mean_delay_s": f.mean_delay_s,
                    "mean_jitter_s": f.mean_jitter_s,
                    "loss_ratio": f.loss_ratio,
                    "delivery_ratio": f.delivery_ratio,
                    "tx_packets": f.tx_packets,
                    "rx_packets": f.rx_packets,
                    "rx_bytes": f.rx_bytes,
                }
                for f in self.per_flow
            ],
        }


def parse_ns_time(raw: str) -> float:
    """Normalize a FlowMonitor time string to seconds.

    Accepts "+1.9e+09ns", "+1900000000.0ns", and bare nanosecond numbers.
    """
    text = raw.strip()
    if text.endswith("ns"):
        text = text[:-2]
    try:
        return float(text) * 1e-9
    except ValueError as exc:
        raise MalformedXml(f"unparseable time value {raw!r}") from exc


def parse_flowmonitor(xml_text: str) -> list[FlowRecord]:
    """One FlowRecord per <Flow> element under FlowStats, units normalized."""
    try:
        root = ElementTree.fromstring(xml_text)
    except ElementTree.ParseError as exc:
        raise MalformedXml(str(exc)) from exc
    stats = root.find("FlowStats") if root.tag == "FlowMonitor" else root
    if stats is None:
        raise MalformedXml("no FlowStats section")
    records = []
    for el in stats.findall("Flow"):
        for attr in FLOW_REQUIRED_ATTRS:
            if el.get(attr) is None:
                raise SchemaMismatch(attr)
        rec = FlowRecord(
            flow_id=int(el.get("flowId")),
            tx_packets=int(el.get("txPackets")),
            rx_packets=int(el.get("rxPackets")),
            lost_packets=int(el.get("lostPackets")),
            tx_bytes=int(el.get("txBytes")),
            rx_bytes=int(el.get("rxBytes")),
            delay_sum=parse_ns_time(el.get("delaySum")),
            jitter_sum=parse_ns_time(el.get("jitterSum")),
            time_first_tx=parse_ns_time(el.get("timeFirstTxPacket")),
            time_last_rx=parse_ns_time(el.get("timeLastRxPacket")),
        )
        if rec.rx_packets > rec.tx_packets:
            raise MalformedXml(f"flow {rec.flow_id}: rxPackets > txPackets")
        records.append(rec)
    return records


def records_to_xml(records: list[FlowRecord]) -> str:
    """Serialize FlowRecords back into FlowMonitor XML (round-trip safe)."""

    def ns(seconds: float) -> str:
        return f"+{seconds * 1e9:.1f}ns"

    flows = "\n".join(
        f'    <Flow flowId="{r.flow_id}" txPackets="{r.tx_packets}" rxPackets="{r.rx_packets}" '
        f'lostPackets="{r.lost_packets}" txBytes="{r.tx_bytes}" rxBytes="{r.rx_bytes}" '
        f'delaySum="{ns(r.delay_sum)}" jitterSum="{ns(r.jitter_sum)}" '
        f'timeFirstTxPacket="{ns(r.time_first_tx)}" timeLastRxPacket="{ns(r.time_last_rx)}" />'
        for r in records
    )
    return (
        '<?xml version="1.0" ?>\n<FlowMonitor>\n  <FlowStats>\n'
        + flows
        + "\n  </FlowStats>\n</FlowMonitor>\n"
    )


def _flow_kpis(rec: FlowRecord) -> FlowKpis:
    if rec.rx_packets == 0:
        return FlowKpis(
            flow_id=rec.flow_id,
            throughput_bps=0.0,
            mean_delay_s=None,
            mean_jitter_s=None,
            loss_ratio=1.0 if rec.tx_packets else 0.0,
            delivery_ratio=0.0 if rec.tx_packets else 1.0,
            tx_packets=rec.tx_packets,
            rx_packets=0,
            rx_bytes=rec.rx_bytes,
        )
    duration = rec.time_last_rx - rec.time_first_tx
    if duration <= 0:
        raise DegenerateFlow(f"flow {rec.flow_id}: duration {duration} <= 0 with rx_packets > 0")
    loss = (rec.tx_packets - rec.rx_packets) / rec.tx_packets if rec.tx_packets else 0.0
    return FlowKpis(
        flow_id=rec.flow_id,
        throughput_bps=rec.rx_bytes * 8 / duration,
        mean_delay_s=rec.delay_sum / rec.rx_packets,
        mean_jitter_s=rec.jitter_sum / (rec.rx_packets - 1) if rec.rx_packets >= 2 else None,
        loss_ratio=loss,
        delivery_ratio=1.0 - loss,
        tx_packets=rec.tx_packets,
        rx_packets=rec.rx_packets,
        rx_bytes=rec.rx_bytes,
    )


def compute_kpis(records: list[FlowRecord]) -> KpiSet:
    """Per-flow KPIs plus traffic-weighted aggregates.

    Throughput and delay aggregate weighted by rx_bytes, jitter by its
    denominator (rx_packets - 1); aggregate loss is total lost over total sent.
    """
    if not records:
        raise ValueError("records must be non-empty for aggregate KPIs")
    per_flow = [_flow_kpis(r) for r in records]

    def weighted(pairs: list[tuple[float, float]]) -> float | None:
        total_w = sum(w for _, w in pairs)
        if total_w <= 0:
            return None
        return sum(v * w for v, w in pairs) / total_w

    thr = weighted([(f.throughput_bps, f.rx_bytes) for f in per_flow])
    delay = weighted([(f.mean_delay_s, f.rx_bytes) for f in per_flow if f.mean_delay_s is not None])
    jitter = weighted(
        [(f.mean_jitter_s, f.rx_packets - 1) for f in per_flow if f.mean_jitter_s is not None]
    )
    tx_total = sum(f.tx_packets for f in per_flow)
    rx_total = sum(f.rx_packets for f in per_flow)
    return KpiSet(
        per_flow=per_flow,
        throughput_bps=thr or 0.0,
        mean_delay_s=delay,
        mean_jitter_s=jitter,
        loss_ratio=(tx_total - rx_total) / tx_total if tx_total else 0.0,
        tx_packets=tx_total,
        rx_packets=rx_total,
    )


# --- error classification --------------------------------------------------

NO_ERROR = "NoError"

# Ordered rule table; first match per class wins. Assertion signatures are
# checked before crash signatures because ns-3 asserts abort with a core dump.
_CLASSIFIER_RULES: list[tuple[str, str, re.Pattern]] = [
    ("compile.diagnostic", "CompileError", re.compile(r"(^|\n)[^\n]*\berror:", re.IGNORECASE)),
    ("compile.linker", "CompileError", re.compile(r"undefined reference to")),
    ("compile.python", "CompileError", re.compile(r"\bSyntaxError\b|\bIndentationError\b")),
    ("assert.ns3", "AssertionFailure", re.compile(r"NS_ASSERT|NS_ABORT|assert failed|Assertion\b.*\bfailed")),
    ("crash.segfault", "RuntimeCrash", re.compile(r"Segmentation fault|SIGSEGV")),
    ("crash.coredump", "RuntimeCrash", re.compile(r"core dumped")),
    ("timeout.marker", "Timeout", re.compile(r"wall timeout|killed by timeout|TimeoutExpired")),
]

_EXCERPT_CONTEXT = 160


@dataclass
class ErrorClass:
    error_class: str
    evidence: str = ""
    rule_id: str = ""


def classify_errors(stdout: str, stderr: str, exit_status: int) -> list[ErrorClass]:
    """Apply the ordered rule table to the combined output.

    Deterministic and total: the same inputs always produce the same classes.
    At most one match per class is recorded (the earliest rule that fired).
    A nonzero exit with no matching rule is an UnknownAnomaly; a clean exit
    with no match is NoError.
    """
    combined = (stderr or "") + "\n" + (stdout or "")
    found: list[ErrorClass] = []
    seen: set[str] = set()
    for rule_id, cls, pattern in _CLASSIFIER_RULES:
        if cls in seen:
            continue
        m = pattern.search(combined)
        if m:
            start = max(0, m.start())
            excerpt = combined[start : start + _EXCERPT_CONTEXT].strip()
            found.append(ErrorClass(error_class=cls, evidence=excerpt, rule_id=rule_id))
            seen.add(cls)
    if found:
        return found
    if exit_status != 0:
        tail = (stderr or stdout or "").strip()[-_EXCERPT_CONTEXT:] or f"exit status {exit_status}"
        return [ErrorClass(error_class="UnknownAnomaly", evidence=tail, rule_id="fallback.nonzero_exit")]
    return [ErrorClass(error_class=NO_ERROR, rule_id="fallback.clean")]


def has_errors(classes: list[ErrorClass]) -> bool:
    return any(c.error_class != NO_ERROR for c in classes)


# --- pcap counting ----------------------------------------------------------

_PCAP_MAGICS = {
    0xA1B2C3D4: ">",  # big-endian, microseconds
    0xD4C3B2A1: "<",  # little-endian, microseconds
    0xA1B23C4D: ">",  # big-endian, nanoseconds
    0x4D3CB2A1: "<",  # little-endian, nanoseconds
}


def count_pcap(data: bytes) -> tuple[int, int]:
    """Count (packets, captured bytes) from raw pcap bytes.

    Minimal header walk only; no protocol dissection.
    """
    if len(data) < 24:
        raise ResultsError("pcap shorter than its global header")
    (magic,) = struct.unpack(">I", data[:4])
    endian = _PCAP_MAGICS.get(magic)
    if endian is None:
        raise ResultsError(f"unknown pcap magic 0x{magic:08x}")
    offset = 24
    packets = 0
    total = 0
    while offset + 16 <= len(data):
        _, _, incl_len, _ = struct.unpack(endian + "IIII", data[offset : offset + 16])
        offset += 16 + incl_len
        if offset > len(data):
            raise ResultsError("truncated pcap record")
        packets += 1
        total += incl_len
    return packets, total


# --- execution reports ------------------------------------------------------


@dataclass
class CaseResult:
    """Outcome of running the payload once for a single test case."""

    case_id: str
    kind: str
    passed: bool
    error_classes: list[ErrorClass] = field(default_factory=list)
    kpis: KpiSet | None = None
    exit_status: int = 0
    detail: str = ""
    duration_s: float = 0.0
    stdout_tail: str = ""
    stderr_tail: str = ""

    def error_class_names(self) -> list[str]:
        return [c.error_class for c in self.error_classes if c.error_class != NO_ERROR]


@dataclass
class ExecutionReport:
    """Evidence from running one script against a full test suite."""

    cases: list[CaseResult]
    kpis: KpiSet | None  # from the first primary case run
    error_classes: list[ErrorClass] = field(default_factory=list)  # deduped across cases
    tool_time_s: float = 0.0

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.cases)

    def observed_error_names(self) -> list[str]:
        return [c.error_class for c in self.error_classes if c.error_class != NO_ERROR]

    def to_dict(self) -> dict:
        return {
            "all_passed": self.all_passed,
            "tool_time_s": self.tool_time_s,
            "error_classes": [
                {"class": c.error_class, "evidence": c.evidence, "rule_id": c.rule_id}
                for c in self.error_classes
            ],
            "kpis": self.kpis.to_dict() if self.kpis else None,
            "cases": [
                {
                    "case_id": c.case_id,
                    "kind": c.kind,
                    "passed": c.passed,
                    "exit_status": c.exit_status,
                    "error_classes": [
                        {"class": e.error_class, "evidence": e.evidence, "rule_id": e.rule_id}
                        for e in c.error_classes
                    ],
                    "kpis": c.kpis.to_dict() if c.kpis else None,
                    "detail": c.detail,
                    "duration_s": c.duration_s,
                }
                for c in self.cases
            ],
        }
