"""Evaluation metrics and benchmarks over recorded pipeline runs.

Covers the exact pass@k estimator, aggregate run metrics with their canonical
one-line rendering, per-agent response-time summaries, and the ingestion
scaling benchmark with a least-squares linearity check.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .knowledge import Document, VectorIndex, ingest_documents


class DomainError(ValueError):
    """Arguments outside the defined domain of a metric."""


def compute_pass_at_k(n: int, c: int, k: int) -> float:
    """Probability that at least one of k draws (without replacement) from n
    attempts hits one of the c successes: 1 - C(n-c, k) / C(n, k).

    Evaluated as an exact rational product before the final float conversion,
    so large n cannot overflow or lose precision in intermediate binomials.
    """
    if not all(isinstance(v, int) for v in (n, c, k)):
        raise DomainError("n, c, k must be integers")
    if n < 1:
        raise DomainError("n must be >= 1")
    if not 0 <= c <= n:
        raise DomainError("c must satisfy 0 <= c <= n")
    if not 1 <= k <= n:
        raise DomainError("k must satisfy 1 <= k <= n")
    if c == 0:
        return 0.0
    if k > n - c:  # not enough failures to fill the draw
        return 1.0
    prob_all_fail = Fraction(1)
    for i in range(k):
        prob_all_fail *= Fraction(n - c - i, n - i)
    return float(1 - prob_all_fail)


# --- aggregate run metrics ----------------------------------------------------


@dataclass
class EvalSample:
    """One end-to-end attempt at one scenario."""

    scenario_id: str
    converged: bool
    iterations: int
    first_attempt_syntax_error: bool
    response_time_s: float
    human_score: float = 0.0  # expert quality rating on a 1..10 scale

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "converged": self.converged,
            "iterations": self.iterations,
            "first_attempt_syntax_error": self.first_attempt_syntax_error,
            "response_time_s": self.response_time_s,
            "human_score": self.human_score,
        }


METRICS_COLUMNS = (
    "Avg. Iterations",
    "Syntax Error Rate (%)",
    "Avg. Response Time (s)",
    "Human Eval Score",
    "Pass Rate",
)


@dataclass
class RunMetrics:
    """Aggregates over a sample corpus, one value per canonical column."""

    avg_iterations: float | None
    syntax_error_rate: float  # fraction of samples, not percent
    avg_response_time_s: float
    avg_human_score: float
    pass_rate: float  # mean per-scenario pass@k
    k: int
    samples: int
    scenarios: int

    def values(self) -> tuple[str, str, str, str, str]:
        """Formatted cell values, one per column in METRICS_COLUMNS order."""
        avg_it = "n/a" if self.avg_iterations is None else f"{self.avg_iterations:.1f}"
        return (
            avg_it,
            f"{self.syntax_error_rate * 100:.1f}",
            f"{self.avg_response_time_s:.1f}",
            f"{self.avg_human_score:.1f}",
            f"{self.pass_rate:.2f}",
        )

    def row(self) -> str:
        return ", ".join(self.values())

    def to_dict(self) -> dict:
        return {
            "avg_iterations": self.avg_iterations,
            "syntax_error_rate_pct": self.syntax_error_rate * 100,
            "avg_response_time_s": self.avg_response_time_s,
            "avg_human_score": self.avg_human_score,
            "pass_rate": self.pass_rate,
            "k": self.k,
            "samples": self.samples,
            "scenarios": self.scenarios,
            "row": self.row(),
        }


def compute_run_metrics(samples: list[EvalSample], k: int = 4) -> RunMetrics:
    """Aggregate a sample corpus.

    avg_iterations averages over converged samples only (an attempt that never
    converged has no "iterations to converge"). The pass rate is the mean of
    per-scenario pass@k with k clamped to each scenario's attempt count.
    """
    if not samples:
        raise DomainError("samples must be non-empty")
    if k < 1:
        raise DomainError("k must be >= 1")
    converged = [s for s in samples if s.converged]
    avg_iterations = None
    if converged:
        avg_iterations = sum(s.iterations for s in converged) / len(converged)
    syntax_rate = sum(1 for s in samples if s.first_attempt_syntax_error) / len(samples)
    avg_response = sum(s.response_time_s for s in samples) / len(samples)
    avg_human = sum(s.human_score for s in samples) / len(samples)

    by_scenario: dict[str, list[EvalSample]] = {}
    for s in samples:
        by_scenario.setdefault(s.scenario_id, []).append(s)
    per_scenario = []
    for group in by_scenario.values():
        n = len(group)
        c = sum(1 for s in group if s.converged)
        per_scenario.append(compute_pass_at_k(n, c, min(k, n)))
    return RunMetrics(
        avg_iterations=avg_iterations,
        syntax_error_rate=syntax_rate,
        avg_response_time_s=avg_response,
        avg_human_score=avg_human,
        pass_rate=sum(per_scenario) / len(per_scenario),
        k=k,
        samples=len(samples),
        scenarios=len(by_scenario),
    )


def load_samples(path: str | Path) -> list[EvalSample]:
    """Read a sample corpus file: {"format_version": 1, "samples": [...]}."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise DomainError("samples file must be a JSON object")
    if doc.get("format_version") != 1:
        raise DomainError(f"unsupported samples format: {doc.get('format_version')!r}")
    return [
        EvalSample(
            scenario_id=str(s["scenario_id"]),
            converged=bool(s["converged"]),
            iterations=int(s["iterations"]),
            first_attempt_syntax_error=bool(s["first_attempt_syntax_error"]),
            response_time_s=float(s["response_time_s"]),
            human_score=float(s.get("human_score", 0.0)),
        )
        for s in doc["samples"]
    ]


def save_samples(samples: list[EvalSample], path: str | Path) -> None:
    doc = {"format_version": 1, "samples": [s.to_dict() for s in samples]}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- per-agent response times ---------------------------------------------------


@dataclass
class ResponseTimeSummary:
    tag: str
    mean_s: float
    std_s: float
    count: int

    def to_dict(self) -> dict:
        return {"tag": self.tag, "mean_s": self.mean_s, "std_s": self.std_s, "count": self.count}


def summarize_response_times(latencies_by_tag: dict[str, list[float]]) -> list[ResponseTimeSummary]:
    """Mean and sample standard deviation of call latency per agent tag."""
    out = []
    for tag in sorted(latencies_by_tag):
        values = latencies_by_tag[tag]
        if not values:
            continue
        arr = np.asarray(values, dtype=float)
        std = float(arr.std(ddof=1)) if len(values) > 1 else 0.0
        out.append(ResponseTimeSummary(tag=tag, mean_s=float(arr.mean()), std_s=std, count=len(values)))
    return out


def latencies_from_events(events: list) -> dict[str, list[float]]:
    """Group llm_call latencies by tag from a session event list."""
    grouped: dict[str, list[float]] = {}
    for ev in events:
        if getattr(ev, "kind", None) == "llm_call":
            tag = ev.payload.get("tag", "untagged").split("-")[0]
            grouped.setdefault(tag, []).append(float(ev.payload.get("latency_s", 0.0)))
    return grouped


# --- ingestion scaling -----------------------------------------------------------


@dataclass
class ScalingPoint:
    doc_count: int
    elapsed_s: float
    chunk_count: int


@dataclass
class LinearFit:
    slope: float
    intercept: float
    r_squared: float

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared}


@dataclass
class ScalingReport:
    points: list[ScalingPoint]
    fit: LinearFit

    def to_dict(self) -> dict:
        return {
            "points": [
                {"doc_count": p.doc_count, "elapsed_s": p.elapsed_s, "chunk_count": p.chunk_count}
                for p in self.points
            ],
            "fit": self.fit.to_dict(),
        }


def linear_fit(xs: list[float], ys: list[float]) -> LinearFit:
    if len(xs) != len(ys) or len(xs) < 2:
        raise DomainError("need at least two (x, y) points")
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    predicted = slope * x + intercept
    ss_res = float(np.sum((y - predicted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return LinearFit(slope=float(slope), intercept=float(intercept), r_squared=r2)


def synthetic_corpus(doc_count: int, doc_chars: int = 600) -> list[Document]:
    """Distinct single-chunk documents sized for predictable embedding counts."""
    docs = []
    for i in range(doc_count):
        body = f"document {i:05d} " + ("ns-3 nr module configuration sample text. " * 40)
        docs.append(Document(doc_id=f"doc-{i:05d}", title=f"doc {i}", body=body[:doc_chars]))
    return docs


def ingestion_scaling_benchmark(
    doc_counts: list[int],
    embedder,
    doc_chars: int = 600,
    repeats: int = 3,
) -> ScalingReport:
    """Time a fresh ingestion at each corpus size and fit elapsed ~ doc_count.

    Each size is ingested ``repeats`` times and the fastest run is kept;
    single-shot timings at small corpus sizes are dominated by scheduler
    and allocator noise, which would corrupt the fit.
    """
    if not doc_counts or any(c < 1 for c in doc_counts):
        raise DomainError("doc_counts must be non-empty positive integers")
    if repeats < 1:
        raise DomainError("repeats must be >= 1")
    points = []
    for count in doc_counts:
        docs = synthetic_corpus(count, doc_chars)
        best = None
        chunks = 0
        for _ in range(repeats):
            index = VectorIndex()
            start = time.perf_counter()
            report = ingest_documents(docs, embedder, index)
            elapsed = time.perf_counter() - start
            chunks = report.chunks
            best = elapsed if best is None else min(best, elapsed)
        points.append(ScalingPoint(doc_count=count, elapsed_s=best, chunk_count=chunks))
    fit = linear_fit([float(p.doc_count) for p in points], [p.elapsed_s for p in points])
    return ScalingReport(points=points, fit=fit)
