"""Report rendering: delimited files plus matplotlib figures.

Every CLI path that reports numbers writes them twice: a CSV for machines and
a PNG for humans. The Agg backend keeps rendering headless-safe.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evalharness import (
    EvalSample,
    RunMetrics,
    ScalingReport,
    compute_pass_at_k,
)
from .toolchain import OverheadReport


def _finish(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


# --- evaluation metrics -----------------------------------------------------


def write_metrics_csv(metrics: RunMetrics, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = metrics.to_dict()
    columns = ["avg_iterations", "syntax_error_rate_pct", "avg_response_time_s", "avg_human_score", "pass_rate"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerow([d[c] for c in columns])
    return path


def write_samples_csv(samples: list[EvalSample], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["scenario_id", "converged", "iterations", "first_attempt_syntax_error", "response_time_s", "human_score"]
        )
        for s in samples:
            writer.writerow(
                [s.scenario_id, s.converged, s.iterations, s.first_attempt_syntax_error, s.response_time_s, s.human_score]
            )
    return path


def render_pass_rate_figure(samples: list[EvalSample], k: int, path: str | Path) -> Path:
    by_scenario: dict[str, list[EvalSample]] = {}
    for s in samples:
        by_scenario.setdefault(s.scenario_id, []).append(s)
    names = sorted(by_scenario)
    rates = []
    for name in names:
        group = by_scenario[name]
        n, c = len(group), sum(1 for s in group if s.converged)
        rates.append(compute_pass_at_k(n, c, min(k, n)))
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(names)), 3.2))
    ax.bar(range(len(names)), rates, color="#3b6ea5")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel(f"pass@{k}")
    ax.set_title("Per-scenario pass rate")
    return _finish(fig, Path(path))


def render_iterations_figure(samples: list[EvalSample], path: str | Path) -> Path:
    converged = [s.iterations for s in samples if s.converged]
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    if converged:
        bins = range(1, max(converged) + 2)
        ax.hist(converged, bins=bins, align="left", rwidth=0.8, color="#6aa84f")
    ax.set_xlabel("iterations to converge")
    ax.set_ylabel("runs")
    ax.set_title("Convergence effort")
    return _finish(fig, Path(path))


# --- ingestion scaling ---------------------------------------------------------


def write_scaling_csv(report: ScalingReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["doc_count", "chunk_count", "elapsed_s"])
        for p in report.points:
            writer.writerow([p.doc_count, p.chunk_count, p.elapsed_s])
        writer.writerow([])
        writer.writerow(["slope", "intercept", "r_squared"])
        writer.writerow([report.fit.slope, report.fit.intercept, report.fit.r_squared])
    return path


def render_scaling_figure(report: ScalingReport, path: str | Path) -> Path:
    xs = [p.doc_count for p in report.points]
    ys = [p.elapsed_s for p in report.points]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.scatter(xs, ys, color="#3b6ea5", label="measured")
    fit = report.fit
    ax.plot(xs, [fit.slope * x + fit.intercept for x in xs], "--", color="#cc4125",
            label=f"fit (R²={fit.r_squared:.3f})")
    ax.set_xlabel("documents ingested")
    ax.set_ylabel("elapsed (s)")
    ax.set_title("Ingestion time scaling")
    ax.legend()
    return _finish(fig, Path(path))


# --- invocation overhead ----------------------------------------------------------


def write_overhead_csv(report: OverheadReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = report.to_dict()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "base_mean_s", "base_std_s", "overhead_mean_s", "overhead_std_s", "total_mean_s", "total_std_s"])
        for method in ("native", "wrapped"):
            m = d[method]
            writer.writerow([method, m["base_mean_s"], m["base_std_s"], m["overhead_mean_s"], m["overhead_std_s"], m["total_mean_s"], m["total_std_s"]])
    return path


def render_overhead_figure(report: OverheadReport, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    methods = ["native", "wrapped"]
    bases = [report.native.base_mean, report.wrapped.base_mean]
    overheads = [report.native.overhead_mean, report.wrapped.overhead_mean]
    ax.bar(methods, bases, label="engine time", color="#999999")
    ax.bar(methods, overheads, bottom=bases, label="overhead", color="#cc4125")
    ax.set_ylabel("seconds")
    ax.set_title(f"Invocation cost over {report.trials} trials")
    ax.legend()
    return _finish(fig, Path(path))


# --- session KPI reports -------------------------------------------------------------


def write_kpi_csv(kpis: dict, path: str | Path) -> Path:
    """kpis is the serialized KPI dict from a session report."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["flow_id", "throughput_bps", "mean_delay_s", "mean_jitter_s", "loss_ratio", "tx_packets", "rx_packets"])
        for f in kpis.get("flows", []):
            writer.writerow([f["flow_id"], f["throughput_bps"], f["mean_delay_s"], f["mean_jitter_s"], f["loss_ratio"], f["tx_packets"], f["rx_packets"]])
        agg = kpis.get("aggregate", {})
        writer.writerow(["aggregate", agg.get("throughput_bps"), agg.get("mean_delay_s"), agg.get("mean_jitter_s"), agg.get("loss_ratio"), agg.get("tx_packets"), agg.get("rx_packets")])
    return path


def render_kpi_figure(kpis: dict, path: str | Path) -> Path:
    flows = kpis.get("flows", [])
    fig, axes = plt.subplots(1, 2, figsize=(7.5, 3.2))
    ids = [str(f["flow_id"]) for f in flows]
    axes[0].bar(ids, [f["throughput_bps"] / 1e6 for f in flows], color="#3b6ea5")
    axes[0].set_xlabel("flow")
    axes[0].set_ylabel("throughput (Mbit/s)")
    axes[0].set_title("Per-flow throughput")
    delays = [(i, f["mean_delay_s"] * 1000) for i, f in zip(ids, flows) if f["mean_delay_s"] is not None]
    if delays:
        axes[1].bar([d[0] for d in delays], [d[1] for d in delays], color="#6aa84f")
    axes[1].set_xlabel("flow")
    axes[1].set_ylabel("mean delay (ms)")
    axes[1].set_title("Per-flow delay")
    return _finish(fig, Path(path))


def render_case_outcomes_figure(report: dict, path: str | Path) -> Path:
    """Stacked pass/fail bars per iteration from a session report dict.

    An iteration without an execution report (shape check failed) shows as an
    empty slot rather than being dropped, so gaps stay visible."""
    iterations = report.get("iterations", [])
    idx, passed, failed = [], [], []
    for r in iterations:
        cases = (r.get("report") or {}).get("cases") or []
        idx.append(r["index"])
        passed.append(sum(1 for c in cases if c.get("passed")))
        failed.append(len(cases) - passed[-1])
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar(idx, passed, label="passed", color="#6aa84f")
    ax.bar(idx, failed, bottom=passed, label="failed", color="#cc4125")
    ax.set_xlabel("iteration")
    ax.set_ylabel("test cases")
    ax.set_xticks(idx)
    ax.set_title("Case outcomes per iteration")
    ax.legend()
    return _finish(fig, Path(path))


def render_session_report(report: dict, out_dir: str | Path) -> list[Path]:
    """Write the figure set + KPI csv for one session report. Returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if report.get("iterations"):
        written.append(render_case_outcomes_figure(report, out / "case-outcomes.png"))
    execution = report.get("execution") or {}
    kpis = execution.get("kpis")
    if kpis:
        written.append(write_kpi_csv(kpis, out / "kpis.csv"))
        written.append(render_kpi_figure(kpis, out / "kpis.png"))
    return written
