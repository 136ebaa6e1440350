"""Operator command line: ingestion, one-shot runs, benchmarks, and serving.

Exit codes form a closed set: 0 success, 2 usage/configuration error,
3 session failed, 4 session paused awaiting human input. Every command
accepts --output json and then emits exactly one JSON document on stdout.
"""

from __future__ import annotations

import json
import os
import socket
import sys
import tempfile
from pathlib import Path

import click

from . import knowledge
from .evalharness import (
    DomainError,
    METRICS_COLUMNS,
    compute_run_metrics,
    load_samples,
)
from .gateway import (
    DeterministicEmbedder,
    OpenAIHttpProvider,
    ProviderConfig,
    load_transcript_file,
)
from .orchestrator import DEFAULT_MAX_ITERATIONS, Orchestrator, SessionStore, build_report, run_pipeline
from .agents import DEFAULT_MODEL, DEFAULT_RETRIEVAL_K, Retriever
from .toolchain import SimulationToolchain, ToolchainConfig, benchmark_invocation, fake_toolchain

CONFIG_FILENAME = ".simforge.json"
ENV_API_KEY = "SIMFORGE_API_KEY"
ENV_BASE_URL = "SIMFORGE_BASE_URL"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FAILED = 3
EXIT_PAUSED = 4


def discover_config(explicit: str | None) -> dict:
    """Read the config file: an explicit path, else ./.simforge.json, else
    ~/.simforge.json. Environment variables override file values."""
    candidates = [Path(explicit)] if explicit else [Path.cwd() / CONFIG_FILENAME, Path.home() / CONFIG_FILENAME]
    cfg: dict = {}
    for path in candidates:
        if path.is_file():
            try:
                cfg = json.loads(path.read_text(encoding="utf-8"))
            except ValueError as exc:
                raise click.ClickException(f"config file {path} is not valid JSON: {exc}")
            break
    if os.environ.get(ENV_API_KEY):
        cfg["api_key"] = os.environ[ENV_API_KEY]
    if os.environ.get(ENV_BASE_URL):
        cfg["base_url"] = os.environ[ENV_BASE_URL]
    return cfg


def _emit(ctx_obj: dict, doc: dict, human_lines: list[str]) -> None:
    """json mode: exactly one document on stdout. human mode: plain lines."""
    if ctx_obj.get("output") == "json":
        click.echo(json.dumps(doc, indent=2, sort_keys=True))
    else:
        for line in human_lines:
            click.echo(line)


def _note(ctx_obj: dict, message: str) -> None:
    """Progress chatter; kept off stdout in json mode."""
    if ctx_obj.get("output") == "json":
        click.echo(message, err=True)
    else:
        click.echo(message)


def _build_provider(cfg: dict, transcript: str | None, loop: bool = False):
    if transcript:
        try:
            return load_transcript_file(transcript, loop=loop)
        except (OSError, ValueError, KeyError) as exc:
            raise click.ClickException(f"cannot load transcript {transcript}: {exc}")
    api_key = cfg.get("api_key", "")
    if not api_key:
        raise click.ClickException(
            f"no provider available: pass --transcript or set {ENV_API_KEY} (or api_key in {CONFIG_FILENAME})"
        )
    provider_cfg = ProviderConfig(
        base_url=cfg.get("base_url", "https://api.openai.com/v1"),
        api_key=api_key,
        default_model=cfg.get("model", DEFAULT_MODEL),
    )
    return OpenAIHttpProvider(provider_cfg)


def _build_toolchain(cfg: dict, fake_sim: bool, sim_sleep: float = 0.0) -> SimulationToolchain:
    if fake_sim:
        return fake_toolchain(sleep=sim_sleep)
    tc = cfg.get("toolchain")
    if not tc:
        raise click.ClickException(
            "no simulator configured: pass --fake-sim or add a toolchain section "
            f"(compile_commands/run_commands) to {CONFIG_FILENAME}"
        )
    return SimulationToolchain(ToolchainConfig(
        compile_commands=tc.get("compile_commands", {}),
        run_commands=tc.get("run_commands", {}),
        artifact_globs=tuple(tc.get("artifact_globs", ("*.xml", "*.pcap", "*.log"))),
    ))


def _build_retriever(index_path: str | None, k: int) -> Retriever | None:
    if not index_path:
        return None
    try:
        index = knowledge.load(index_path)
    except knowledge.KnowledgeStoreError as exc:
        raise click.ClickException(f"cannot load index {index_path}: {exc}")
    embedder = DeterministicEmbedder(dimension=index.dimension or 64)
    return Retriever(embedder=embedder, index=index, k=k)


output_option = click.option(
    "--output", type=click.Choice(["human", "json"]), default=None,
    help="Output mode; json emits exactly one document.",
)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="Config file path.")
@click.option("--output", type=click.Choice(["human", "json"]), default="human", show_default=True)
@click.pass_context
def main(ctx: click.Context, config_path: str | None, output: str) -> None:
    """Natural-language 5G/6G scenarios in, executed ns-3 simulations out."""
    ctx.ensure_object(dict)
    ctx.obj["config"] = discover_config(config_path)
    ctx.obj["output"] = output


def _resolve_output(ctx_obj: dict, output: str | None) -> None:
    if output is not None:
        ctx_obj["output"] = output


@main.command()
@click.argument("directory", type=click.Path())
@click.option("--store", "store_path", type=click.Path(), required=True, help="Index file to write.")
@output_option
@click.pass_obj
def ingest(obj: dict, directory: str, store_path: str, output: str | None) -> None:
    """Chunk, embed, and index a documentation directory."""
    _resolve_output(obj, output)
    try:
        docs = knowledge.load_directory(directory)
    except FileNotFoundError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    embedder = DeterministicEmbedder()
    index = knowledge.VectorIndex()
    report = knowledge.ingest_documents(docs, embedder, index)
    knowledge.persist(index, store_path)
    _emit(obj, {
        "docs": report.docs,
        "chunks": report.chunks,
        "elapsed_s": report.elapsed,
        "store": str(store_path),
    }, [
        f"ingested {report.docs} docs into {report.chunks} chunks in {report.elapsed:.3f}s",
        f"index written to {store_path}",
    ])


@main.command()
@click.argument("requirements", required=False)
@click.option("--file", "req_file", type=click.Path(), default=None, help="Read requirements from a file.")
@click.option("--k", "top_k", type=int, default=DEFAULT_RETRIEVAL_K, show_default=True, help="Retrieval depth.")
@click.option("--max-iterations", type=int, default=DEFAULT_MAX_ITERATIONS, show_default=True)
@click.option("--fake-sim", is_flag=True, help="Use the bundled fake simulator.")
@click.option("--transcript", type=click.Path(), default=None, help="Replay a recorded provider transcript.")
@click.option("--model", default=None, help="Override the configured model name.")
@click.option("--index", "index_path", type=click.Path(), default=None, help="Documentation index for retrieval.")
@click.option("--store", "store_path", type=click.Path(), default=None, help="Session store directory.")
@click.option("--payload-kind", type=click.Choice(["cpp", "python"]), default="cpp", show_default=True)
@click.option("--pause-for-human", is_flag=True, help="Pause after each iteration for review.")
@click.option("--session-id", default=None, help="Explicit session id (replays).")
@click.option("--report-dir", type=click.Path(), default=None, help="Write report.json, CSV, and figures here.")
@output_option
@click.pass_obj
def run(obj: dict, requirements: str | None, req_file: str | None, top_k: int, max_iterations: int,
        fake_sim: bool, transcript: str | None, model: str | None, index_path: str | None,
        store_path: str | None, payload_kind: str, pause_for_human: bool, session_id: str | None,
        report_dir: str | None, output: str | None) -> None:
    """One-shot pipeline run; never blocks waiting for a human."""
    _resolve_output(obj, output)
    if req_file:
        try:
            requirements = Path(req_file).read_text(encoding="utf-8")
        except OSError as exc:
            click.echo(f"error: cannot read {req_file}: {exc}", err=True)
            sys.exit(EXIT_USAGE)
    if not requirements or not requirements.strip():
        click.echo("error: no requirements given (positional text or --file)", err=True)
        sys.exit(EXIT_USAGE)
    cfg = obj["config"]
    try:
        provider = _build_provider(cfg, transcript)
        toolchain = _build_toolchain(cfg, fake_sim)
        retriever = _build_retriever(index_path, top_k)
    except click.ClickException as exc:
        click.echo(f"error: {exc.message}", err=True)
        sys.exit(EXIT_USAGE)
    store_root = Path(store_path or cfg.get("store") or (Path(tempfile.mkdtemp(prefix="simforge-")) / "sessions"))
    _note(obj, f"sessions stored under {store_root}")
    orch, state = run_pipeline(
        requirements,
        provider,
        store_root,
        toolchain=toolchain,
        retriever=retriever,
        pause_for_human=pause_for_human,
        max_iterations=max_iterations,
        payload_kind=payload_kind,
        model=model or cfg.get("model", DEFAULT_MODEL),
        session_id=session_id,
    )
    report = build_report(state)
    human = [
        f"session {state.session_id}: {state.status} after {state.iteration} iteration(s)",
    ]
    if state.spec:
        human.append("spec: " + json.dumps(state.spec.to_dict(), sort_keys=True))
    if report.get("execution") and report["execution"].get("kpis"):
        agg = report["execution"]["kpis"]["aggregate"]
        delay = agg["mean_delay_s"]
        jitter = agg["mean_jitter_s"]
        human.append(
            "kpis: {:.3f} Mbit/s, delay {}, jitter {}, loss {:.3%}".format(
                agg["throughput_bps"] / 1e6,
                f"{delay * 1000:.3f} ms" if delay is not None else "n/a",
                f"{jitter * 1000:.3f} ms" if jitter is not None else "n/a",
                agg["loss_ratio"],
            )
        )
    if report.get("interpretation"):
        human.append(f"verdict: {report['interpretation']['verdict']}")
        human.append(f"summary: {report['interpretation']['summary']}")
    if state.failure_reason:
        human.append(f"failure: {state.failure_reason}")
    if report_dir:
        from . import reporting

        out = Path(report_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written = reporting.render_session_report(report, out)
        human.append("report files: " + ", ".join(str(p) for p in [out / "report.json", *written]))
    _emit(obj, report, human)
    if state.status == "failed":
        sys.exit(EXIT_FAILED)
    if state.status == "awaiting_human":
        sys.exit(EXIT_PAUSED)


@main.command("eval")
@click.argument("scenario_file", type=click.Path())
@click.option("--n", "n_attempts", type=int, default=None, help="Attempts per scenario to score (default: all).")
@click.option("--k", "k", type=int, default=4, show_default=True, help="k for pass@k.")
@click.option("--fig-dir", type=click.Path(), default=None, help="Write CSV and figures here.")
@output_option
@click.pass_obj
def eval_cmd(obj: dict, scenario_file: str, n_attempts: int | None, k: int, fig_dir: str | None,
             output: str | None) -> None:
    """Aggregate recorded run samples into the canonical metrics table."""
    _resolve_output(obj, output)
    try:
        samples = load_samples(scenario_file)
    except (OSError, ValueError, KeyError) as exc:
        click.echo(f"error: bad scenario file {scenario_file}: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    if n_attempts is not None:
        if k > n_attempts:
            click.echo(f"error: --k {k} exceeds --n {n_attempts}", err=True)
            sys.exit(EXIT_USAGE)
        by_scenario: dict[str, list] = {}
        for s in samples:
            by_scenario.setdefault(s.scenario_id, []).append(s)
        short = [sid for sid, group in by_scenario.items() if len(group) < n_attempts]
        if short:
            click.echo(f"error: scenarios with fewer than {n_attempts} attempts: {', '.join(sorted(short))}", err=True)
            sys.exit(EXIT_USAGE)
        samples = [s for group in by_scenario.values() for s in group[:n_attempts]]
    try:
        metrics = compute_run_metrics(samples, k=k)
    except DomainError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    human = [
        " | ".join(METRICS_COLUMNS),
        " | ".join(metrics.values()),
        f"({metrics.samples} samples over {metrics.scenarios} scenarios, k={metrics.k})",
    ]
    if fig_dir:
        from . import reporting

        out = Path(fig_dir)
        paths = [
            reporting.write_metrics_csv(metrics, out / "metrics.csv"),
            reporting.write_samples_csv(samples, out / "samples.csv"),
            reporting.render_pass_rate_figure(samples, metrics.k, out / "pass-rate.png"),
            reporting.render_iterations_figure(samples, out / "iterations.png"),
        ]
        human.append("wrote " + ", ".join(str(p) for p in paths))
    _emit(obj, metrics.to_dict(), human)


@main.command("bench-invocation")
@click.option("--trials", type=int, default=5, show_default=True)
@click.option("--sim-time", type=float, default=0.5, show_default=True, help="Fake engine seconds per run.")
@click.option("--fig-dir", type=click.Path(), default=None, help="Write CSV and figure here.")
@output_option
@click.pass_obj
def bench_invocation(obj: dict, trials: int, sim_time: float, fig_dir: str | None, output: str | None) -> None:
    """Measure native vs wrapped invocation overhead on the fake simulator."""
    _resolve_output(obj, output)
    if trials < 3:
        click.echo("error: --trials must be >= 3", err=True)
        sys.exit(EXIT_USAGE)
    toolchain = fake_toolchain(sleep=sim_time)
    workdir = Path(tempfile.mkdtemp(prefix="simforge-bench-"))
    report = benchmark_invocation(trials, "// benchmark payload\n", toolchain, workdir)
    human = [
        f"trials: {trials}, engine time {sim_time:.2f}s",
        "native : base {:.3f}s overhead {:.3f}s total {:.3f}s".format(
            report.native.base_mean, report.native.overhead_mean, report.native.total_mean),
        "wrapped: base {:.3f}s overhead {:.3f}s total {:.3f}s".format(
            report.wrapped.base_mean, report.wrapped.overhead_mean, report.wrapped.total_mean),
        report.ordering,
    ]
    if fig_dir:
        from . import reporting

        out = Path(fig_dir)
        paths = [
            reporting.write_overhead_csv(report, out / "overhead.csv"),
            reporting.render_overhead_figure(report, out / "overhead.png"),
        ]
        human.append("wrote " + ", ".join(str(p) for p in paths))
    _emit(obj, report.to_dict(), human)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--store", "store_path", type=click.Path(), default=None, help="Session store directory.")
@click.option("--transcript", type=click.Path(), default=None, help="Serve scripted replays of this transcript.")
@click.option("--fake-sim", is_flag=True, help="Use the bundled fake simulator.")
@click.option("--capacity", type=int, default=8, show_default=True, help="Max concurrent active sessions.")
@click.option("--cors-origin", multiple=True, help="Additional allowed UI origins.")
@output_option
@click.pass_obj
def serve(obj: dict, host: str, port: int, store_path: str | None, transcript: str | None,
          fake_sim: bool, capacity: int, cors_origin: tuple[str, ...], output: str | None) -> None:
    """Run the HTTP service (sessions, SSE events, feedback, reports)."""
    _resolve_output(obj, output)
    cfg = obj["config"]
    try:
        provider = _build_provider(cfg, transcript, loop=True)
        toolchain = _build_toolchain(cfg, fake_sim)
    except click.ClickException as exc:
        click.echo(f"error: {exc.message}", err=True)
        sys.exit(EXIT_USAGE)
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((host, port))
    except OSError as exc:
        click.echo(f"error: cannot bind {host}:{port}: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    finally:
        probe.close()
    store_root = Path(store_path or cfg.get("store") or (Path(tempfile.mkdtemp(prefix="simforge-")) / "sessions"))
    orch = Orchestrator(provider, SessionStore(store_root), toolchain=toolchain)
    from .service import ServiceConfig, serve as serve_app

    service_cfg = ServiceConfig(capacity=capacity)
    service_cfg.cors_origins.extend(cors_origin)
    _note(obj, f"serving on http://{host}:{port} (sessions under {store_root})")
    serve_app(orch, host=host, port=port, config=service_cfg)


if __name__ == "__main__":
    main()
