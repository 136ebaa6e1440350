"""Sandboxed execution backend: compiles and runs simulation payloads.

Commands are configurable templates so the same code drives a real ns-3
build driver or the bundled fake simulator. Native invocation runs the
configured command directly; wrapped invocation interposes a one-shot
interpreter subprocess, whose cost lands in the overhead timing bucket.

Sandboxing contract: every run gets a fresh empty workdir, a whitelisted
environment (no inherited secrets), bounded output capture, and process-group
kill on timeout so no child survives the invocation.
"""

from __future__ import annotations

import os
import shutil
import signal
import statistics
import subprocess
import sys
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from . import fakesim

PAYLOAD_ENTRY = {"cpp": "payload.cc", "python": "payload.py"}

_ENV_WHITELIST = ("PATH", "HOME", "LANG", "LC_ALL", "TMPDIR", "TEMP")

_WRAPPER_SOURCE = """\
import subprocess
import sys

result = subprocess.run(sys.argv[1:])
sys.exit(result.returncode)
"""


class ToolchainError(Exception):
    pass


class CompileFailed(ToolchainError):
    def __init__(self, stderr: str):
        super().__init__(f"compile failed: {stderr.strip()[:200]}")
        self.stderr = stderr


class ToolTimeout(ToolchainError):
    def __init__(self, seconds: float, stdout: str = "", stderr: str = ""):
        super().__init__(f"process killed: wall timeout after {seconds}s")
        self.seconds = seconds
        self.stdout = stdout
        self.stderr = stderr + f"\n[simforge] process killed: wall timeout after {seconds}s\n"


class EnvMissing(ToolchainError):
    pass


@dataclass
class ToolLimits:
    wall_timeout: float = 300.0
    compile_timeout: float = 120.0
    output_cap: int = 4 * 1024 * 1024

    def __post_init__(self) -> None:
        if self.wall_timeout <= 0 or self.compile_timeout <= 0:
            raise ValueError("timeouts must be > 0")


@dataclass
class ToolInvocation:
    payload_kind: str
    entry: str
    args: list[str]
    workdir: Path
    limits: ToolLimits = field(default_factory=ToolLimits)


@dataclass
class ToolTimings:
    setup: float  # staging plus compile
    base: float  # simulation engine time (self-reported, else run wall time)
    overhead: float  # everything else in the run stage
    total: float


@dataclass
class ExecutionOutcome:
    exit_status: int
    stdout: str
    stderr: str
    artifacts: list[Path]
    timings: ToolTimings
    stdout_truncated: bool = False
    stderr_truncated: bool = False
    workdir: Path | None = None


@dataclass
class ToolchainConfig:
    """Command templates per payload kind. Placeholders: {python}, {fakesim},
    {entry}, {workdir}. A missing compile template skips the compile stage."""

    compile_commands: dict = field(default_factory=dict)
    run_commands: dict = field(default_factory=dict)
    wrapper_python: str = sys.executable
    artifact_globs: tuple = ("*.xml", "*.pcap", "*.log")
    limits: ToolLimits = field(default_factory=ToolLimits)
    max_parallel: int = 2


def fake_toolchain(sleep: float = 0.0, limits: ToolLimits | None = None) -> "SimulationToolchain":
    """Toolchain wired to the bundled fake simulator subprocess."""
    fakesim_path = str(Path(fakesim.__file__).resolve())
    compile_cmd = ["{python}", fakesim_path, "compile", "{entry}"]
    run_cmd = ["{python}", fakesim_path, "run", "{entry}", "--sleep", str(sleep), "--out", "flowmon.xml"]
    cfg = ToolchainConfig(
        compile_commands={"cpp": compile_cmd, "python": compile_cmd},
        run_commands={"cpp": run_cmd, "python": run_cmd},
        limits=limits or ToolLimits(),
    )
    return SimulationToolchain(cfg)


class SimulationToolchain:
    def __init__(self, config: ToolchainConfig):
        self.config = config
        self._slots = threading.Semaphore(max(1, config.max_parallel))

    # -- invocation plumbing -------------------------------------------------

    def new_invocation(self, payload_kind: str, args: list[str], workdir_root: Path) -> ToolInvocation:
        workdir = Path(workdir_root) / f"run-{uuid.uuid4().hex[:12]}"
        return ToolInvocation(
            payload_kind=payload_kind,
            entry=PAYLOAD_ENTRY[payload_kind],
            args=list(args),
            workdir=workdir,
            limits=self.config.limits,
        )

    def _render(self, template: list[str], inv: ToolInvocation) -> list[str]:
        entry_path = str(inv.workdir / inv.entry)
        return [
            part.format(python=sys.executable, entry=entry_path, workdir=str(inv.workdir))
            for part in template
        ]

    def _stage(self, source_text: str, inv: ToolInvocation) -> None:
        inv.workdir.mkdir(parents=True, exist_ok=True)
        if any(inv.workdir.iterdir()):
            raise ValueError(f"workdir not empty: {inv.workdir}")
        (inv.workdir / inv.entry).write_text(source_text, encoding="utf-8")

    def _child_env(self) -> dict:
        return {k: os.environ[k] for k in _ENV_WHITELIST if k in os.environ}

    def _spawn(self, cmd: list[str], inv: ToolInvocation, timeout: float) -> tuple[int, str, str, bool, bool, float]:
        out_path = inv.workdir / ".simforge-stdout"
        err_path = inv.workdir / ".simforge-stderr"
        timed_out = False
        start = time.perf_counter()
        try:
            with open(out_path, "wb") as out_fh, open(err_path, "wb") as err_fh:
                proc = subprocess.Popen(
                    cmd,
                    cwd=inv.workdir,
                    stdout=out_fh,
                    stderr=err_fh,
                    env=self._child_env(),
                    start_new_session=True,
                )

                def _deadline_kill() -> None:
                    nonlocal timed_out
                    timed_out = True
                    try:
                        os.killpg(proc.pid, signal.SIGKILL)
                    except (ProcessLookupError, PermissionError):
                        pass

                # Popen.wait(timeout=...) polls the child on a backoff grid as
                # coarse as 50 ms, which would drown the invocation-overhead
                # signal; a blocking reap plus a kill timer keeps wall honest.
                watchdog = threading.Timer(timeout, _deadline_kill)
                watchdog.daemon = True
                watchdog.start()
                try:
                    proc.wait()
                    wall = time.perf_counter() - start
                finally:
                    watchdog.cancel()
                # reap the whole process group: stragglers must not outlive the run
                try:
                    os.killpg(proc.pid, signal.SIGKILL)
                except (ProcessLookupError, PermissionError):
                    pass
                proc.wait()
                watchdog.join()
        except FileNotFoundError as exc:
            raise EnvMissing(f"configured command not found: {cmd[0]}") from exc
        stdout, out_trunc = self._read_capped(out_path, inv.limits.output_cap)
        stderr, err_trunc = self._read_capped(err_path, inv.limits.output_cap)
        if timed_out and proc.returncode == -signal.SIGKILL:
            raise ToolTimeout(timeout, stdout=stdout, stderr=stderr)
        return proc.returncode, stdout, stderr, out_trunc, err_trunc, wall

    @staticmethod
    def _read_capped(path: Path, cap: int) -> tuple[str, bool]:
        size = path.stat().st_size
        with open(path, "rb") as fh:
            data = fh.read(cap)
            if size > cap:  # allow the capped read to finish its last line
                data += fh.readline()
        return data.decode("utf-8", errors="replace"), size > len(data)

    def _collect_artifacts(self, inv: ToolInvocation) -> list[Path]:
        found: list[Path] = []
        for pattern in self.config.artifact_globs:
            found.extend(sorted(inv.workdir.glob(pattern)))
        return found

    @staticmethod
    def _parse_base_time(stdout: str) -> float | None:
        for line in stdout.splitlines():
            if "base-time-s=" in line:
                try:
                    return float(line.rsplit("=", 1)[1])
                except ValueError:
                    return None
        return None

    # -- public operations ----------------------------------------------------

    def run_native(self, source_text: str, inv: ToolInvocation) -> ExecutionOutcome:
        """Stage, compile, and execute the payload directly."""
        return self._run(source_text, inv, wrapped=False)

    def run_wrapped(self, source_text: str, inv: ToolInvocation) -> ExecutionOutcome:
        """As run_native, but the run command goes through an interpreter
        wrapper subprocess; the wrapper propagates the payload exit status."""
        return self._run(source_text, inv, wrapped=True)

    def _run(self, source_text: str, inv: ToolInvocation, wrapped: bool) -> ExecutionOutcome:
        with self._slots:
            setup_start = time.perf_counter()
            self._stage(source_text, inv)

            compile_template = self.config.compile_commands.get(inv.payload_kind)
            if compile_template:
                cmd = self._render(compile_template, inv)
                status, _, stderr, _, _, _ = self._spawn(cmd, inv, inv.limits.compile_timeout)
                if status != 0:
                    raise CompileFailed(stderr)

            run_cmd = self._render(self.config.run_commands[inv.payload_kind], inv) + list(inv.args)
            if wrapped:
                wrapper = Path(self.config.wrapper_python)
                if not wrapper.exists() and shutil.which(str(wrapper)) is None:
                    raise EnvMissing(f"wrapper interpreter not found: {wrapper}")
                wrapper_script = inv.workdir / "wrapper.py"
                wrapper_script.write_text(_WRAPPER_SOURCE, encoding="utf-8")
                run_cmd = [str(wrapper), str(wrapper_script)] + run_cmd
            setup = time.perf_counter() - setup_start

            status, stdout, stderr, out_trunc, err_trunc, run_wall = self._spawn(
                run_cmd, inv, inv.limits.wall_timeout
            )
            base = self._parse_base_time(stdout)
            if base is None or base > run_wall:
                base = run_wall
            overhead = max(0.0, run_wall - base)
            artifacts = [p for p in self._collect_artifacts(inv) if p.name != "wrapper.py"]
            return ExecutionOutcome(
                exit_status=status,
                stdout=stdout,
                stderr=stderr,
                artifacts=artifacts,
                timings=ToolTimings(setup=setup, base=base, overhead=overhead, total=setup + base + overhead),
                stdout_truncated=out_trunc,
                stderr_truncated=err_trunc,
                workdir=inv.workdir,
            )


@dataclass
class MethodStats:
    base_mean: float
    base_std: float
    overhead_mean: float
    overhead_std: float
    total_mean: float
    total_std: float


@dataclass
class OverheadReport:
    trials: int
    native: MethodStats
    wrapped: MethodStats
    ordering: str

    def to_dict(self) -> dict:
        def d(m: MethodStats) -> dict:
            return {
                "base_mean_s": m.base_mean,
                "base_std_s": m.base_std,
                "overhead_mean_s": m.overhead_mean,
                "overhead_std_s": m.overhead_std,
                "total_mean_s": m.total_mean,
                "total_std_s": m.total_std,
            }

        return {"trials": self.trials, "native": d(self.native), "wrapped": d(self.wrapped), "ordering": self.ordering}


def _stats(samples: list[ToolTimings]) -> MethodStats:
    def mean_std(values: list[float]) -> tuple[float, float]:
        return statistics.mean(values), statistics.stdev(values) if len(values) > 1 else 0.0

    bm, bs = mean_std([t.base for t in samples])
    om, os_ = mean_std([t.overhead for t in samples])
    tm, ts = mean_std([t.total for t in samples])
    return MethodStats(bm, bs, om, os_, tm, ts)


def benchmark_invocation(
    trials: int,
    source_text: str,
    toolchain: SimulationToolchain,
    workdir_root: Path,
    payload_kind: str = "cpp",
) -> OverheadReport:
    """Measure native vs wrapped invocation cost over repeated trials."""
    if trials < 3:
        raise ValueError("trials must be >= 3")
    native_t: list[ToolTimings] = []
    wrapped_t: list[ToolTimings] = []
    for _ in range(trials):
        inv = toolchain.new_invocation(payload_kind, [], workdir_root)
        native_t.append(toolchain.run_native(source_text, inv).timings)
        inv = toolchain.new_invocation(payload_kind, [], workdir_root)
        wrapped_t.append(toolchain.run_wrapped(source_text, inv).timings)
    native, wrapped = _stats(native_t), _stats(wrapped_t)
    if native.overhead_mean < wrapped.overhead_mean:
        ordering = "native invocation incurs less overhead than wrapped invocation"
    else:
        ordering = "no overhead advantage measured for native invocation"
    return OverheadReport(trials=trials, native=native, wrapped=wrapped, ordering=ordering)
