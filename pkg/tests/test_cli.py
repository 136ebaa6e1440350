"""Command line surface: exit codes, output modes, written artifacts."""

import json
import socket

import pytest
from click.testing import CliRunner

from simforge.cli import (
    EXIT_FAILED,
    EXIT_OK,
    EXIT_PAUSED,
    EXIT_USAGE,
    discover_config,
    main,
)
from tests.conftest import CASE_STUDY_PROMPT, FIXTURES

CASE_STUDY = str(FIXTURES / "transcript_case_study.json")
ALWAYS_FAILING = str(FIXTURES / "transcript_always_failing.json")
EVAL_SAMPLES = str(FIXTURES / "eval_samples.json")


def invoke(args, tmp_path, **kwargs):
    """Invoke with a neutral environment: no provider env vars, HOME without
    a config file, so only explicit flags drive behavior."""
    runner = CliRunner()
    env = {
        "SIMFORGE_API_KEY": None,
        "SIMFORGE_BASE_URL": None,
        "HOME": str(tmp_path),
    }
    env.update(kwargs.pop("env", {}))
    return runner.invoke(main, args, env=env, catch_exceptions=False, **kwargs)


def single_json_doc(output: str) -> dict:
    doc = json.loads(output)  # raises if stdout has anything but one document
    assert isinstance(doc, dict)
    return doc


class TestConfigDiscovery:
    def test_cwd_file_then_env_override(self, tmp_path, monkeypatch):
        (tmp_path / ".simforge.json").write_text(
            json.dumps({"api_key": "from-file", "model": "gpt-local"})
        )
        monkeypatch.chdir(tmp_path)
        monkeypatch.delenv("SIMFORGE_API_KEY", raising=False)
        monkeypatch.delenv("SIMFORGE_BASE_URL", raising=False)
        cfg = discover_config(None)
        assert cfg["api_key"] == "from-file"
        assert cfg["model"] == "gpt-local"
        monkeypatch.setenv("SIMFORGE_API_KEY", "from-env")
        monkeypatch.setenv("SIMFORGE_BASE_URL", "http://localhost:9")
        cfg = discover_config(None)
        assert cfg["api_key"] == "from-env"
        assert cfg["base_url"] == "http://localhost:9"

    def test_explicit_path_wins(self, tmp_path, monkeypatch):
        (tmp_path / ".simforge.json").write_text(json.dumps({"model": "cwd"}))
        explicit = tmp_path / "other.json"
        explicit.write_text(json.dumps({"model": "explicit"}))
        monkeypatch.chdir(tmp_path)
        monkeypatch.delenv("SIMFORGE_API_KEY", raising=False)
        monkeypatch.delenv("SIMFORGE_BASE_URL", raising=False)
        assert discover_config(str(explicit))["model"] == "explicit"

    def test_home_fallback(self, tmp_path, monkeypatch):
        home = tmp_path / "home"
        home.mkdir()
        (home / ".simforge.json").write_text(json.dumps({"model": "home"}))
        cwd = tmp_path / "cwd"
        cwd.mkdir()
        monkeypatch.chdir(cwd)
        monkeypatch.setenv("HOME", str(home))
        monkeypatch.delenv("SIMFORGE_API_KEY", raising=False)
        monkeypatch.delenv("SIMFORGE_BASE_URL", raising=False)
        assert discover_config(None)["model"] == "home"

    def test_invalid_json_rejected(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        import click

        with pytest.raises(click.ClickException):
            discover_config(str(bad))


class TestIngest:
    def docs_dir(self, tmp_path):
        docs = tmp_path / "docs"
        docs.mkdir()
        (docs / "nr-guide.md").write_text("Configure the NR module for mmWave cells. " * 30)
        (docs / "tcp-notes.txt").write_text("BulkSendHelper drives TCP traffic. " * 30)
        return docs

    def test_missing_directory_is_usage_error(self, tmp_path):
        result = invoke(["ingest", str(tmp_path / "absent"), "--store", str(tmp_path / "idx.json")], tmp_path)
        assert result.exit_code == EXIT_USAGE

    def test_ingest_writes_loadable_index(self, tmp_path):
        docs = self.docs_dir(tmp_path)
        store = tmp_path / "index.json"
        result = invoke(["ingest", str(docs), "--store", str(store)], tmp_path)
        assert result.exit_code == EXIT_OK, result.output
        assert "ingested 2 docs" in result.output
        from simforge import knowledge

        index = knowledge.load(store)
        assert len(index) >= 2

    def test_ingest_json_output(self, tmp_path):
        docs = self.docs_dir(tmp_path)
        store = tmp_path / "index.json"
        result = invoke(
            ["--output", "json", "ingest", str(docs), "--store", str(store)], tmp_path
        )
        assert result.exit_code == EXIT_OK
        doc = single_json_doc(result.stdout)
        assert doc["docs"] == 2
        assert doc["chunks"] >= 2
        assert doc["store"] == str(store)


class TestRun:
    def test_requires_requirements(self, tmp_path):
        result = invoke(["run", "--fake-sim", "--transcript", CASE_STUDY], tmp_path)
        assert result.exit_code == EXIT_USAGE
        assert "no requirements" in result.output

    def test_requires_a_provider(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        result = invoke(["run", "--fake-sim", CASE_STUDY_PROMPT], tmp_path)
        assert result.exit_code == EXIT_USAGE
        assert "no provider available" in result.output

    def test_requires_a_simulator(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        result = invoke(["run", "--transcript", CASE_STUDY, CASE_STUDY_PROMPT], tmp_path)
        assert result.exit_code == EXIT_USAGE
        assert "no simulator configured" in result.output

    def test_missing_transcript_file(self, tmp_path):
        result = invoke(
            ["run", "--fake-sim", "--transcript", str(tmp_path / "nope.json"), "hello"], tmp_path
        )
        assert result.exit_code == EXIT_USAGE

    def test_converging_run_exit_zero(self, tmp_path):
        result = invoke(
            [
                "run", CASE_STUDY_PROMPT,
                "--fake-sim",
                "--transcript", CASE_STUDY,
                "--store", str(tmp_path / "sessions"),
            ],
            tmp_path,
        )
        assert result.exit_code == EXIT_OK, result.output
        assert "converged after 2 iteration(s)" in result.output
        assert "kpis:" in result.output
        assert "verdict: meets_criteria" in result.output

    def test_failing_run_exit_three(self, tmp_path):
        result = invoke(
            [
                "run", "small cell over UDP",
                "--fake-sim",
                "--transcript", ALWAYS_FAILING,
                "--store", str(tmp_path / "sessions"),
            ],
            tmp_path,
        )
        assert result.exit_code == EXIT_FAILED
        assert "failure: iteration cap reached without convergence" in result.output

    def test_paused_run_exit_four(self, tmp_path):
        result = invoke(
            [
                "run", CASE_STUDY_PROMPT,
                "--fake-sim",
                "--transcript", CASE_STUDY,
                "--pause-for-human",
                "--store", str(tmp_path / "sessions"),
            ],
            tmp_path,
        )
        assert result.exit_code == EXIT_PAUSED
        assert "awaiting_human" in result.output

    def test_json_output_single_document(self, tmp_path):
        result = invoke(
            [
                "--output", "json",
                "run", CASE_STUDY_PROMPT,
                "--fake-sim",
                "--transcript", CASE_STUDY,
                "--store", str(tmp_path / "sessions"),
            ],
            tmp_path,
        )
        assert result.exit_code == EXIT_OK, result.output
        doc = single_json_doc(result.stdout)
        assert doc["status"] == "converged"
        assert doc["spec"]["num_ues"] == 100
        assert doc["counters"]["iterations_run"] == 2

    def test_requirements_from_file(self, tmp_path):
        req = tmp_path / "req.txt"
        req.write_text(CASE_STUDY_PROMPT)
        result = invoke(
            [
                "run", "--file", str(req),
                "--fake-sim",
                "--transcript", CASE_STUDY,
                "--store", str(tmp_path / "sessions"),
            ],
            tmp_path,
        )
        assert result.exit_code == EXIT_OK

    def test_report_dir_writes_json_and_figures(self, tmp_path):
        report_dir = tmp_path / "report"
        result = invoke(
            [
                "run", CASE_STUDY_PROMPT,
                "--fake-sim",
                "--transcript", CASE_STUDY,
                "--store", str(tmp_path / "sessions"),
                "--report-dir", str(report_dir),
            ],
            tmp_path,
        )
        assert result.exit_code == EXIT_OK, result.output
        report = json.loads((report_dir / "report.json").read_text())
        assert report["status"] == "converged"
        names = sorted(p.name for p in report_dir.iterdir())
        assert names == ["case-outcomes.png", "kpis.csv", "kpis.png", "report.json"]


class TestEval:
    def test_table_rendering(self, tmp_path):
        result = invoke(["eval", EVAL_SAMPLES], tmp_path)
        assert result.exit_code == EXIT_OK, result.output
        lines = result.output.splitlines()
        assert lines[0] == "Avg. Iterations | Syntax Error Rate (%) | Avg. Response Time (s) | Human Eval Score | Pass Rate"
        assert lines[1] == "1.8 | 17.0 | 7.3 | 7.5 | 0.72"
        assert "(100 samples over 25 scenarios, k=4)" in lines[2]

    def test_json_row(self, tmp_path):
        result = invoke(["--output", "json", "eval", EVAL_SAMPLES], tmp_path)
        doc = single_json_doc(result.stdout)
        assert doc["row"] == "1.8, 17.0, 7.3, 7.5, 0.72"
        assert doc["samples"] == 100

    def test_k_exceeding_n_is_usage_error(self, tmp_path):
        result = invoke(["eval", EVAL_SAMPLES, "--n", "4", "--k", "5"], tmp_path)
        assert result.exit_code == EXIT_USAGE
        assert "exceeds" in result.output

    def test_too_few_attempts_is_usage_error(self, tmp_path):
        result = invoke(["eval", EVAL_SAMPLES, "--n", "5"], tmp_path)
        assert result.exit_code == EXIT_USAGE
        assert "fewer than 5 attempts" in result.output

    def test_n_limits_attempts(self, tmp_path):
        result = invoke(["--output", "json", "eval", EVAL_SAMPLES, "--n", "4"], tmp_path)
        doc = single_json_doc(result.stdout)
        assert doc["samples"] == 100

    def test_bad_file_is_usage_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("[]")
        result = invoke(["eval", str(bad)], tmp_path)
        assert result.exit_code == EXIT_USAGE

    def test_fig_dir_outputs(self, tmp_path):
        fig_dir = tmp_path / "figs"
        result = invoke(["eval", EVAL_SAMPLES, "--fig-dir", str(fig_dir)], tmp_path)
        assert result.exit_code == EXIT_OK
        names = sorted(p.name for p in fig_dir.iterdir())
        assert names == ["iterations.png", "metrics.csv", "pass-rate.png", "samples.csv"]


class TestBenchInvocation:
    def test_too_few_trials(self, tmp_path):
        result = invoke(["bench-invocation", "--trials", "2"], tmp_path)
        assert result.exit_code == EXIT_USAGE

    def test_bench_json_and_figures(self, tmp_path):
        fig_dir = tmp_path / "figs"
        result = invoke(
            [
                "--output", "json",
                "bench-invocation", "--trials", "3", "--sim-time", "0.05",
                "--fig-dir", str(fig_dir),
            ],
            tmp_path,
        )
        assert result.exit_code == EXIT_OK, result.output
        doc = single_json_doc(result.stdout)
        assert doc["trials"] == 3
        assert set(doc["native"]) == {
            "base_mean_s", "base_std_s", "overhead_mean_s", "overhead_std_s",
            "total_mean_s", "total_std_s",
        }
        assert "ordering" in doc
        names = sorted(p.name for p in fig_dir.iterdir())
        assert names == ["overhead.csv", "overhead.png"]


class TestServe:
    def test_port_in_use_is_usage_error(self, tmp_path):
        blocker = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        blocker.bind(("127.0.0.1", 0))
        port = blocker.getsockname()[1]
        try:
            result = invoke(
                [
                    "serve",
                    "--port", str(port),
                    "--transcript", CASE_STUDY,
                    "--fake-sim",
                    "--store", str(tmp_path / "sessions"),
                ],
                tmp_path,
            )
        finally:
            blocker.close()
        assert result.exit_code == EXIT_USAGE
        assert "cannot bind" in result.output

    def test_serve_requires_provider(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        result = invoke(["serve", "--fake-sim"], tmp_path)
        assert result.exit_code == EXIT_USAGE
        assert "no provider available" in result.output
