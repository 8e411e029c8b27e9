"""Command line surface: subcommands, CSV/figure outputs, exit codes."""

import os

import yaml
from click.testing import CliRunner

from splitnet.bench.scenarios import CSV_HEADER
from splitnet.cli import main


def invoke(*args, env=None):
    return CliRunner().invoke(main, list(args), env=env, catch_exceptions=False)


def test_echo_writes_csv_with_exact_header(tmp_path):
    csv_path = tmp_path / "echo.csv"
    result = invoke("echo", "--mode", "ddio", "--sizes", "128",
                    "--iters", "5", "--warmup", "1", "--csv", str(csv_path))
    assert result.exit_code == 0, result.output
    lines = csv_path.read_text().strip().split("\n")
    assert lines[0] == CSV_HEADER
    assert len(lines) == 2
    assert "# csv:" in result.output


def test_plot_renders_figure_next_to_csv(tmp_path):
    csv_path = tmp_path / "run.csv"
    result = invoke("echo", "--mode", "baseline", "--sizes", "128",
                    "--iters", "3", "--warmup", "1", "--csv", str(csv_path),
                    "--plot")
    assert result.exit_code == 0, result.output
    assert (tmp_path / "run_echo.png").exists()


def test_local_and_conn_subcommands_run(tmp_path):
    result = invoke("local", "--sizes", "128", "--iters", "3", "--warmup", "1")
    assert result.exit_code == 0, result.output
    assert "pipe" in result.output and "fit" in result.output

    result = invoke("conn", "--mode", "baseline", "--iters", "3",
                    "--warmup", "1")
    assert result.exit_code == 0, result.output


def test_wordcount_explicit_missing_corpus_fails(tmp_path):
    corpus = tmp_path / "gen.txt"
    result = invoke("wordcount", "--mode", "ddio", "--corpus", str(corpus),
                    "--corpus-size", "2000", "--batch-pairs", "16")
    # explicit --corpus that does not exist is a scenario failure (exit 2)
    assert result.exit_code == 2
    assert "scenario failed" in result.output


def test_wordcount_generates_corpus_when_flag_omitted(tmp_path, monkeypatch):
    import tempfile
    monkeypatch.setattr(tempfile, "gettempdir", lambda: str(tmp_path))
    result = invoke("wordcount", "--mode", "ddio", "--corpus-size", "3000",
                    "--batch-pairs", "16")
    assert result.exit_code == 0, result.output
    assert "# generating corpus" in result.output
    assert (tmp_path / "splitnet_corpus_3000_0.txt").exists()


def test_wordcount_runs_on_existing_corpus(tmp_path):
    corpus = tmp_path / "c.txt"
    corpus.write_text("alpha beta alpha\n")
    result = invoke("wordcount", "--mode", "ddio", "--mode", "baseline",
                    "--corpus", str(corpus), "--batch-pairs", "4")
    assert result.exit_code == 0, result.output
    assert "wordcount" in result.output


def test_bad_sizes_is_usage_error():
    runner = CliRunner()
    result = runner.invoke(main, ["echo", "--sizes", "128,potato"])
    assert result.exit_code != 0


def test_topology_env_variable_is_honored(tmp_path):
    topo_path = tmp_path / "topo.yaml"
    topo_path.write_text(yaml.safe_dump({
        "components": {"pcomponents": 1, "mcomponents": 1, "ncomponents": 1,
                       "externals": 1},
        "links": {"default": {"latency_us": 0.0, "bandwidth_bps": 1e15}},
    }))
    result = invoke("conn", "--mode", "baseline", "--iters", "2",
                    "--warmup", "1",
                    env={"SPLITNET_TOPOLOGY": str(topo_path)})
    assert result.exit_code == 0, result.output


def test_transport_flag_accepts_hostsocket():
    result = invoke("echo", "--mode", "baseline", "--sizes", "64",
                    "--iters", "2", "--warmup", "1",
                    "--transport", "hostsocket")
    assert result.exit_code == 0, result.output
