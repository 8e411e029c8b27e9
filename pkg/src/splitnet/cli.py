"""Command line interface to the benchmark harness.

Subcommands mirror the scenarios: ``echo``, ``local``, ``conn``,
``wordcount``.  Every run prints a summary table; ``--csv`` writes the
delimited results and ``--plot`` renders the scenario's figures next to
them.  A topology file can come from ``--topology`` or the
``SPLITNET_TOPOLOGY`` environment variable; otherwise the built-in default
rack is used.  Exit status is nonzero when a scenario fails its inline
fidelity checks.
"""

from __future__ import annotations

import os
import sys
import tempfile
from typing import Optional, Sequence

import click

from .bench import (BenchConfig, BenchResult, emit_csv, generate_corpus,
                    run_conn_setup, run_echo, run_local, run_wordcount)
from .errors import ScenarioFailedError, SplitnetError
from .rack import TRANSPORT_HOSTSOCKET, TRANSPORT_INPROCESS
from .topology import RackTopology


def _parse_sizes(_ctx, _param, value: Optional[str]) -> Optional[Sequence[int]]:
    if value is None:
        return None
    try:
        sizes = tuple(int(part) for part in value.replace(" ", "").split(","))
    except ValueError:
        raise click.BadParameter("sizes must be a comma-separated list of ints")
    if not sizes or any(s <= 0 for s in sizes):
        raise click.BadParameter("sizes must be positive")
    return sizes


def common_options(fn):
    fn = click.option("--mode", "modes", multiple=True,
                      type=click.Choice(["dma", "ddio", "baseline"]),
                      help="data-path configuration; repeatable "
                           "(default: all three)")(fn)
    fn = click.option("--sizes", callback=_parse_sizes, default=None,
                      help="comma-separated message sizes in bytes")(fn)
    fn = click.option("--iters", default=200, show_default=True,
                      help="measured iterations per point")(fn)
    fn = click.option("--warmup", default=20, show_default=True,
                      help="warmup iterations excluded from statistics")(fn)
    fn = click.option("--topology", "topology_path", default=None,
                      type=click.Path(exists=True, dir_okay=False),
                      help="topology YAML (default: $SPLITNET_TOPOLOGY or "
                           "built-in rack)")(fn)
    fn = click.option("--csv", "csv_path", default=None, type=click.Path(),
                      help="write one CSV row per (scenario, mode, size)")(fn)
    fn = click.option("--seed", default=0, show_default=True)(fn)
    fn = click.option("--transport",
                      type=click.Choice([TRANSPORT_INPROCESS,
                                         TRANSPORT_HOSTSOCKET]),
                      default=TRANSPORT_INPROCESS, show_default=True,
                      help="inprocess = deterministic virtual clock; "
                           "hostsocket = frames over loopback TCP, wall clock")(fn)
    fn = click.option("--plot/--no-plot", default=False,
                      help="render the scenario's figures next to the CSV")(fn)
    return fn


def _build_config(scenario, modes, sizes, iters, warmup, topology_path,
                  seed, transport, **extra) -> BenchConfig:
    topology = RackTopology.from_env_or_default(topology_path)
    cfg = BenchConfig(scenario=scenario, iterations=iters, warmup=warmup,
                      topology=topology, transport=transport, seed=seed,
                      **extra)
    if modes:
        cfg.modes = tuple(modes)
    if sizes:
        cfg.message_sizes = sizes
    return cfg


def _finish(result: BenchResult, csv_path: Optional[str], plot: bool) -> None:
    click.echo(result.summary())
    if csv_path:
        emit_csv(result, csv_path)
        click.echo(f"# csv: {csv_path}")
    if plot:
        from .bench.report import render_figures
        out_dir = os.path.dirname(os.path.abspath(csv_path)) if csv_path else "."
        stem = (os.path.splitext(os.path.basename(csv_path))[0]
                if csv_path else result.config.scenario)
        for path in render_figures(result, out_dir, stem):
            click.echo(f"# figure: {path}")


def _run(runner, cfg: BenchConfig, csv_path, plot) -> None:
    try:
        result = runner(cfg)
    except ScenarioFailedError as exc:
        click.echo(f"scenario failed: {exc}", err=True)
        sys.exit(2)
    except SplitnetError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    _finish(result, csv_path, plot)


@click.group()
@click.version_option(package_name="splitnet")
def main() -> None:
    """Benchmarks for the emulated disaggregated rack."""


@main.command()
@common_options
def echo(modes, sizes, iters, warmup, topology_path, csv_path, seed,
         transport, plot) -> None:
    """Fixed-size echo against an outside client (latency/throughput)."""
    cfg = _build_config("echo", modes, sizes, iters, warmup, topology_path,
                        seed, transport)
    _run(run_echo, cfg, csv_path, plot)


@main.command()
@common_options
def local(modes, sizes, iters, warmup, topology_path, csv_path, seed,
          transport, plot) -> None:
    """Rack-local routes: pipe, board-to-board, and forced skeleton paths."""
    cfg = _build_config("local", modes, sizes, iters, warmup, topology_path,
                        seed, transport)
    _run(run_local, cfg, csv_path, plot)


@main.command()
@common_options
def conn(modes, sizes, iters, warmup, topology_path, csv_path, seed,
         transport, plot) -> None:
    """Outbound connection cost versus baseline, with hop decomposition."""
    cfg = _build_config("conn", modes, sizes, iters, warmup, topology_path,
                        seed, transport)
    _run(run_conn_setup, cfg, csv_path, plot)


@main.command()
@common_options
@click.option("--corpus", "corpus_path", default=None,
              type=click.Path(dir_okay=False),
              help="input text file (generated when omitted)")
@click.option("--corpus-size", default=10 * 1024 * 1024, show_default=True,
              help="bytes of corpus to generate when --corpus is omitted")
@click.option("--batch-pairs", default=1, show_default=True,
              help="records per map batch (1 = one pair per message)")
def wordcount(modes, sizes, iters, warmup, topology_path, csv_path, seed,
              transport, plot, corpus_path, corpus_size, batch_pairs) -> None:
    """Streaming word count: rack mapper, outside reducer, exact-count check."""
    if corpus_path is None:
        corpus_path = os.path.join(tempfile.gettempdir(),
                                   f"splitnet_corpus_{corpus_size}_{seed}.txt")
        if not os.path.exists(corpus_path):
            click.echo(f"# generating corpus: {corpus_path}")
            generate_corpus(corpus_path, corpus_size, seed)
    cfg = _build_config("wordcount", modes, sizes, iters, warmup,
                        topology_path, seed, transport,
                        corpus_path=corpus_path, corpus_size=corpus_size,
                        batch_pairs=batch_pairs)
    _run(run_wordcount, cfg, csv_path, plot)


if __name__ == "__main__":
    main()
