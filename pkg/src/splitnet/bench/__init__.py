"""Benchmark harness: echo, rack-local, connection-cost and word-count runs."""

from .scenarios import (BenchConfig, BenchResult, BenchRow, emit_csv,
                        generate_corpus, percentile, run_conn_setup, run_echo,
                        run_local, run_wordcount)

__all__ = [
    "BenchConfig",
    "BenchResult",
    "BenchRow",
    "emit_csv",
    "generate_corpus",
    "percentile",
    "run_conn_setup",
    "run_echo",
    "run_local",
    "run_wordcount",
]
