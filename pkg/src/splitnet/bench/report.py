"""Figure rendering for benchmark results.

Each scenario gets one PNG written next to the delimited output: latency and
throughput versus message size for echo and local runs, bar charts for the
connection-cost and word-count runs.  Rendering is headless (Agg backend).
"""

from __future__ import annotations

import os
from typing import List

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .scenarios import BenchResult  # noqa: E402

_COLORS = {"dma": "tab:red", "ddio": "tab:blue", "baseline": "tab:green",
           "pipe": "tab:purple", "fit": "tab:orange"}


def render_figures(result: BenchResult, out_dir: str, stem: str) -> List[str]:
    """Write the scenario's figures; returns the created paths."""
    os.makedirs(out_dir, exist_ok=True)
    scenario = result.config.scenario
    renderer = {
        "echo": _render_size_sweep,
        "local": _render_size_sweep,
        "conn": _render_conn,
        "wordcount": _render_wordcount,
    }.get(scenario)
    if renderer is None or not result.rows:
        return []
    path = os.path.join(out_dir, f"{stem}_{scenario}.png")
    renderer(result, path)
    return [path]


def _modes_in(result: BenchResult) -> List[str]:
    seen: List[str] = []
    for row in result.rows:
        if row.mode not in seen:
            seen.append(row.mode)
    return seen


def _render_size_sweep(result: BenchResult, path: str) -> None:
    fig, (ax_lat, ax_thr) = plt.subplots(1, 2, figsize=(11, 4.2))
    for mode in _modes_in(result):
        rows = sorted(result.rows_for(mode), key=lambda r: r.size_bytes)
        sizes = [r.size_bytes for r in rows]
        color = _COLORS.get(mode)
        ax_lat.plot(sizes, [r.p50_us for r in rows], marker="o",
                    label=mode, color=color)
        ax_thr.plot(sizes, [r.throughput_mbps for r in rows], marker="o",
                    label=mode, color=color)
    ax_lat.set_xlabel("message size (bytes)")
    ax_lat.set_ylabel("p50 round-trip latency (us)")
    ax_lat.set_xscale("log", base=2)
    ax_lat.grid(True, alpha=0.3)
    ax_lat.legend()
    ax_thr.set_xlabel("message size (bytes)")
    ax_thr.set_ylabel("throughput (Mb/s)")
    ax_thr.set_xscale("log", base=2)
    ax_thr.grid(True, alpha=0.3)
    ax_thr.legend()
    fig.suptitle(f"{result.config.scenario} benchmark "
                 f"({result.config.transport} transport)")
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)


def _render_conn(result: BenchResult, path: str) -> None:
    modes = _modes_in(result)
    values = [result.rows_for(m)[0].p50_us for m in modes]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(modes, values, color=[_COLORS.get(m, "gray") for m in modes])
    ax.set_ylabel("p50 connect cost (us)")
    ax.set_title("connection establishment")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)


def _render_wordcount(result: BenchResult, path: str) -> None:
    modes = _modes_in(result)
    runtimes = [result.rows_for(m)[0].p50_us / 1e6 for m in modes]
    ops = [result.rows_for(m)[0].ops_per_sec for m in modes]
    fig, (ax_rt, ax_ops) = plt.subplots(1, 2, figsize=(10, 4))
    colors = [_COLORS.get(m, "gray") for m in modes]
    ax_rt.bar(modes, runtimes, color=colors)
    ax_rt.set_ylabel("execution time (s)")
    ax_rt.grid(True, axis="y", alpha=0.3)
    ax_ops.bar(modes, ops, color=colors)
    ax_ops.set_ylabel("records per second")
    ax_ops.grid(True, axis="y", alpha=0.3)
    fig.suptitle("streaming word count")
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)
