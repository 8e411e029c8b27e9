"""Benchmark scenarios over the emulated rack.

Four scenarios:

* ``echo`` -- a client outside the rack ping-pongs fixed-size messages
  against a server that runs either on the rack (memory-mediated or
  cache-direct data path) or directly on the native stack (the baseline).
  Connection establishment is excluded; it has its own scenario.
* ``local`` -- both endpoints live in the rack; compares the intra-board
  pipe route, the board-to-board direct route, and the two forced
  through-the-network-board paths.
* ``conn`` -- cost of an outbound connect versus the baseline, decomposed
  into interconnect exchanges, plus a skeleton leak audit.
* ``wordcount`` -- a streaming map-reduce word count: the mapper on the rack
  tokenizes a corpus and streams (word, count) records to a reducer outside
  the rack, whose table must match a sequential count exactly.

Every run validates payload fidelity inline and raises ScenarioFailed on any
mismatch, discarding the numbers.  Under the in-process transport all
reported latencies and hop counts are virtual and bit-reproducible for a
fixed seed and topology.
"""

from __future__ import annotations

import math
import os
import random
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from ..errors import ScenarioFailedError
from ..interconnect import ComponentKind, EID, NID
from ..pcomponent import TransferMode
from ..rack import Rack, TRANSPORT_INPROCESS
from ..topology import MIB, RackTopology

MODE_DMA = "dma"
MODE_DDIO = "ddio"
MODE_BASELINE = "baseline"
ALL_MODES = (MODE_DMA, MODE_DDIO, MODE_BASELINE)
LOCAL_ROUTES = ("pipe", "fit", "ddio", "dma")

DEFAULT_SIZES = (128, 256, 512, 1024, 2048)
RECV_CAP = 64 * 1024


@dataclass
class BenchConfig:
    scenario: str = "echo"
    modes: Sequence[str] = ALL_MODES
    message_sizes: Sequence[int] = DEFAULT_SIZES
    iterations: int = 200
    warmup: int = 20
    topology: Optional[RackTopology] = None
    transport: str = TRANSPORT_INPROCESS
    corpus_path: Optional[str] = None
    corpus_size: int = 10 * MIB
    batch_pairs: int = 1          # records per map batch; 1 = one pair per message
    seed: int = 0

    def validate(self) -> None:
        if self.iterations <= 0:
            raise ScenarioFailedError("iterations must be positive")
        if any(s <= 0 for s in self.message_sizes):
            raise ScenarioFailedError("message sizes must be positive")
        if self.batch_pairs <= 0:
            raise ScenarioFailedError("batch_pairs must be positive")
        for mode in self.modes:
            if mode not in ALL_MODES:
                raise ScenarioFailedError(f"unknown mode {mode!r}")

    def make_topology(self) -> RackTopology:
        return self.topology if self.topology is not None else RackTopology.default()


@dataclass
class BenchRow:
    scenario: str
    mode: str
    size_bytes: int
    p50_us: Optional[float] = None
    p95_us: Optional[float] = None
    p99_us: Optional[float] = None
    throughput_mbps: Optional[float] = None
    hops_pm: int = 0
    hops_pn: int = 0
    hops_nm: int = 0
    ops_per_sec: Optional[float] = None


@dataclass
class BenchResult:
    config: BenchConfig
    rows: List[BenchRow] = field(default_factory=list)
    notes: Dict[str, object] = field(default_factory=dict)

    def rows_for(self, mode: str) -> List[BenchRow]:
        return [r for r in self.rows if r.mode == mode]

    def row(self, mode: str, size: int) -> BenchRow:
        for r in self.rows:
            if r.mode == mode and r.size_bytes == size:
                return r
        raise KeyError((mode, size))

    def summary(self) -> str:
        header = (f"{'scenario':<10} {'mode':<9} {'size':>8} {'p50_us':>12} "
                  f"{'p95_us':>12} {'p99_us':>12} {'Mb/s':>12} "
                  f"{'pm':>6} {'pn':>6} {'nm':>6} {'ops/s':>12}")
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.scenario:<10} {r.mode:<9} {r.size_bytes:>8} "
                f"{_fmt(r.p50_us):>12} {_fmt(r.p95_us):>12} {_fmt(r.p99_us):>12} "
                f"{_fmt(r.throughput_mbps):>12} {r.hops_pm:>6} {r.hops_pn:>6} "
                f"{r.hops_nm:>6} {_fmt(r.ops_per_sec):>12}")
        for key, value in self.notes.items():
            lines.append(f"# {key}: {value}")
        return "\n".join(lines)


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.3f}"


def percentile(samples: Sequence[float], q: float) -> float:
    """Nearest-rank percentile; q in [0, 100]."""
    if not samples:
        raise ValueError("no samples")
    ordered = sorted(samples)
    rank = max(1, math.ceil(q / 100.0 * len(ordered)))
    return ordered[rank - 1]


CSV_HEADER = ("scenario,mode,size_bytes,p50_us,p95_us,p99_us,throughput_mbps,"
              "hops_pm,hops_pn,hops_nm,ops_per_sec")


def emit_csv(result: BenchResult, path: str) -> None:
    """One row per (scenario, mode, size); empty cells where not applicable."""

    def cell(value: Optional[float]) -> str:
        return "" if value is None else f"{value:.6f}"

    lines = [CSV_HEADER]
    for r in result.rows:
        lines.append(",".join([
            r.scenario, r.mode, str(r.size_bytes), cell(r.p50_us),
            cell(r.p95_us), cell(r.p99_us), cell(r.throughput_mbps),
            str(r.hops_pm), str(r.hops_pn), str(r.hops_nm),
            cell(r.ops_per_sec)]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _pattern(size: int, tag: int) -> bytes:
    return (struct.pack("<I", tag & 0xFFFFFFFF) * (size // 4 + 1))[:size]


def _hops(inst) -> Tuple[int, int, int]:
    if not inst.enabled:
        return (0, 0, 0)
    return (inst.pair_count(ComponentKind.P, ComponentKind.M),
            inst.pair_count(ComponentKind.P, ComponentKind.N),
            inst.pair_count(ComponentKind.N, ComponentKind.M))


# ---------------------------------------------------------------------------
# echo
# ---------------------------------------------------------------------------


def run_echo(cfg: BenchConfig) -> BenchResult:
    cfg.validate()
    result = BenchResult(cfg)
    for mode in cfg.modes:
        rack = Rack(cfg.make_topology(), cfg.transport)
        rows = rack.run(_echo_one_mode, rack, cfg, mode)
        result.rows.extend(rows)
        nc = rack.ncomponent(0)
        result.notes[f"echo.{mode}.skeletons"] = (
            f"created={nc.created_count} destroyed={nc.destroyed_count} "
            f"live={len(nc.skeletons)}")
        busy = nc.total_busy_us + sum(sk.busy_us for sk in nc.skeletons.values())
        result.notes[f"echo.{mode}.nc_busy_us"] = f"{busy:.3f}"
        rack.shutdown()
    return result


def _echo_one_mode(rack: Rack, cfg: BenchConfig, mode: str) -> List[BenchRow]:
    nic_ip = rack.topology.nics[0].ip
    rows = []
    for idx, size in enumerate(cfg.message_sizes):
        port = 5000 + idx
        if mode == MODE_BASELINE:
            listener = rack.net.listen(NID(0), nic_ip, port, backlog=4)
            server = rack.spawn(_native_echo_server, listener,
                                name=f"echo-{mode}-{size}")
        else:
            xfer = TransferMode.DMA if mode == MODE_DMA else TransferMode.DDIO
            sock = rack.pcomponent(0).socket()
            sock.set_transfer_mode(xfer)
            sock.bind(nic_ip, port)
            sock.listen(4)
            server = rack.spawn(_stub_echo_server, sock,
                                name=f"echo-{mode}-{size}")

        client = rack.net.connect(EID(0), nic_ip, port)
        samples = []
        inst = rack.instrumentation
        for i in range(cfg.warmup + cfg.iterations):
            if i == cfg.warmup and inst.enabled:
                inst.reset()
            payload = _pattern(size, cfg.seed * 1000003 + i)
            t0 = rack.kernel.now_us()
            client.send(payload)
            got = b""
            while len(got) < size:
                chunk = client.recv(RECV_CAP)
                if not chunk:
                    raise ScenarioFailedError(
                        f"echo {mode}/{size}: connection died mid-message")
                got += chunk
            if got != payload:
                raise ScenarioFailedError(f"echo {mode}/{size}: payload mismatch")
            if i >= cfg.warmup:
                samples.append(rack.kernel.now_us() - t0)
        hops = _hops(inst)
        client.close()
        server.join()
        if mode == MODE_BASELINE:
            listener.close()
        else:
            sock.close()
        elapsed = sum(samples)
        rows.append(BenchRow(
            scenario="echo", mode=mode, size_bytes=size,
            p50_us=percentile(samples, 50), p95_us=percentile(samples, 95),
            p99_us=percentile(samples, 99),
            throughput_mbps=size * 8.0 * len(samples) / elapsed,
            hops_pm=hops[0], hops_pn=hops[1], hops_nm=hops[2]))
    return rows


def _native_echo_server(listener) -> None:
    conn = listener.accept()
    while True:
        data = conn.recv(RECV_CAP)
        if not data:
            break
        conn.send(data)
    conn.close()


def _stub_echo_server(sock) -> None:
    conn = sock.accept()
    while True:
        data = conn.recv(RECV_CAP)
        if not data:
            break
        conn.send(data)
    conn.close()


# ---------------------------------------------------------------------------
# rack-local routes
# ---------------------------------------------------------------------------


def run_local(cfg: BenchConfig) -> BenchResult:
    cfg.validate()
    result = BenchResult(cfg)
    for route in LOCAL_ROUTES:
        rack = Rack(cfg.make_topology(), cfg.transport)
        if route == "fit" and rack.topology.num_p < 2:
            raise ScenarioFailedError("fit route needs two processor boards")
        rows = rack.run(_local_one_route, rack, cfg, route)
        result.rows.extend(rows)
        rack.shutdown()
    return result


def _local_one_route(rack: Rack, cfg: BenchConfig, route: str) -> List[BenchRow]:
    nic_ip = rack.topology.nics[0].ip
    rows = []
    for idx, size in enumerate(cfg.message_sizes):
        port = 6000 + idx
        server_sock = rack.pcomponent(0).socket()
        if route in ("dma", "ddio"):
            server_sock.set_transfer_mode(
                TransferMode.DMA if route == "dma" else TransferMode.DDIO)
        server_sock.bind(nic_ip, port)
        server_sock.listen(4)
        server = rack.spawn(_stub_echo_server, server_sock,
                            name=f"local-{route}-{size}")

        client_pc = rack.pcomponent(0 if route == "pipe" else
                                    min(1, rack.topology.num_p - 1))
        client = client_pc.socket()
        if route in ("dma", "ddio"):
            client.force_remote = True
            client.set_transfer_mode(
                TransferMode.DMA if route == "dma" else TransferMode.DDIO)
        client.connect(nic_ip, port)

        samples = []
        inst = rack.instrumentation
        for i in range(cfg.warmup + cfg.iterations):
            if i == cfg.warmup and inst.enabled:
                inst.reset()
            payload = _pattern(size, cfg.seed * 1000003 + i)
            t0 = rack.kernel.now_us()
            client.send(payload)
            got = b""
            while len(got) < size:
                chunk = client.recv(RECV_CAP)
                if not chunk:
                    raise ScenarioFailedError(f"local {route}/{size}: died early")
                got += chunk
            if got != payload:
                raise ScenarioFailedError(f"local {route}/{size}: payload mismatch")
            if i >= cfg.warmup:
                samples.append(rack.kernel.now_us() - t0)
        hops = _hops(inst)
        client.close()
        server.join()
        server_sock.close()
        elapsed = sum(samples)
        rows.append(BenchRow(
            scenario="local", mode=route, size_bytes=size,
            p50_us=percentile(samples, 50), p95_us=percentile(samples, 95),
            p99_us=percentile(samples, 99),
            throughput_mbps=size * 8.0 * len(samples) / elapsed,
            hops_pm=hops[0], hops_pn=hops[1], hops_nm=hops[2]))
    return rows


# ---------------------------------------------------------------------------
# connection establishment
# ---------------------------------------------------------------------------


def run_conn_setup(cfg: BenchConfig) -> BenchResult:
    cfg.validate()
    result = BenchResult(cfg)
    for mode in cfg.modes:
        rack = Rack(cfg.make_topology(), cfg.transport)
        row, notes = rack.run(_conn_one_mode, rack, cfg, mode)
        result.rows.append(row)
        result.notes.update(notes)
        rack.shutdown()
    return result


def _conn_one_mode(rack: Rack, cfg: BenchConfig, mode: str):
    ext_ip = rack.topology.externals[0].ip
    port = 7000
    listener = rack.net.listen(EID(0), ext_ip, port, backlog=16)
    accepted: List[object] = []
    sink = rack.spawn(_accept_sink, listener, accepted, name="conn-sink")

    samples = []
    inst = rack.instrumentation
    pc = rack.pcomponent(0)
    for i in range(cfg.warmup + cfg.iterations):
        if i == cfg.warmup and inst.enabled:
            inst.reset()
        if mode == MODE_BASELINE:
            t0 = rack.kernel.now_us()
            sock = rack.net.connect(NID(0), ext_ip, port)
            samples_at = rack.kernel.now_us() - t0
            sock.close()
        else:
            sock = pc.socket()
            t0 = rack.kernel.now_us()
            sock.connect(ext_ip, port)
            samples_at = rack.kernel.now_us() - t0
            sock.close()
        if i >= cfg.warmup:
            samples.append(samples_at)
    hops = _hops(inst)
    listener.close()
    sink.join()
    for conn in accepted:
        conn.close()

    nc = rack.ncomponent(0)
    notes = {
        f"conn.{mode}.skeletons": (
            f"created={nc.created_count} destroyed={nc.destroyed_count} "
            f"live={len(nc.skeletons)}"),
    }
    if mode != MODE_BASELINE:
        notes[f"conn.{mode}.overhead_us"] = (
            f"{percentile(samples, 50) - _baseline_connect_us(rack):.6f} "
            f"(one proxy exchange + one manager exchange)")
    elapsed = sum(samples)
    row = BenchRow(
        scenario="conn", mode=mode, size_bytes=0,
        p50_us=percentile(samples, 50), p95_us=percentile(samples, 95),
        p99_us=percentile(samples, 99),
        hops_pm=hops[0], hops_pn=hops[1], hops_nm=hops[2],
        ops_per_sec=len(samples) * 1e6 / elapsed)
    return row, notes


def _accept_sink(listener, accepted: List) -> None:
    while True:
        try:
            accepted.append(listener.accept())
        except Exception:
            return


def _baseline_connect_us(rack: Rack) -> float:
    link = rack.topology.link_params(NID(0), EID(0))
    return link.delay_us(0) * 2


# ---------------------------------------------------------------------------
# word count
# ---------------------------------------------------------------------------


def generate_corpus(path: str, size_bytes: int, seed: int = 0,
                    vocabulary: int = 4096) -> None:
    """Deterministic whitespace-separated corpus of roughly size_bytes."""
    rng = random.Random(seed)
    words = [f"w{rng.randrange(10 ** rng.randint(1, 6))}"
             for _ in range(vocabulary)]
    chunks = []
    total = 0
    while total < size_bytes:
        line = " ".join(rng.choice(words) for _ in range(64)) + "\n"
        chunks.append(line)
        total += len(line)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("".join(chunks))


def run_wordcount(cfg: BenchConfig) -> BenchResult:
    cfg.validate()
    if not cfg.corpus_path or not os.path.exists(cfg.corpus_path):
        raise ScenarioFailedError(
            f"corpus file not found: {cfg.corpus_path!r}")
    with open(cfg.corpus_path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    expected = Counter(tokens)
    corpus_bytes = os.path.getsize(cfg.corpus_path)

    result = BenchResult(cfg)
    for mode in cfg.modes:
        rack = Rack(cfg.make_topology(), cfg.transport)
        row, digest = rack.run(_wordcount_one_mode, rack, cfg, mode, tokens,
                               expected, corpus_bytes)
        result.rows.append(row)
        result.notes[f"wordcount.{mode}.distinct_words"] = len(expected)
        result.notes[f"wordcount.{mode}.table_sha256"] = digest
        rack.shutdown()
    return result


def table_digest(table) -> str:
    """Canonical digest of a word-count table, for cross-run comparison."""
    import hashlib
    blob = "".join(f"{w}\t{n}\n" for w, n in sorted(table.items()))
    return hashlib.sha256(blob.encode()).hexdigest()


def _wordcount_one_mode(rack: Rack, cfg: BenchConfig, mode: str,
                        tokens: List[str], expected: Counter,
                        corpus_bytes: int) -> BenchRow:
    ext_ip = rack.topology.externals[0].ip
    port = 9100
    listener = rack.net.listen(EID(0), ext_ip, port, backlog=2)
    reducer = rack.spawn(_reducer, listener, name=f"reduce-{mode}")

    inst = rack.instrumentation
    if inst.enabled:
        inst.reset()
    t0 = rack.kernel.now_us()
    if mode == MODE_BASELINE:
        out = rack.net.connect(NID(0), ext_ip, port)
        send = out.send
    else:
        sock = rack.pcomponent(0).socket()
        sock.set_transfer_mode(
            TransferMode.DMA if mode == MODE_DMA else TransferMode.DDIO)
        sock.connect(ext_ip, port)
        out, send = sock, sock.send

    pairs = 0
    payload_bytes = 0
    batch: List[str] = []
    for word in tokens:
        batch.append(f"{word}\t1\n")
        if len(batch) >= cfg.batch_pairs:
            data = "".join(batch).encode()
            send(data)
            payload_bytes += len(data)
            pairs += len(batch)
            batch.clear()
    if batch:
        data = "".join(batch).encode()
        send(data)
        payload_bytes += len(data)
        pairs += len(batch)
    out.close()

    table = reducer.join()
    elapsed = rack.kernel.now_us() - t0
    hops = _hops(inst)
    listener.close()
    if table != expected:
        missing = sum((expected - table).values()) + sum((table - expected).values())
        raise ScenarioFailedError(
            f"wordcount {mode}: reduced table differs from sequential count "
            f"({missing} record deltas)")
    # the latency columns carry total job runtime for this scenario
    row = BenchRow(
        scenario="wordcount", mode=mode, size_bytes=corpus_bytes,
        throughput_mbps=payload_bytes * 8.0 / elapsed,
        ops_per_sec=pairs * 1e6 / elapsed,
        p50_us=elapsed, p95_us=elapsed, p99_us=elapsed,
        hops_pm=hops[0], hops_pn=hops[1], hops_nm=hops[2])
    return row, table_digest(table)


def _reducer(listener) -> Counter:
    """External reduce half: aggregate tab-separated records until EOF."""
    conn = listener.accept()
    table: Counter = Counter()
    tail = b""
    while True:
        data = conn.recv(RECV_CAP)
        if not data:
            break
        tail += data
        lines = tail.split(b"\n")
        tail = lines.pop()
        for line in lines:
            word, _, count = line.partition(b"\t")
            table[word.decode()] += int(count)
    conn.close()
    if tail:
        raise ScenarioFailedError("reducer stream ended mid-record")
    return table
