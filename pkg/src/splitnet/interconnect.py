"""Message transport between the emulated boards.

Every interaction between boards travels as a :class:`Frame` over a
:class:`Channel`.  A channel injects the configured one-way latency plus a
serialization term (``8 * payload_len / bandwidth``), preserves FIFO order per
direction, and reports every crossing to the :class:`Instrumentation`
counters.  The request/response pattern (:meth:`Fabric.rpc_call`) works in
both directions: any board may call into any other, and notifications may
flow the opposite way on the same channel.

Frames serialize to a fixed little-endian header (op u16, correlation id u64,
source u16, dest u16, payload length u32) followed by the raw payload, so the
host-socket transport is bit-exact with the in-process one.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Dict, Optional, Tuple

from .errors import (ChannelClosedError, InstrumentationDisabledError,
                     RpcTimeoutError, SplitnetError, UnknownComponentError,
                     error_from_code)
from .sim import US_PER_S, WaitTimeout


class ComponentKind(IntEnum):
    P = 0          # processor board
    M = 1          # memory board
    N = 2          # network board
    GNM = 3        # global network manager
    EXTERNAL = 4   # machine outside the rack


_KIND_CHARS = {ComponentKind.P: "P", ComponentKind.M: "M",
               ComponentKind.N: "N", ComponentKind.EXTERNAL: "E"}
_CHAR_KINDS = {v: k for k, v in _KIND_CHARS.items()}


@dataclass(frozen=True, slots=True)
class ComponentId:
    """Identity of one board; kind plus index is unique within a topology."""

    kind: ComponentKind
    index: int = 0

    def __str__(self) -> str:
        if self.kind is ComponentKind.GNM:
            return "GNM"
        return f"{_KIND_CHARS[self.kind]}{self.index}"

    @classmethod
    def parse(cls, text: str) -> "ComponentId":
        text = text.strip()
        if text.upper() == "GNM":
            return cls(ComponentKind.GNM, 0)
        m = re.fullmatch(r"([PMNE])(\d+)", text.upper())
        if not m:
            raise ValueError(f"not a component id: {text!r}")
        return cls(_CHAR_KINDS[m.group(1)], int(m.group(2)))

    def to_wire(self) -> int:
        return (int(self.kind) << 13) | (self.index & 0x1FFF)

    @classmethod
    def from_wire(cls, value: int) -> "ComponentId":
        return cls(ComponentKind(value >> 13), value & 0x1FFF)


PID = lambda i: ComponentId(ComponentKind.P, i)          # noqa: E731
MID = lambda i: ComponentId(ComponentKind.M, i)          # noqa: E731
NID = lambda i: ComponentId(ComponentKind.N, i)          # noqa: E731
EID = lambda i: ComponentId(ComponentKind.EXTERNAL, i)   # noqa: E731
GNM_ID = ComponentId(ComponentKind.GNM, 0)


class Op(IntEnum):
    """Wire op codes of the stub/skeleton/manager protocol."""

    # global network manager
    REGISTER_NC = 1
    LOOKUP_IP = 2
    IS_LOCAL = 3
    DEREGISTER_NC = 4
    ALLOC_NIC = 5
    # memory board
    M_ALLOC = 16
    M_WRITE = 17
    M_READ = 18
    M_FREE = 19
    # network board proxy / skeletons
    CREATE_SKEL = 32
    SKEL_BIND = 33
    SKEL_LISTEN = 34
    SKEL_ACCEPT_EVT = 35
    SKEL_CONNECT = 36
    SEND_NOTIFY = 37
    SEND_INLINE = 38
    RECV_REQ = 39
    RECV_REQ_DIRECT = 40
    RECV_RESP = 41
    CLOSE = 42
    RESOLVE_BINDING = 43
    # direct stub-to-stub route (rack-local optimization)
    STUB_CONNECT_REQ = 48
    STUB_DATA = 49
    STUB_EOF = 50
    # generic replies
    REPLY_OK = 96
    REPLY_ERR = 97


#: ops that complete a pending request instead of starting a new one
REPLY_OPS = frozenset({Op.REPLY_OK, Op.REPLY_ERR, Op.RECV_RESP})

_HEADER = struct.Struct("<HQHHI")
HEADER_LEN = _HEADER.size


@dataclass(slots=True)
class Frame:
    """One message of the board-to-board protocol."""

    op: Op
    correlation_id: int
    source: ComponentId
    dest: ComponentId
    payload: bytes = b""

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    def encode(self) -> bytes:
        return _HEADER.pack(int(self.op), self.correlation_id,
                            self.source.to_wire(), self.dest.to_wire(),
                            len(self.payload)) + self.payload

    @classmethod
    def decode(cls, data: bytes) -> "Frame":
        op, corr, src, dst, plen = _HEADER.unpack_from(data)
        payload = bytes(data[HEADER_LEN:HEADER_LEN + plen])
        if len(payload) != plen:
            raise ValueError("truncated frame")
        return cls(Op(op), corr, ComponentId.from_wire(src),
                   ComponentId.from_wire(dst), payload)


_ERR = struct.Struct("<H")


def pack_error(exc: SplitnetError) -> bytes:
    return _ERR.pack(exc.code) + str(exc).encode("utf-8", "replace")


def unpack_error(payload: bytes) -> SplitnetError:
    (code,) = _ERR.unpack_from(payload)
    return error_from_code(code, payload[_ERR.size:].decode("utf-8", "replace"))


@dataclass(frozen=True, slots=True)
class LinkParams:
    """Per-link latency/bandwidth model; latency in us, bandwidth in bits/s."""

    one_way_latency_us: float = 4.0
    bandwidth_bps: float = 40e9

    def __post_init__(self):
        if self.one_way_latency_us < 0:
            raise ValueError("latency must be >= 0")
        if self.bandwidth_bps <= 0:
            raise ValueError("bandwidth must be > 0")

    def delay_us(self, payload_len: int) -> float:
        return self.one_way_latency_us + (payload_len * 8.0 / self.bandwidth_bps) * US_PER_S


class Instrumentation:
    """Per-directed-link frame counters and the virtual stopwatch."""

    def __init__(self, kernel, enabled: bool = True):
        self._kernel = kernel
        self.enabled = enabled
        self._hops: Dict[Tuple[ComponentId, ComponentId], int] = {}
        self._mark = kernel.now_us()

    def _check(self) -> None:
        if not self.enabled:
            raise InstrumentationDisabledError("instrumentation disabled in topology")

    def record(self, source: ComponentId, dest: ComponentId) -> None:
        if not self.enabled:
            return
        key = (source, dest)
        self._hops[key] = self._hops.get(key, 0) + 1

    def reset(self) -> None:
        self._check()
        self._hops.clear()
        self._mark = self._kernel.now_us()

    def elapsed_virtual_time(self) -> float:
        """Microseconds of simulated time since the last reset."""
        self._check()
        return self._kernel.now_us() - self._mark

    def hop_count(self, source, dest) -> int:
        """Frames delivered source->dest since reset.

        Arguments may be :class:`ComponentId` for one directed link or
        :class:`ComponentKind` to aggregate over all boards of those kinds.
        """
        self._check()
        if isinstance(source, ComponentId):
            return self._hops.get((source, dest), 0)
        return sum(count for (s, d), count in self._hops.items()
                   if s.kind is source and d.kind is dest)

    def pair_count(self, kind_a: ComponentKind, kind_b: ComponentKind) -> int:
        """Frames in both directions between two board kinds since reset."""
        self._check()
        return self.hop_count(kind_a, kind_b) + self.hop_count(kind_b, kind_a)

    def snapshot(self) -> Dict[str, int]:
        self._check()
        return {f"{s}->{d}": n for (s, d), n in sorted(
            self._hops.items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1])))}


class Channel:
    """Bidirectional frame link between two boards.

    Delivery per direction is FIFO: a frame never overtakes an earlier one
    even when the earlier frame's serialization delay is longer.
    """

    def __init__(self, fabric: "Fabric", a: ComponentId, b: ComponentId,
                 params: LinkParams):
        self.fabric = fabric
        self.endpoints = (a, b)
        self.params = params
        self.closed = False
        self._last_delivery = {(a, b): 0.0, (b, a): 0.0}

    def other(self, cid: ComponentId) -> ComponentId:
        a, b = self.endpoints
        return b if cid == a else a

    def send_frame(self, frame: Frame) -> None:
        if self.closed:
            raise ChannelClosedError(f"channel {self.endpoints} is closed")
        direction = (frame.source, frame.dest)
        if direction not in self._last_delivery:
            raise UnknownComponentError(
                f"frame {frame.source}->{frame.dest} does not match channel "
                f"{self.endpoints}")
        kernel = self.fabric.kernel
        deliver_at = max(kernel.now_us() + self.params.delay_us(frame.payload_len),
                         self._last_delivery[direction])
        self._last_delivery[direction] = deliver_at
        kernel.call_at(deliver_at, self.fabric._deliver, frame)

    def close(self) -> None:
        self.closed = True


class Fabric:
    """The rack's interconnect: channels, delivery, and RPC bookkeeping."""

    def __init__(self, kernel, topology):
        self.kernel = kernel
        self.topology = topology
        self.instrumentation = Instrumentation(kernel, topology.instrumentation)
        self._channels: Dict[frozenset, Channel] = {}
        self._sinks: Dict[ComponentId, Callable[[Frame], None]] = {}
        self._pending: Dict[ComponentId, Dict[int, object]] = {}
        self._corr: Dict[ComponentId, int] = {}

    # -- wiring ---------------------------------------------------------------

    def register_sink(self, cid: ComponentId,
                      handler: Callable[[Frame], None]) -> None:
        """Install the component's single dispatcher for non-reply frames."""
        self._sinks[cid] = handler
        self._pending.setdefault(cid, {})

    def open_channel(self, a: ComponentId, b: ComponentId) -> Channel:
        if a == b:
            raise UnknownComponentError(f"cannot link {a} to itself")
        for cid in (a, b):
            if not self.topology.has_component(cid):
                raise UnknownComponentError(f"{cid} is not in the topology")
        key = frozenset((a, b))
        channel = self._channels.get(key)
        if channel is None:
            channel = self._make_channel(a, b, self.topology.link_params(a, b))
            self._channels[key] = channel
        return channel

    def _make_channel(self, a: ComponentId, b: ComponentId,
                      params: LinkParams) -> Channel:
        return Channel(self, a, b, params)

    # -- sending ---------------------------------------------------------------

    def next_correlation_id(self, source: ComponentId) -> int:
        value = self._corr.get(source, 0) + 1
        self._corr[source] = value
        return value

    def send(self, frame: Frame) -> None:
        """Route a frame: over the pair's channel, or the intra-board pipe
        when source and destination are the same processor board."""
        if frame.source == frame.dest:
            self.kernel.call_later(self.topology.pipe_latency_us,
                                   self._deliver, frame)
        else:
            self.open_channel(frame.source, frame.dest).send_frame(frame)

    def rpc_call(self, channel: Channel, request: Frame,
                 timeout_us: Optional[float] = None) -> Frame:
        """Send a request over a channel and block the caller for its reply.

        Raises the remote error if the reply is REPLY_ERR, and
        :class:`RpcTimeoutError` if nothing correlated arrives in time.
        """
        if request.source not in channel.endpoints:
            raise UnknownComponentError(
                f"{request.source} is not an endpoint of {channel.endpoints}")
        return self._rpc(request, timeout_us)

    def _rpc(self, request: Frame, timeout_us: Optional[float]) -> Frame:
        waiter = self.kernel.waiter()
        pending = self._pending.setdefault(request.source, {})
        pending[request.correlation_id] = waiter
        self.send(request)
        try:
            reply = waiter.wait(timeout_us)
        except WaitTimeout:
            raise RpcTimeoutError(
                f"no reply to {request.op.name} #{request.correlation_id} "
                f"from {request.dest}") from None
        finally:
            pending.pop(request.correlation_id, None)
        if reply.op is Op.REPLY_ERR:
            raise unpack_error(reply.payload)
        return reply

    def request(self, source: ComponentId, dest: ComponentId, op: Op,
                payload: bytes = b"", timeout_us: Optional[float] = None) -> Frame:
        """Convenience: build a correlated frame, send it, await the reply."""
        frame = Frame(op, self.next_correlation_id(source), source, dest, payload)
        return self._rpc(frame, timeout_us)

    def notify(self, source: ComponentId, dest: ComponentId, op: Op,
               payload: bytes = b"") -> None:
        """One-way frame; no reply expected."""
        self.send(Frame(op, self.next_correlation_id(source), source, dest, payload))

    def reply(self, request: Frame, op: Op = Op.REPLY_OK,
              payload: bytes = b"") -> None:
        self.send(Frame(op, request.correlation_id, request.dest,
                        request.source, payload))

    def reply_error(self, request: Frame, exc: SplitnetError) -> None:
        self.reply(request, Op.REPLY_ERR, pack_error(exc))

    # -- delivery ---------------------------------------------------------------

    def _deliver(self, frame: Frame) -> None:
        self.instrumentation.record(frame.source, frame.dest)
        if frame.op in REPLY_OPS:
            waiter = self._pending.get(frame.dest, {}).get(frame.correlation_id)
            if waiter is not None:
                waiter.set(frame)
                return
        sink = self._sinks.get(frame.dest)
        if sink is not None:
            sink(frame)
        # frames to a component with no dispatcher are dropped, like a dark NIC

    def close_all(self) -> None:
        for channel in self._channels.values():
            channel.close()
