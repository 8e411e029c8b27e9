"""Emulated processor board: application sockets and the oversized cache.

Applications get a BSD-like socket API from :class:`StubSocket`.  A stub
forwards control calls to a skeleton on a network board and moves payload
bytes along one of two paths: the memory-mediated path (flush the cache entry
to a memory-board region, then tell the skeleton where to fetch it) or the
cache-direct path (ship the bytes inline, no memory board involved).  When
the peer turns out to live in the same rack, connect() instead wires the two
stubs together directly -- over the intra-board pipe when both are on this
board, over the board-to-board interconnect otherwise -- and data never
touches a network board at all.

The board's cache (:class:`ExCache`) models the oversized last-level cache
that holds the working set: capacity-bounded, LRU, and write-back -- a dirty
entry is always flushed to its backing region before eviction.
"""

from __future__ import annotations

import struct
from collections import OrderedDict, deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Optional, Tuple

from .errors import (CapacityExceededError, ConnRefusedError,
                     InterruptedError_, InvalidStateError, NoSuchIpError,
                     NotBoundError, NotConnectedError, OutOfMemoryError,
                     PeerClosedError, ResourceExhaustedError, SplitnetError)
from .gnm import GnmClient, pack_ip, unpack_ip
from .interconnect import ComponentId, ComponentKind, Fabric, Frame, Op
from .mcomponent import MemClient, MemRegion
from .ncomponent import (ACCEPT_EVT, ACTION_BIND, ACTION_CONNECT, CLOSE_REQ,
                         CREATE_REQ, CREATE_RESP, LISTEN_REQ, RECV_DIRECT_REQ,
                         RECV_REQ_, RECV_RESP_HDR, RESOLVE_REQ, RESOLVE_RESP,
                         SEND_INLINE_HDR, SEND_NOTIFY_REQ, SEND_RESP,
                         SKEL_ADDR_REQ)
from .sim import Closed

CONNECT_REQ = struct.Struct("<QQ4sH")    # target stub, source stub, source addr
CONNECT_RESP = struct.Struct("<Q")       # accepted-side stub handle
DATA_HDR = struct.Struct("<Q")           # target stub (+ raw bytes)

WILDCARD_IP = "0.0.0.0"


class TransferMode(Enum):
    DMA = "dma"
    DDIO = "ddio"


class SocketState(Enum):
    CREATED = "created"
    BOUND = "bound"
    LISTENING = "listening"
    CONNECTED = "connected"
    CLOSED = "closed"


class RouteKind(Enum):
    VIA_SKELETON = "skeleton"
    LOCAL_PIPE = "pipe"
    LOCAL_FIT = "fit"


@dataclass
class Route:
    kind: RouteKind
    nc: Optional[ComponentId] = None       # skeleton route
    skel_id: int = 0
    peer: Optional[ComponentId] = None     # direct route
    peer_handle: int = 0


@dataclass
class AppBuffer:
    """A transfer staging buffer: a memory-board region the stub flushes to
    and loads from, cached on this board between transfers."""

    region: MemRegion


class _CacheEntry:
    __slots__ = ("region", "data", "dirty")

    def __init__(self, region: MemRegion, data: bytes, dirty: bool):
        self.region = region
        self.data = data
        self.dirty = dirty


class ExCache:
    """Capacity-bounded write-back cache in front of the memory boards.

    Entries are keyed by backing region.  Eviction is LRU and never silently
    drops a dirty entry: the bytes go to the entry's region first.
    """

    def __init__(self, capacity: int,
                 mem_client_for: Callable[[ComponentId], MemClient]):
        self.capacity = capacity
        self._mem_for = mem_client_for
        self._entries: "OrderedDict[Tuple[ComponentId, int], _CacheEntry]" = OrderedDict()
        self._used = 0
        self.evictions = 0

    @staticmethod
    def _key(region: MemRegion) -> Tuple[ComponentId, int]:
        return (region.owner, region.address)

    @property
    def used(self) -> int:
        return self._used

    def resident(self, region: MemRegion) -> bool:
        return self._key(region) in self._entries

    def install(self, region: MemRegion, data: bytes, dirty: bool) -> None:
        if len(data) > self.capacity:
            raise CapacityExceededError(
                f"{len(data)} bytes exceed cache capacity {self.capacity}")
        if len(data) > region.length:
            raise CapacityExceededError(
                f"{len(data)} bytes exceed backing region of {region.length}")
        key = self._key(region)
        old = self._entries.pop(key, None)
        if old is not None:
            self._used -= len(old.data)
        self._evict_until_fits(len(data))
        self._entries[key] = _CacheEntry(region, bytes(data), dirty)
        self._used += len(data)

    def write(self, region: MemRegion, data: bytes) -> None:
        """Application wrote these bytes: entry becomes dirty."""
        self.install(region, data, dirty=True)

    def cache_flush(self, region: MemRegion) -> None:
        """Write the entry back to its region and clear the dirty flag."""
        entry = self._entries.get(self._key(region))
        if entry is None:
            raise SplitnetError(f"no cache entry for region 0x{region.address:x}")
        self._entries.move_to_end(self._key(region))
        if entry.dirty:
            self._mem_for(region.owner).write(region, 0, entry.data)
            entry.dirty = False

    def cache_load(self, region: MemRegion, length: Optional[int] = None,
                   force: bool = False) -> bytes:
        """Bytes of the region, from cache when resident unless forced."""
        length = region.length if length is None else length
        if length > self.capacity:
            raise CapacityExceededError(
                f"region of {length} bytes exceeds cache capacity {self.capacity}")
        key = self._key(region)
        entry = self._entries.get(key)
        if entry is not None and not force and len(entry.data) >= length:
            self._entries.move_to_end(key)
            return entry.data[:length]
        data = self._mem_for(region.owner).read(region, 0, length)
        self.install(region, data, dirty=False)
        return data

    def drop(self, region: MemRegion) -> None:
        """Explicit invalidation (buffer discarded by its owner); no flush."""
        entry = self._entries.pop(self._key(region), None)
        if entry is not None:
            self._used -= len(entry.data)

    def _evict_until_fits(self, incoming: int) -> None:
        while self._used + incoming > self.capacity and self._entries:
            _key, victim = self._entries.popitem(last=False)
            self._used -= len(victim.data)
            self.evictions += 1
            if victim.dirty:
                self._mem_for(victim.region.owner).write(victim.region, 0,
                                                         victim.data)


class PComponent:
    """One processor board: socket table, cache, dispatcher."""

    def __init__(self, cid: ComponentId, fabric: Fabric, topology):
        self.cid = cid
        self.fabric = fabric
        self.topology = topology
        self.kernel = fabric.kernel
        self.gnm = GnmClient(fabric, cid)
        mem_boards = [c for c in topology.components()
                      if c.kind is ComponentKind.M]
        self._mem: Dict[ComponentId, MemClient] = {
            m: MemClient(fabric, cid, m) for m in mem_boards}
        self.excache = ExCache(topology.excache_capacity, self._mem.__getitem__)
        self.sockets: Dict[int, "StubSocket"] = {}
        self.max_handles = 65536
        self._next_handle = 0
        self._free_handles: deque = deque()   # FIFO keeps reuse windows wide
        fabric.register_sink(cid, self.handle_frame)

    # -- socket table -------------------------------------------------------

    def socket(self) -> "StubSocket":
        if self._free_handles:
            handle = self._free_handles.popleft()
        elif self._next_handle < self.max_handles:
            self._next_handle += 1
            handle = self._next_handle
        else:
            raise ResourceExhaustedError(f"{self.cid}: socket table full")
        sock = StubSocket(self, handle)
        self.sockets[handle] = sock
        return sock

    def _release(self, handle: int) -> None:
        if self.sockets.pop(handle, None) is not None:
            self._free_handles.append(handle)

    # -- memory helpers ------------------------------------------------------

    def alloc_region(self, length: int) -> MemRegion:
        last: Optional[OutOfMemoryError] = None
        for client in self._mem.values():
            try:
                return client.alloc(length)
            except OutOfMemoryError as exc:
                last = exc
        raise last or OutOfMemoryError("no memory boards")

    def free_region(self, region: MemRegion) -> None:
        self._mem[region.owner].free(region)

    # -- board dispatcher -----------------------------------------------------

    def handle_frame(self, frame: Frame) -> None:
        if frame.op is Op.SKEL_ACCEPT_EVT:
            stub_handle, skel_id, raw_ip, port = ACCEPT_EVT.unpack(frame.payload)
            sock = self.sockets.get(stub_handle)
            if (sock is None or sock.state is not SocketState.LISTENING
                    or len(sock.accept_q) >= sock.backlog):
                # listener went away or is saturated; tear the skeleton down
                self.fabric.notify(self.cid, frame.source, Op.CLOSE,
                                   CLOSE_REQ.pack(skel_id))
                return
            sock.accept_q.put(("skel", frame.source, skel_id,
                               (unpack_ip(raw_ip), port)))
        elif frame.op is Op.STUB_CONNECT_REQ:
            self._on_direct_connect(frame)
        elif frame.op is Op.STUB_DATA:
            (handle,) = DATA_HDR.unpack_from(frame.payload)
            sock = self.sockets.get(handle)
            if sock is None or sock.ingress is None:
                self.fabric.reply_error(frame, PeerClosedError("no such socket"))
                return
            try:
                sock.ingress.put(frame)
            except Closed:
                self.fabric.reply_error(frame, PeerClosedError("socket closing"))
        elif frame.op is Op.STUB_EOF:
            (handle,) = DATA_HDR.unpack_from(frame.payload)
            sock = self.sockets.get(handle)
            if sock is not None and sock.ingress is not None:
                try:
                    sock.ingress.put(frame)
                except Closed:
                    pass
        # unmatched replies and unknown ops are dropped

    def _on_direct_connect(self, frame: Frame) -> None:
        target, src_handle, raw_ip, src_port = CONNECT_REQ.unpack(frame.payload)
        listener = self.sockets.get(target)
        if (listener is None or listener.state is not SocketState.LISTENING
                or len(listener.accept_q) >= listener.backlog):
            self.fabric.reply_error(frame, ConnRefusedError("not listening"))
            return
        kind = (RouteKind.LOCAL_PIPE if frame.source == self.cid
                else RouteKind.LOCAL_FIT)
        try:
            sock = self.socket()
        except ResourceExhaustedError:
            self.fabric.reply_error(frame, ConnRefusedError("socket table full"))
            return
        sock.state = SocketState.CONNECTED
        sock.mode = listener.mode
        sock.local = listener.local
        sock.peer = (unpack_ip(raw_ip), src_port)
        sock.route = Route(kind, peer=frame.source, peer_handle=src_handle)
        sock._open_direct_rx()
        listener.accept_q.put(("direct", sock))
        self.fabric.reply(frame, payload=CONNECT_RESP.pack(sock.handle))


class StubSocket:
    """Processor-side half of a split socket; BSD-like blocking API."""

    def __init__(self, pc: PComponent, handle: int):
        self.pc = pc
        self.handle = handle
        self.state = SocketState.CREATED
        self.mode = TransferMode.DMA
        self.local: Optional[Tuple[str, int]] = None
        self.peer: Optional[Tuple[str, int]] = None
        self.route: Optional[Route] = None
        self.force_remote = False      # benchmark knob: skip the local fast path
        self.backlog = 0
        self.accept_q = None
        self.ingress = None            # direct-route inbound frames
        self.rx = None                 # direct-route byte stream
        self.send_buf: Optional[AppBuffer] = None
        self.recv_buf: Optional[AppBuffer] = None
        self.bytes_sent = 0
        self.bytes_received = 0

    # -- option handling -----------------------------------------------------

    def set_transfer_mode(self, mode: TransferMode) -> None:
        """Choose the data path; frozen once the first payload byte moves."""
        if self.bytes_sent or self.bytes_received:
            raise InvalidStateError("transfer mode is frozen after first transfer")
        self.mode = mode

    # -- connection establishment ----------------------------------------------

    def bind(self, ip: str, port: int) -> None:
        self._require(SocketState.CREATED)
        if ip == WILDCARD_IP:
            nc, ip = self.pc.gnm.alloc_nic()
        else:
            nc, _ = self.pc.gnm.lookup_ip(ip)
            if nc is None:
                raise NoSuchIpError(f"{ip} is not an address in this rack")
        reply = self.pc.fabric.request(
            self.pc.cid, nc, Op.CREATE_SKEL,
            CREATE_REQ.pack(self.handle, ACTION_BIND, pack_ip(ip), port))
        (skel_id,) = CREATE_RESP.unpack(reply.payload)
        self.route = Route(RouteKind.VIA_SKELETON, nc=nc, skel_id=skel_id)
        self.local = (ip, port)
        self.state = SocketState.BOUND

    def listen(self, backlog: int = 8) -> None:
        if self.state is not SocketState.BOUND:
            raise NotBoundError("listen() needs a bound socket")
        self.pc.fabric.request(self.pc.cid, self.route.nc, Op.SKEL_LISTEN,
                               LISTEN_REQ.pack(self.route.skel_id, backlog))
        self.backlog = backlog
        self.accept_q = self.pc.kernel.msg_queue()
        self.state = SocketState.LISTENING

    def accept(self) -> "StubSocket":
        self._require(SocketState.LISTENING)
        try:
            event = self.accept_q.get()
        except Closed:
            raise InterruptedError_("listener closed while accepting") from None
        if event[0] == "direct":
            return event[1]
        _, nc, skel_id, peer = event
        sock = self.pc.socket()
        sock.state = SocketState.CONNECTED
        sock.mode = self.mode
        sock.local = self.local
        sock.peer = peer
        sock.route = Route(RouteKind.VIA_SKELETON, nc=nc, skel_id=skel_id)
        return sock

    def connect(self, ip: str, port: int) -> None:
        if self.state not in (SocketState.CREATED, SocketState.BOUND):
            raise InvalidStateError(f"connect() from {self.state.value}")
        owner, alloc_ip = self.pc.gnm.lookup_ip(
            ip, alloc_if_absent=self.state is SocketState.CREATED)
        rack_local = alloc_ip is None and owner is not None
        if rack_local and not self.force_remote:
            self._connect_direct(owner, ip, port)
        else:
            self._connect_via_skeleton(owner, alloc_ip, ip, port)
        self.peer = (ip, port)
        self.state = SocketState.CONNECTED

    def _connect_direct(self, owner_nc: ComponentId, ip: str, port: int) -> None:
        reply = self.pc.fabric.request(self.pc.cid, owner_nc, Op.RESOLVE_BINDING,
                                       RESOLVE_REQ.pack(pack_ip(ip), port))
        present, pcomp_wire, stub_handle = RESOLVE_RESP.unpack(reply.payload)
        if not present:
            raise ConnRefusedError(f"{ip}:{port} has no bound socket")
        peer_cid = ComponentId.from_wire(pcomp_wire)
        src_ip, src_port = self.local or (WILDCARD_IP, 0)
        self._open_direct_rx()
        reply = self.pc.fabric.request(
            self.pc.cid, peer_cid, Op.STUB_CONNECT_REQ,
            CONNECT_REQ.pack(stub_handle, self.handle, pack_ip(src_ip), src_port))
        (peer_handle,) = CONNECT_RESP.unpack(reply.payload)
        kind = (RouteKind.LOCAL_PIPE if peer_cid == self.pc.cid
                else RouteKind.LOCAL_FIT)
        old = self.route
        self.route = Route(kind, peer=peer_cid, peer_handle=peer_handle)
        if old is not None and old.kind is RouteKind.VIA_SKELETON:
            # bound socket took the fast path; its skeleton is now dead weight
            self.pc.fabric.request(self.pc.cid, old.nc, Op.CLOSE,
                                   CLOSE_REQ.pack(old.skel_id))

    def _connect_via_skeleton(self, owner: Optional[ComponentId],
                              alloc_ip: Optional[str], ip: str, port: int) -> None:
        if self.route is not None and self.route.kind is RouteKind.VIA_SKELETON:
            self.pc.fabric.request(
                self.pc.cid, self.route.nc, Op.SKEL_CONNECT,
                SKEL_ADDR_REQ.pack(self.route.skel_id, pack_ip(ip), port))
        else:
            nc = owner
            if nc is None:
                raise NoSuchIpError("no network board can route this connect")
            reply = self.pc.fabric.request(
                self.pc.cid, nc, Op.CREATE_SKEL,
                CREATE_REQ.pack(self.handle, ACTION_CONNECT, pack_ip(ip), port))
            (skel_id,) = CREATE_RESP.unpack(reply.payload)
            self.route = Route(RouteKind.VIA_SKELETON, nc=nc, skel_id=skel_id)
            if self.local is None and alloc_ip is not None:
                self.local = (alloc_ip, 0)

    def _open_direct_rx(self) -> None:
        self.rx = self.pc.kernel.byte_stream(self.pc.topology.dram_budget)
        self.ingress = self.pc.kernel.msg_queue()
        self.pc.kernel.spawn(self._ingress_loop,
                             name=f"{self.pc.cid}-ingress-{self.handle}",
                             daemon=True)

    def _ensure_transfer_buffers(self) -> None:
        # staging regions appear on first use, not at connect, so connection
        # cost stays one manager exchange plus one proxy exchange
        if self.send_buf is None:
            budget = self.pc.topology.dram_budget
            self.send_buf = AppBuffer(self.pc.alloc_region(budget))
            self.recv_buf = AppBuffer(self.pc.alloc_region(budget))

    # -- data path ----------------------------------------------------------------

    def send(self, data: bytes) -> int:
        """Deliver all of ``data`` to the peer; blocks under backpressure."""
        self._require(SocketState.CONNECTED, error=NotConnectedError)
        if not data:
            return 0
        if self.route.kind is not RouteKind.VIA_SKELETON:
            sent = self._send_direct(data)
        else:
            sent = self._send_via_skeleton(data)
        self.bytes_sent += sent
        return sent

    def _send_direct(self, data: bytes) -> int:
        self.pc.fabric.request(self.pc.cid, self.route.peer, Op.STUB_DATA,
                               DATA_HDR.pack(self.route.peer_handle) + bytes(data))
        return len(data)

    def _send_via_skeleton(self, data: bytes) -> int:
        self._ensure_transfer_buffers()
        budget = self.pc.topology.dram_budget
        route = self.route
        cache = self.pc.excache
        total = 0
        for off in range(0, len(data), budget):
            segment = data[off:off + budget]
            if self.mode is TransferMode.DMA:
                cache.write(self.send_buf.region, segment)
                cache.cache_flush(self.send_buf.region)
                reply = self.pc.fabric.request(
                    self.pc.cid, route.nc, Op.SEND_NOTIFY,
                    SEND_NOTIFY_REQ.pack(route.skel_id,
                                         self.send_buf.region.owner.to_wire(),
                                         self.send_buf.region.address,
                                         len(segment)))
            else:
                cache.write(self.send_buf.region, segment)
                reply = self.pc.fabric.request(
                    self.pc.cid, route.nc, Op.SEND_INLINE,
                    SEND_INLINE_HDR.pack(route.skel_id) + segment)
            (accepted,) = SEND_RESP.unpack(reply.payload)
            total += accepted
        return total

    def recv(self, max_len: int) -> bytes:
        """Up to ``max_len`` bytes; blocks when empty, b"" on orderly close."""
        self._require(SocketState.CONNECTED, error=NotConnectedError)
        if max_len <= 0:
            return b""
        if self.route.kind is not RouteKind.VIA_SKELETON:
            data = self.rx.get(max_len)
            if not data and self.state is SocketState.CLOSED:
                raise InterruptedError_("socket closed while receiving")
        else:
            data = self._recv_via_skeleton(max_len)
        self.bytes_received += len(data)
        return data

    def _recv_via_skeleton(self, max_len: int) -> bytes:
        self._ensure_transfer_buffers()
        budget = self.pc.topology.dram_budget
        route = self.route
        if self.mode is TransferMode.DMA:
            region = self.recv_buf.region
            reply = self.pc.fabric.request(
                self.pc.cid, route.nc, Op.RECV_REQ,
                RECV_REQ_.pack(route.skel_id, region.owner.to_wire(),
                               region.address, region.length,
                               min(max_len, budget)))
            (length,) = RECV_RESP_HDR.unpack(reply.payload)
            if length == 0:
                return b""
            return self.pc.excache.cache_load(region, length=length, force=True)
        reply = self.pc.fabric.request(
            self.pc.cid, route.nc, Op.RECV_REQ_DIRECT,
            RECV_DIRECT_REQ.pack(route.skel_id, min(max_len, budget)))
        (length,) = RECV_RESP_HDR.unpack_from(reply.payload)
        data = reply.payload[RECV_RESP_HDR.size:RECV_RESP_HDR.size + length]
        if data:
            self.pc.excache.install(self.recv_buf.region, data, dirty=False)
        return data

    # -- teardown ---------------------------------------------------------------

    def close(self) -> None:
        """Idempotent; wakes blocked accept/recv on this socket."""
        if self.state is SocketState.CLOSED:
            return
        route, prev = self.route, self.state
        self.state = SocketState.CLOSED
        if prev is SocketState.LISTENING:
            for event in self.accept_q.drain_close():
                if event[0] == "skel":
                    self.pc.fabric.notify(self.pc.cid, event[1], Op.CLOSE,
                                          CLOSE_REQ.pack(event[2]))
                else:
                    event[1].close()
        if route is not None and route.kind is RouteKind.VIA_SKELETON:
            self.pc.fabric.request(self.pc.cid, route.nc, Op.CLOSE,
                                   CLOSE_REQ.pack(route.skel_id))
        elif route is not None:
            self.pc.fabric.notify(self.pc.cid, route.peer, Op.STUB_EOF,
                                  DATA_HDR.pack(route.peer_handle))
        if self.ingress is not None:
            for frame in self.ingress.drain_close():
                if frame.op is Op.STUB_DATA:
                    self.pc.fabric.reply_error(frame, PeerClosedError("closed"))
        if self.rx is not None:
            self.rx.abort()
        for buf in (self.send_buf, self.recv_buf):
            if buf is not None:
                self.pc.excache.drop(buf.region)
                self.pc.free_region(buf.region)
        self.send_buf = self.recv_buf = None
        self.pc._release(self.handle)

    # -- plumbing ----------------------------------------------------------------

    def _ingress_loop(self) -> None:
        while True:
            try:
                frame = self.ingress.get()
            except Closed:
                return
            if frame.op is Op.STUB_EOF:
                self.rx.push_eof()
                return
            try:
                self.rx.put(frame.payload[DATA_HDR.size:])
            except Closed:
                self.pc.fabric.reply_error(frame, PeerClosedError("closed"))
                return
            self.pc.fabric.reply(frame)

    def _require(self, state: SocketState, error=InvalidStateError) -> None:
        if self.state is not state:
            raise error(f"socket is {self.state.value}, needs {state.value}")

    def __repr__(self) -> str:
        return (f"StubSocket({self.pc.cid}#{self.handle} {self.state.value}"
                f" {self.mode.value})")
