"""Emulated network board.

The board's entry point is the proxy: it creates skeleton sockets on behalf
of processor-side stubs, keeps the (ip, port) -> (processor board, stub)
binding map that rack-local connects query, and dispatches data-path frames
to the right skeleton.  Each skeleton owns a socket on the real protocol
stack plus a bounded slice of board DRAM for received bytes; a reader task
per connected skeleton plays the role of the NIC-side copy engine, parking
when the DRAM slice is full so nothing is ever dropped.

Data leaves and enters through two engines: the memory-board DMA engine
(fetch outgoing bytes from / store incoming bytes to a memory-board region,
exactly one interconnect exchange per transfer) and the cache-direct engine
(bytes ride inline in the stub/skeleton frames, never touching a memory
board).
"""

from __future__ import annotations

import struct
from typing import Dict, Optional, Tuple

from .errors import (AddrInUseError, InterruptedError_, NotConnectedError,
                     OutOfBoundsError, PeerClosedError, ResourceExhaustedError,
                     SplitnetError)
from .gnm import Gnm, NicDescriptor, pack_ip, unpack_ip
from .interconnect import ComponentId, ComponentKind, Fabric, Frame, Op
from .mcomponent import MemClient, MemRegion
from .sim import Closed

RECV_CHUNK = 64 * 1024

CREATE_REQ = struct.Struct("<QB4sH")          # owner stub, action, ip, port
CREATE_RESP = struct.Struct("<Q")             # skeleton id
SKEL_ADDR_REQ = struct.Struct("<Q4sH")        # skeleton, ip, port
LISTEN_REQ = struct.Struct("<QI")             # skeleton, backlog
ACCEPT_EVT = struct.Struct("<QQ4sH")          # listener stub, new skeleton, peer
SEND_NOTIFY_REQ = struct.Struct("<QHQI")      # skel, region owner, addr, len
SEND_INLINE_HDR = struct.Struct("<Q")         # skeleton (+ raw bytes)
SEND_RESP = struct.Struct("<I")               # bytes accepted
RECV_REQ_ = struct.Struct("<QHQII")           # skel, region owner, addr, region len, max
RECV_DIRECT_REQ = struct.Struct("<QI")        # skel, max
RECV_RESP_HDR = struct.Struct("<I")           # length (+ raw bytes when direct)
CLOSE_REQ = struct.Struct("<Q")
RESOLVE_REQ = struct.Struct("<4sH")
RESOLVE_RESP = struct.Struct("<BHQ")          # present, processor board, stub

ACTION_NONE = 0
ACTION_BIND = 1
ACTION_CONNECT = 2


class DramQueue:
    """Per-socket receive buffer carved from board DRAM; bounded, lossless."""

    def __init__(self, kernel, capacity: int):
        self.capacity = capacity
        self._stream = kernel.byte_stream(capacity)
        self.total_in = 0
        self.total_out = 0

    @property
    def buffered(self) -> int:
        return self._stream.buffered

    def put(self, data: bytes) -> None:
        """Blocks while the slice is full; returns once the bytes are held."""
        self._stream.put(data)
        self.total_in += len(data)

    def get(self, max_len: int) -> bytes:
        data = self._stream.get(max_len)
        self.total_out += len(data)
        return data

    def push_eof(self) -> None:
        self._stream.push_eof()

    def abort(self) -> None:
        self._stream.abort()


class DdmaEngine:
    """Moves bytes between memory-board regions and board DRAM."""

    def __init__(self, mem_clients: Dict[ComponentId, MemClient]):
        self._mem = mem_clients
        self.transfers = 0
        self.bytes_moved = 0

    def fetch(self, region: MemRegion, length: int) -> bytes:
        data = self._mem[region.owner].read(region, 0, length)
        self.transfers += 1
        self.bytes_moved += len(data)
        return data

    def store(self, data: bytes, region: MemRegion) -> None:
        if len(data) > region.length:
            raise OutOfBoundsError(
                f"{len(data)} bytes do not fit region of {region.length}")
        self._mem[region.owner].write(region, 0, data)
        self.transfers += 1
        self.bytes_moved += len(data)


class DdioEngine:
    """Counts cache-direct transfers (bytes ride inline in frames)."""

    def __init__(self):
        self.transfers = 0
        self.bytes_moved = 0

    def record(self, nbytes: int) -> None:
        self.transfers += 1
        self.bytes_moved += nbytes


class SkeletonSocket:
    """Board-side half of a split socket."""

    def __init__(self, skel_id: int, owner: Tuple[ComponentId, int],
                 dram_rx: DramQueue):
        self.id = skel_id
        self.owner = owner                 # (processor board, stub handle)
        self.ip: Optional[str] = None
        self.port: int = 0
        self.native = None                 # connected protocol-stack socket
        self.listener = None
        self.state = "created"
        self.closing = False
        self.dram_rx = dram_rx
        self.busy_us = 0.0


class NComponent:
    """One network board: proxy, skeleton table, engines, NIC setup."""

    def __init__(self, cid: ComponentId, fabric: Fabric, net, topology):
        self.cid = cid
        self.fabric = fabric
        self.net = net
        self.topology = topology
        self.nics = [n for n in topology.nics if n.ncomponent == cid]
        self.skeletons: Dict[int, SkeletonSocket] = {}
        self.bindings: Dict[Tuple[str, int], Tuple[ComponentId, int]] = {}
        self._bound_by: Dict[int, Tuple[str, int]] = {}
        self._next_id = 0
        self.max_skeletons = topology.max_skeletons
        self.dram_budget = topology.dram_budget
        mem_boards = [c for c in topology.components()
                      if c.kind is ComponentKind.M]
        self.ddma = DdmaEngine({m: MemClient(fabric, cid, m) for m in mem_boards})
        self.ddio = DdioEngine()
        self.created_count = 0
        self.destroyed_count = 0
        self.total_busy_us = 0.0
        fabric.register_sink(cid, self.handle_frame)

    def setup(self, gnm: Gnm) -> None:
        """Register this board's NICs so the manager can resolve them."""
        gnm.register_ncomponent(self.cid, [
            NicDescriptor(self.cid, n.name, n.ip, n.capacity_bps)
            for n in self.nics])

    # -- proxy operations ----------------------------------------------------

    def proxy_create_skeleton(self, owner: Tuple[ComponentId, int]
                              ) -> SkeletonSocket:
        if len(self.skeletons) >= self.max_skeletons:
            raise ResourceExhaustedError(
                f"{self.cid}: skeleton limit {self.max_skeletons} reached")
        self._next_id += 1
        sk = SkeletonSocket(self._next_id, owner,
                            DramQueue(self.fabric.kernel, self.dram_budget))
        self.skeletons[sk.id] = sk
        self.created_count += 1
        return sk

    def proxy_resolve_binding(self, ip: str, port: int
                              ) -> Optional[Tuple[ComponentId, int]]:
        return self.bindings.get((ip, port))

    def _skel(self, skel_id: int) -> SkeletonSocket:
        sk = self.skeletons.get(skel_id)
        if sk is None:
            raise NotConnectedError(f"{self.cid}: no skeleton {skel_id}")
        return sk

    # -- skeleton operations -----------------------------------------------------

    def skel_bind(self, sk: SkeletonSocket, ip: str, port: int) -> None:
        if (ip, port) in self.bindings:
            raise AddrInUseError(f"{ip}:{port}")
        self.bindings[(ip, port)] = sk.owner
        self._bound_by[sk.id] = (ip, port)
        sk.ip, sk.port = ip, port
        sk.state = "bound"

    def skel_listen(self, sk: SkeletonSocket, backlog: int) -> None:
        sk.listener = self.net.listen(self.cid, sk.ip, sk.port, backlog)
        sk.state = "listening"
        self.fabric.kernel.spawn(self._accept_loop, sk,
                                 name=f"{self.cid}-accept-{sk.id}", daemon=True)

    def skel_connect(self, sk: SkeletonSocket, ip: str, port: int) -> None:
        sk.native = self.net.connect(self.cid, ip, port)
        sk.state = "connected"
        self._start_reader(sk)

    def skel_send(self, sk: SkeletonSocket,
                  region: Optional[MemRegion] = None,
                  length: int = 0, inline: Optional[bytes] = None) -> int:
        """Push one segment out the native socket, from a memory-board region
        (DMA path) or from inline bytes (cache-direct path)."""
        if sk.native is None:
            raise NotConnectedError(f"skeleton {sk.id} has no connection")
        t0 = self.fabric.kernel.now_us()
        if inline is None:
            data = self.ddma.fetch(region, length)
        else:
            data = inline
            self.ddio.record(len(data))
        sent = sk.native.send(data)
        sk.busy_us += self.fabric.kernel.now_us() - t0
        return sent

    def skel_recv(self, sk: SkeletonSocket, max_len: int,
                  region: Optional[MemRegion] = None) -> bytes:
        """Dequeue received bytes; blocks until data, EOF, or teardown."""
        data = sk.dram_rx.get(max_len)
        if sk.closing:
            raise InterruptedError_("socket closed while receiving")
        t0 = self.fabric.kernel.now_us()
        if data and region is not None:
            self.ddma.store(data, region)
        elif data:
            self.ddio.record(len(data))
        sk.busy_us += self.fabric.kernel.now_us() - t0
        return data

    def on_packet_arrival(self, sk: SkeletonSocket, data: bytes) -> None:
        """NIC-side delivery into the skeleton's DRAM slice (lossless)."""
        sk.dram_rx.put(data)

    def skel_close(self, skel_id: int) -> None:
        sk = self.skeletons.pop(skel_id, None)
        if sk is None:
            return
        sk.closing = True
        if sk.listener is not None:
            sk.listener.close()
        if sk.native is not None:
            sk.native.close()
        sk.dram_rx.abort()
        bound = self._bound_by.pop(skel_id, None)
        if bound is not None:
            self.bindings.pop(bound, None)
        sk.state = "closed"
        self.total_busy_us += sk.busy_us
        self.destroyed_count += 1

    # -- background tasks ---------------------------------------------------------

    def _start_reader(self, sk: SkeletonSocket) -> None:
        self.fabric.kernel.spawn(self._read_loop, sk,
                                 name=f"{self.cid}-rx-{sk.id}", daemon=True)

    def _read_loop(self, sk: SkeletonSocket) -> None:
        while True:
            try:
                data = sk.native.recv(RECV_CHUNK)
            except (PeerClosedError, Closed):
                data = b""
            if not data:
                sk.dram_rx.push_eof()
                return
            try:
                self.on_packet_arrival(sk, data)
            except Closed:
                return

    def _accept_loop(self, sk: SkeletonSocket) -> None:
        while True:
            try:
                native = sk.listener.accept()
            except (PeerClosedError, Closed):
                return
            try:
                child = self.proxy_create_skeleton(sk.owner)
            except ResourceExhaustedError:
                native.close()
                continue
            child.native = native
            child.ip, child.port = sk.ip, sk.port
            child.state = "connected"
            self._start_reader(child)
            peer_ip, peer_port = native.peer_addr
            self.fabric.notify(self.cid, sk.owner[0], Op.SKEL_ACCEPT_EVT,
                               ACCEPT_EVT.pack(sk.owner[1], child.id,
                                               pack_ip(peer_ip), peer_port))

    # -- frame dispatcher ----------------------------------------------------------

    def handle_frame(self, frame: Frame) -> None:
        if frame.op is Op.RESOLVE_BINDING:
            raw_ip, port = RESOLVE_REQ.unpack(frame.payload)
            owner = self.proxy_resolve_binding(unpack_ip(raw_ip), port)
            if owner is None:
                payload = RESOLVE_RESP.pack(0, 0, 0)
            else:
                payload = RESOLVE_RESP.pack(1, owner[0].to_wire(), owner[1])
            self.fabric.reply(frame, payload=payload)
            return
        if frame.op is Op.CLOSE:
            (skel_id,) = CLOSE_REQ.unpack(frame.payload)
            self.skel_close(skel_id)
            self.fabric.reply(frame)
            return
        # everything else may block; give it its own task
        self.fabric.kernel.spawn(self._serve, frame,
                                 name=f"{self.cid}-op-{frame.op.name}",
                                 daemon=True)

    def _serve(self, frame: Frame) -> None:
        try:
            handler = {
                Op.CREATE_SKEL: self._op_create,
                Op.SKEL_BIND: self._op_bind,
                Op.SKEL_LISTEN: self._op_listen,
                Op.SKEL_CONNECT: self._op_connect,
                Op.SEND_NOTIFY: self._op_send_notify,
                Op.SEND_INLINE: self._op_send_inline,
                Op.RECV_REQ: self._op_recv,
                Op.RECV_REQ_DIRECT: self._op_recv_direct,
            }.get(frame.op)
            if handler is None:
                raise SplitnetError(f"network board got unexpected {frame.op.name}")
            handler(frame)
        except SplitnetError as exc:
            self.fabric.reply_error(frame, exc)

    def _op_create(self, frame: Frame) -> None:
        owner_stub, action, raw_ip, port = CREATE_REQ.unpack(frame.payload)
        sk = self.proxy_create_skeleton((frame.source, owner_stub))
        try:
            if action == ACTION_BIND:
                self.skel_bind(sk, unpack_ip(raw_ip), port)
            elif action == ACTION_CONNECT:
                self.skel_connect(sk, unpack_ip(raw_ip), port)
        except SplitnetError:
            self.skel_close(sk.id)
            raise
        self.fabric.reply(frame, payload=CREATE_RESP.pack(sk.id))

    def _op_bind(self, frame: Frame) -> None:
        skel_id, raw_ip, port = SKEL_ADDR_REQ.unpack(frame.payload)
        self.skel_bind(self._skel(skel_id), unpack_ip(raw_ip), port)
        self.fabric.reply(frame)

    def _op_listen(self, frame: Frame) -> None:
        skel_id, backlog = LISTEN_REQ.unpack(frame.payload)
        self.skel_listen(self._skel(skel_id), backlog)
        self.fabric.reply(frame)

    def _op_connect(self, frame: Frame) -> None:
        skel_id, raw_ip, port = SKEL_ADDR_REQ.unpack(frame.payload)
        self.skel_connect(self._skel(skel_id), unpack_ip(raw_ip), port)
        self.fabric.reply(frame)

    def _op_send_notify(self, frame: Frame) -> None:
        skel_id, owner_wire, addr, length = SEND_NOTIFY_REQ.unpack(frame.payload)
        region = MemRegion(ComponentId.from_wire(owner_wire), addr, length)
        sent = self.skel_send(self._skel(skel_id), region=region, length=length)
        self.fabric.reply(frame, payload=SEND_RESP.pack(sent))

    def _op_send_inline(self, frame: Frame) -> None:
        (skel_id,) = SEND_INLINE_HDR.unpack_from(frame.payload)
        data = frame.payload[SEND_INLINE_HDR.size:]
        sent = self.skel_send(self._skel(skel_id), inline=data)
        self.fabric.reply(frame, payload=SEND_RESP.pack(sent))

    def _op_recv(self, frame: Frame) -> None:
        skel_id, owner_wire, addr, region_len, max_len = RECV_REQ_.unpack(
            frame.payload)
        region = MemRegion(ComponentId.from_wire(owner_wire), addr, region_len)
        data = self.skel_recv(self._skel(skel_id), min(max_len, region_len),
                              region=region)
        self.fabric.reply(frame, Op.RECV_RESP, RECV_RESP_HDR.pack(len(data)))

    def _op_recv_direct(self, frame: Frame) -> None:
        skel_id, max_len = RECV_DIRECT_REQ.unpack(frame.payload)
        data = self.skel_recv(self._skel(skel_id), max_len)
        self.fabric.reply(frame, Op.RECV_RESP,
                          RECV_RESP_HDR.pack(len(data)) + data)
