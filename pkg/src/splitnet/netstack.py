"""The packet network outside the interconnect.

Network boards reach the outside world through an ordinary protocol stack.
Under the in-process transport that stack is emulated here: stream sockets
between *attachments* (a network board's NIC or an outside machine), with the
topology's external link latency/bandwidth applied per direction, FIFO
delivery, credit-based backpressure, and graceful EOF.  Everything runs on
the virtual clock, so connect and transfer times are deterministic.

Under the host-socket transport the same interface wraps real TCP sockets on
the loopback; emulated addresses are mapped to OS-assigned ports.

Baseline ("plain Linux") benchmark runs use this stack directly, with no rack
machinery in between, so the comparison isolates exactly the split-socket
overhead.
"""

from __future__ import annotations

import socket as _socket
import threading
from collections import deque
from typing import Dict, Optional, Tuple

from .errors import (AddrInUseError, ConnRefusedError, PeerClosedError,
                     RpcTimeoutError, SplitnetError)
from .interconnect import ComponentId, LinkParams
from .sim import Closed, WaitTimeout

Addr = Tuple[str, int]

LOOPBACK_LINK = LinkParams(one_way_latency_us=0.0, bandwidth_bps=400e9)
EPHEMERAL_BASE = 49152


class _Flow:
    """One direction of a virtual stream: delayed FIFO delivery plus credits.

    The sender spends credit when it hands bytes to the stack and gets it
    back when the receiver consumes them, so a full receive buffer blocks the
    sender instead of dropping anything.  A chunk bigger than the whole buffer
    is admitted once the buffer is empty.
    """

    def __init__(self, kernel, link: LinkParams, capacity: int):
        self._kernel = kernel
        self._link = link
        self.capacity = capacity
        self.credit = capacity
        self._last_delivery = 0.0
        self._rx: deque[bytes] = deque()
        self._rx_eof = False
        self._reset = False
        self._send_parks: deque = deque()
        self._recv_parks: deque = deque()

    # sender side ------------------------------------------------------------

    def send(self, data: bytes) -> int:
        while (self.credit < len(data) and self.credit < self.capacity
               and not self._reset):
            park = self._kernel._make_park()
            self._send_parks.append(park)
            self._kernel._park_on(park)
        if self._reset:
            raise PeerClosedError("connection reset")
        self.credit -= len(data)
        self._schedule(self._deliver, bytes(data))
        return len(data)

    def send_eof(self) -> None:
        self._schedule(self._deliver_eof)

    def _schedule(self, fn, *args) -> None:
        deliver_at = max(self._kernel.now_us() + self._link.delay_us(
            len(args[0]) if args else 0), self._last_delivery)
        self._last_delivery = deliver_at
        self._kernel.call_at(deliver_at, fn, *args)

    # receiver side ---------------------------------------------------------

    def _deliver(self, data: bytes) -> None:
        if self._reset:
            return
        self._rx.append(data)
        self._wake_one(self._recv_parks)

    def _deliver_eof(self) -> None:
        self._rx_eof = True
        self._wake_all(self._recv_parks)

    def recv(self, max_len: int) -> bytes:
        while not self._rx:
            if self._rx_eof or self._reset:
                return b""
            park = self._kernel._make_park()
            self._recv_parks.append(park)
            self._kernel._park_on(park)
        out = bytearray()
        while self._rx and len(out) < max_len:
            chunk = self._rx[0]
            take = min(len(chunk), max_len - len(out))
            out += chunk[:take]
            if take == len(chunk):
                self._rx.popleft()
            else:
                self._rx[0] = chunk[take:]
        self.credit += len(out)
        self._wake_all(self._send_parks)
        return bytes(out)

    def reset(self) -> None:
        """Receiver went away: drop buffered data, fail blocked senders."""
        self._reset = True
        self._rx.clear()
        self._wake_all(self._send_parks)
        self._wake_all(self._recv_parks)

    def _wake_one(self, parks: deque) -> None:
        while parks:
            if self._kernel._wake(parks.popleft(), (0, None)):
                return

    def _wake_all(self, parks: deque) -> None:
        while parks:
            self._kernel._wake(parks.popleft(), (0, None))


class VirtualSocket:
    """Connected stream endpoint on the emulated stack."""

    def __init__(self, net: "VirtualNet", local: Addr, peer: Addr,
                 tx: _Flow, rx: _Flow):
        self._net = net
        self.local_addr = local
        self.peer_addr = peer
        self._tx = tx
        self._rx = rx
        self._closed = False

    def send(self, data: bytes) -> int:
        if self._closed:
            raise PeerClosedError("socket is closed")
        if not data:
            return 0
        return self._tx.send(data)

    def recv(self, max_len: int) -> bytes:
        if self._closed:
            return b""
        return self._rx.recv(max_len)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._tx.send_eof()
        self._rx.reset()


class VirtualListener:
    def __init__(self, net: "VirtualNet", attachment: ComponentId, addr: Addr,
                 backlog: int):
        self._net = net
        self.attachment = attachment
        self.addr = addr
        self.backlog = max(backlog, 1)
        self._accept_queue = net._kernel.msg_queue()
        self._waiting_syns: deque = deque()
        self.closed = False

    def accept(self) -> VirtualSocket:
        """Block until an established connection is available."""
        try:
            sock = self._accept_queue.get()
        except Closed:
            raise PeerClosedError("listener closed") from None
        while self._waiting_syns and len(self._accept_queue) < self.backlog:
            self._net._establish(self, self._waiting_syns.popleft())
        return sock

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self._net._listeners.pop(self.addr, None)
        while self._waiting_syns:
            syn = self._waiting_syns.popleft()
            self._net._refuse(syn)
        self._accept_queue.close()


class _Syn:
    __slots__ = ("attachment", "src", "dst", "waiter")

    def __init__(self, attachment, src, dst, waiter):
        self.attachment = attachment
        self.src = src
        self.dst = dst
        self.waiter = waiter


class VirtualNet:
    """Emulated stack shared by every attachment in one topology."""

    def __init__(self, kernel, topology, buffer_capacity: Optional[int] = None):
        self._kernel = kernel
        self._topology = topology
        self._listeners: Dict[Addr, VirtualListener] = {}
        self._ephemeral = EPHEMERAL_BASE
        self.buffer_capacity = buffer_capacity or max(256 * 1024,
                                                      topology.dram_budget)

    def _link_between(self, a: ComponentId, b: ComponentId) -> LinkParams:
        if a == b:
            return LOOPBACK_LINK
        return self._topology.link_params(a, b)

    def _attachment_of(self, ip: str) -> Optional[ComponentId]:
        nic = self._topology.nic_for_ip(ip)
        if nic is not None:
            return nic.ncomponent
        for ext in self._topology.externals:
            if ext.ip == ip:
                return ext.component
        return None

    def primary_ip(self, attachment: ComponentId) -> str:
        for nic in self._topology.nics:
            if nic.ncomponent == attachment:
                return nic.ip
        for ext in self._topology.externals:
            if ext.component == attachment:
                return ext.ip
        raise SplitnetError(f"{attachment} has no address on the packet network")

    def _next_port(self) -> int:
        self._ephemeral += 1
        return self._ephemeral

    # -- listener side ----------------------------------------------------------

    def listen(self, attachment: ComponentId, ip: str, port: int,
               backlog: int = 8) -> VirtualListener:
        addr = (ip, port)
        if addr in self._listeners:
            raise AddrInUseError(f"{ip}:{port} already bound")
        listener = VirtualListener(self, attachment, addr, backlog)
        self._listeners[addr] = listener
        return listener

    # -- connector side -----------------------------------------------------------

    def connect(self, attachment: ComponentId, ip: str, port: int,
                timeout_us: Optional[float] = None) -> VirtualSocket:
        """Block until the three-way handshake completes (one full RTT)."""
        src = (self.primary_ip(attachment), self._next_port())
        waiter = self._kernel.waiter()
        syn = _Syn(attachment, src, (ip, port), waiter)
        link = self._syn_link(syn)
        self._kernel.call_later(link.delay_us(0), self._on_syn, syn)
        try:
            return waiter.wait(timeout_us)
        except WaitTimeout:
            raise RpcTimeoutError(f"connect to {ip}:{port} timed out") from None

    def _syn_link(self, syn: _Syn) -> LinkParams:
        dst_attach = self._attachment_of(syn.dst[0])
        if dst_attach is None:
            return self._topology.external_link
        return self._link_between(syn.attachment, dst_attach)

    def _on_syn(self, syn: _Syn) -> None:
        listener = self._listeners.get(syn.dst)
        if listener is None or listener.closed:
            self._refuse(syn)
            return
        if len(listener._accept_queue) >= listener.backlog:
            listener._waiting_syns.append(syn)
            return
        self._establish(listener, syn)

    def _refuse(self, syn: _Syn) -> None:
        link = self._syn_link(syn)
        self._kernel.call_later(link.delay_us(0), syn.waiter.fail,
                                ConnRefusedError(f"{syn.dst[0]}:{syn.dst[1]}"))

    def _establish(self, listener: VirtualListener, syn: _Syn) -> None:
        link = self._link_between(syn.attachment, listener.attachment)
        c2s = _Flow(self._kernel, link, self.buffer_capacity)
        s2c = _Flow(self._kernel, link, self.buffer_capacity)
        server_sock = VirtualSocket(self, listener.addr, syn.src, s2c, c2s)
        client_sock = VirtualSocket(self, syn.src, listener.addr, c2s, s2c)
        listener._accept_queue.put(server_sock)
        self._kernel.call_later(link.delay_us(0), syn.waiter.set, client_sock)


# ---------------------------------------------------------------------------
# Real-socket twin (host transport)
# ---------------------------------------------------------------------------


class RealSocket:
    def __init__(self, sock: _socket.socket, local: Addr, peer: Addr):
        self._sock = sock
        self.local_addr = local
        self.peer_addr = peer

    def send(self, data: bytes) -> int:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise PeerClosedError(str(exc)) from None
        return len(data)

    def recv(self, max_len: int) -> bytes:
        try:
            return self._sock.recv(max_len)
        except OSError:
            return b""

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class RealListener:
    def __init__(self, net: "RealNet", sock: _socket.socket, addr: Addr):
        self._net = net
        self._sock = sock
        self.addr = addr
        self.closed = False

    def accept(self) -> RealSocket:
        try:
            conn, peer = self._sock.accept()
        except OSError:
            raise PeerClosedError("listener closed") from None
        conn.setsockopt(_socket.IPPROTO_TCP, _socket.TCP_NODELAY, 1)
        return RealSocket(conn, self.addr, peer)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self._net._unmap(self.addr)
        try:
            self._sock.close()
        except OSError:
            pass


class RealNet:
    """Same interface over host loopback TCP; emulated addresses are mapped
    to OS-assigned ports in a process-wide table."""

    def __init__(self, kernel=None, topology=None, buffer_capacity=None):
        self._map: Dict[Addr, Addr] = {}
        self._lock = threading.Lock()
        self._topology = topology

    def primary_ip(self, attachment: ComponentId) -> str:
        if self._topology is not None:
            for nic in self._topology.nics:
                if nic.ncomponent == attachment:
                    return nic.ip
            for ext in self._topology.externals:
                if ext.component == attachment:
                    return ext.ip
        return "127.0.0.1"

    def listen(self, attachment: ComponentId, ip: str, port: int,
               backlog: int = 8) -> RealListener:
        with self._lock:
            if (ip, port) in self._map:
                raise AddrInUseError(f"{ip}:{port} already bound")
            sock = _socket.socket(_socket.AF_INET, _socket.SOCK_STREAM)
            sock.setsockopt(_socket.SOL_SOCKET, _socket.SO_REUSEADDR, 1)
            sock.bind(("127.0.0.1", 0))
            sock.listen(backlog)
            self._map[(ip, port)] = sock.getsockname()
        return RealListener(self, sock, (ip, port))

    def connect(self, attachment: ComponentId, ip: str, port: int,
                timeout_us: Optional[float] = None) -> RealSocket:
        with self._lock:
            real = self._map.get((ip, port))
        if real is None:
            raise ConnRefusedError(f"{ip}:{port}")
        sock = _socket.socket(_socket.AF_INET, _socket.SOCK_STREAM)
        if timeout_us is not None:
            sock.settimeout(timeout_us / 1e6)
        try:
            sock.connect(real)
        except OSError as exc:
            raise ConnRefusedError(str(exc)) from None
        sock.settimeout(None)
        sock.setsockopt(_socket.IPPROTO_TCP, _socket.TCP_NODELAY, 1)
        return RealSocket(sock, sock.getsockname(), (ip, port))

    def _unmap(self, addr: Addr) -> None:
        with self._lock:
            self._map.pop(addr, None)
