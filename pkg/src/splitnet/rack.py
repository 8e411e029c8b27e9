"""Assembly of one emulated rack from a topology.

``Rack(topology)`` wires up the kernel, the interconnect fabric, the packet
network, the memory boards, the manager, the network boards (which register
their NICs with the manager at startup), and the processor boards.  Board
and application code then runs inside ``rack.run(main)``.

Two transports:

* ``inprocess`` -- everything on the deterministic virtual clock; this is
  what the tests and the asserted benchmark numbers use.
* ``hostsocket`` -- frames serialized over loopback TCP between reader
  threads, boards on real threads, wall-clock timing; the modeled link delay
  is approximated by sleeping in the reader.  Useful for demos; never
  asserted against.
"""

from __future__ import annotations

import socket as _socket
import struct
import threading
from typing import Callable, Dict, Optional

from .gnm import Gnm
from .interconnect import (Channel, ComponentId, Fabric, Frame, GNM_ID,
                           HEADER_LEN, LinkParams, MID, NID, PID)
from .mcomponent import MemBoard
from .ncomponent import NComponent
from .netstack import RealNet, VirtualNet
from .pcomponent import PComponent
from .sim import RealKernel, VirtualKernel
from .topology import RackTopology

TRANSPORT_INPROCESS = "inprocess"
TRANSPORT_HOSTSOCKET = "hostsocket"


class HostChannel(Channel):
    """Channel whose frames travel over a real loopback TCP pair.

    One reader thread per endpoint decodes frames, sleeps the modeled delay,
    and hands them to the fabric, so per-direction FIFO comes from TCP itself.
    """

    def __init__(self, fabric: Fabric, a: ComponentId, b: ComponentId,
                 params: LinkParams):
        super().__init__(fabric, a, b, params)
        listener = _socket.socket(_socket.AF_INET, _socket.SOCK_STREAM)
        listener.bind(("127.0.0.1", 0))
        listener.listen(1)
        sock_a = _socket.create_connection(listener.getsockname())
        sock_b, _ = listener.accept()
        listener.close()
        for sock in (sock_a, sock_b):
            sock.setsockopt(_socket.IPPROTO_TCP, _socket.TCP_NODELAY, 1)
        self._socks = {a: sock_a, b: sock_b}
        self._locks = {a: threading.Lock(), b: threading.Lock()}
        for cid in (a, b):
            thread = threading.Thread(target=self._read_loop, args=(cid,),
                                      name=f"chan-{a}-{b}-rx-{cid}", daemon=True)
            thread.start()

    def send_frame(self, frame: Frame) -> None:
        if self.closed:
            from .errors import ChannelClosedError
            raise ChannelClosedError(f"channel {self.endpoints} is closed")
        sock = self._socks[frame.source]
        with self._locks[frame.source]:
            sock.sendall(frame.encode())

    def _read_loop(self, cid: ComponentId) -> None:
        sock = self._socks[self.other(cid)]

        def read_exact(n: int) -> Optional[bytes]:
            buf = b""
            while len(buf) < n:
                try:
                    chunk = sock.recv(n - len(buf))
                except OSError:
                    return None
                if not chunk:
                    return None
                buf += chunk
            return buf

        while True:
            header = read_exact(HEADER_LEN)
            if header is None:
                return
            (plen,) = struct.unpack_from("<I", header, HEADER_LEN - 4)
            payload = read_exact(plen) if plen else b""
            if payload is None:
                return
            frame = Frame.decode(header + payload)
            self.fabric.kernel.sleep(self.params.delay_us(plen))
            self.fabric._deliver(frame)

    def close(self) -> None:
        super().close()
        for sock in self._socks.values():
            try:
                sock.close()
            except OSError:
                pass


class HostFabric(Fabric):
    def _make_channel(self, a: ComponentId, b: ComponentId,
                      params: LinkParams) -> Channel:
        return HostChannel(self, a, b, params)


class Rack:
    """Everything needed to run applications against one emulated rack."""

    def __init__(self, topology: Optional[RackTopology] = None,
                 transport: str = TRANSPORT_INPROCESS):
        self.topology = topology or RackTopology.default()
        self.topology.validate()
        self.transport = transport
        if transport == TRANSPORT_INPROCESS:
            self.kernel = VirtualKernel()
            self.fabric = Fabric(self.kernel, self.topology)
            self.net = VirtualNet(self.kernel, self.topology)
        elif transport == TRANSPORT_HOSTSOCKET:
            self.kernel = RealKernel()
            self.fabric = HostFabric(self.kernel, self.topology)
            self.net = RealNet(self.kernel, self.topology)
        else:
            raise ValueError(f"unknown transport {transport!r}")

        self.mem_boards: Dict[ComponentId, MemBoard] = {}
        for i in range(self.topology.num_m):
            board = MemBoard(MID(i), self.topology.mem_capacity, self.fabric)
            self.mem_boards[board.cid] = board
            self.fabric.register_sink(board.cid, board.handle_frame)

        self.gnm = Gnm(self.fabric)
        self.fabric.register_sink(GNM_ID, self.gnm.handle_frame)

        self.ncomponents: Dict[ComponentId, NComponent] = {}
        for i in range(self.topology.num_n):
            nc = NComponent(NID(i), self.fabric, self.net, self.topology)
            nc.setup(self.gnm)
            self.ncomponents[nc.cid] = nc

        self.pcomponents: Dict[ComponentId, PComponent] = {}
        for i in range(self.topology.num_p):
            pc = PComponent(PID(i), self.fabric, self.topology)
            self.pcomponents[pc.cid] = pc

    # -- access helpers ------------------------------------------------------

    def pcomponent(self, index: int = 0) -> PComponent:
        return self.pcomponents[PID(index)]

    def ncomponent(self, index: int = 0) -> NComponent:
        return self.ncomponents[NID(index)]

    def mem_board(self, index: int = 0) -> MemBoard:
        return self.mem_boards[MID(index)]

    @property
    def instrumentation(self):
        return self.fabric.instrumentation

    def run(self, main: Callable, *args):
        """Run ``main`` to completion inside the rack's kernel."""
        return self.kernel.run(main, *args)

    def spawn(self, fn: Callable, *args, name: str = "task", daemon: bool = True):
        return self.kernel.spawn(fn, *args, name=name, daemon=daemon)

    def shutdown(self) -> None:
        self.fabric.close_all()

    def __enter__(self) -> "Rack":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()
