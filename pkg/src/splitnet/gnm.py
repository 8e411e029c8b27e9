"""Global network manager: the rack-wide registry of network boards.

Keeps the list of network boards and the IP address of each of their NICs,
answers "which board owns this IP" lookups for bind/connect, the rack-
locality test behind the loopback fast path, and NIC allocation for wildcard
binds and outbound connects.  The allocation policy picks the board with the
fewest allocations so far, round-robin on ties.

The registry is a function from IP to board: registering a duplicate IP is
refused, and lookups are read-only.
"""

from __future__ import annotations

import socket as _socket
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .errors import (DuplicateIpError, ResourceExhaustedError, SplitnetError,
                     UnknownComponentError)
from .interconnect import ComponentId, ComponentKind, Fabric, Frame, GNM_ID, Op

_LOOKUP_REQ = struct.Struct("<4sB")      # ip, allocate-a-NIC-when-absent flag
_LOOKUP_RESP = struct.Struct("<BH4s")    # present, owner/allocated board, alloc ip
_IS_LOCAL_RESP = struct.Struct("<B")
_DEREG_REQ = struct.Struct("<H")
_ALLOC_RESP = struct.Struct("<H4s")
_NIC_HDR = struct.Struct("<H4sdH")       # board, ip, capacity, name length


def pack_ip(ip: str) -> bytes:
    return _socket.inet_aton(ip)


def unpack_ip(raw: bytes) -> str:
    return _socket.inet_ntoa(raw)


@dataclass(frozen=True)
class NicDescriptor:
    """One NIC as the manager sees it."""

    ncomponent: ComponentId
    nic_name: str
    ip: str
    link_capacity: float


class Gnm:
    """Registry state plus the frame dispatcher serving it."""

    def __init__(self, fabric: Optional[Fabric] = None):
        self.fabric = fabric
        self._by_ip: Dict[str, NicDescriptor] = {}
        self._order: List[ComponentId] = []      # registration order, for ties
        self._alloc_counts: Dict[ComponentId, int] = {}
        self._rr_last = -1
        self.generation = 0

    # -- operations ------------------------------------------------------------

    def register_ncomponent(self, nc: ComponentId,
                            nics: List[NicDescriptor]) -> None:
        if nc.kind is not ComponentKind.N:
            raise UnknownComponentError(f"{nc} is not a network board")
        batch = set()
        for nic in nics:
            if nic.ip in self._by_ip or nic.ip in batch:
                raise DuplicateIpError(nic.ip)
            batch.add(nic.ip)
        for nic in nics:
            self._by_ip[nic.ip] = NicDescriptor(nc, nic.nic_name, nic.ip,
                                                nic.link_capacity)
        if nc not in self._order:
            self._order.append(nc)
            self._alloc_counts.setdefault(nc, 0)
        self.generation += 1

    def lookup_ncomponent_by_ip(self, ip: str) -> Optional[ComponentId]:
        nic = self._by_ip.get(ip)
        return None if nic is None else nic.ncomponent

    def is_rack_local(self, ip: str) -> bool:
        return ip in self._by_ip

    def deregister_ncomponent(self, nc: ComponentId) -> None:
        if nc not in self._order:
            raise UnknownComponentError(f"{nc} was never registered")
        self._by_ip = {ip: nic for ip, nic in self._by_ip.items()
                       if nic.ncomponent != nc}
        self._order.remove(nc)
        self._alloc_counts.pop(nc, None)
        self.generation += 1

    def alloc_nic(self) -> NicDescriptor:
        """Pick a NIC for a wildcard bind or an outbound connect."""
        if not self._order:
            raise ResourceExhaustedError("no network boards registered")
        best: Optional[ComponentId] = None
        n = len(self._order)
        for step in range(1, n + 1):
            cand = self._order[(self._rr_last + step) % n]
            if best is None or self._alloc_counts[cand] < self._alloc_counts[best]:
                best = cand
        self._rr_last = self._order.index(best)
        self._alloc_counts[best] += 1
        for nic in self._by_ip.values():
            if nic.ncomponent == best:
                return nic
        raise ResourceExhaustedError(f"{best} has no NICs registered")

    def nics_of(self, nc: ComponentId) -> List[NicDescriptor]:
        return [nic for nic in self._by_ip.values() if nic.ncomponent == nc]

    # -- frame dispatcher ---------------------------------------------------------

    def handle_frame(self, frame: Frame) -> None:
        try:
            if frame.op is Op.LOOKUP_IP:
                raw_ip, alloc_flag = _LOOKUP_REQ.unpack(frame.payload)
                owner = self.lookup_ncomponent_by_ip(unpack_ip(raw_ip))
                if owner is not None:
                    payload = _LOOKUP_RESP.pack(1, owner.to_wire(), b"\0" * 4)
                elif alloc_flag:
                    nic = self.alloc_nic()
                    payload = _LOOKUP_RESP.pack(0, nic.ncomponent.to_wire(),
                                                pack_ip(nic.ip))
                else:
                    payload = _LOOKUP_RESP.pack(0, 0, b"\0" * 4)
                self.fabric.reply(frame, payload=payload)
            elif frame.op is Op.IS_LOCAL:
                local = self.is_rack_local(unpack_ip(frame.payload[:4]))
                self.fabric.reply(frame, payload=_IS_LOCAL_RESP.pack(int(local)))
            elif frame.op is Op.REGISTER_NC:
                nc, nics = _unpack_register(frame.payload)
                self.register_ncomponent(nc, nics)
                self.fabric.reply(frame)
            elif frame.op is Op.DEREGISTER_NC:
                (wire,) = _DEREG_REQ.unpack(frame.payload)
                self.deregister_ncomponent(ComponentId.from_wire(wire))
                self.fabric.reply(frame)
            elif frame.op is Op.ALLOC_NIC:
                nic = self.alloc_nic()
                self.fabric.reply(frame, payload=_ALLOC_RESP.pack(
                    nic.ncomponent.to_wire(), pack_ip(nic.ip)))
            else:
                raise SplitnetError(f"manager got unexpected {frame.op.name}")
        except SplitnetError as exc:
            self.fabric.reply_error(frame, exc)


def pack_register(nc: ComponentId, nics: List[NicDescriptor]) -> bytes:
    parts = [struct.pack("<H", len(nics))]
    for nic in nics:
        name = nic.nic_name.encode()
        parts.append(_NIC_HDR.pack(nc.to_wire(), pack_ip(nic.ip),
                                   nic.link_capacity, len(name)))
        parts.append(name)
    return b"".join(parts)


def _unpack_register(payload: bytes) -> Tuple[ComponentId, List[NicDescriptor]]:
    (count,) = struct.unpack_from("<H", payload)
    offset = 2
    nc = None
    nics: List[NicDescriptor] = []
    for _ in range(count):
        wire, raw_ip, capacity, name_len = _NIC_HDR.unpack_from(payload, offset)
        offset += _NIC_HDR.size
        name = payload[offset:offset + name_len].decode()
        offset += name_len
        nc = ComponentId.from_wire(wire)
        nics.append(NicDescriptor(nc, name, unpack_ip(raw_ip), capacity))
    if nc is None:
        raise SplitnetError("empty NIC registration")
    return nc, nics


class GnmClient:
    """Stub- and board-side access to the manager over the interconnect."""

    def __init__(self, fabric: Fabric, source: ComponentId):
        self.fabric = fabric
        self.source = source

    def lookup_ip(self, ip: str, alloc_if_absent: bool = False
                  ) -> Tuple[Optional[ComponentId], Optional[str]]:
        """Returns (owner, None) when the IP is rack-local; with the flag set
        a missing IP instead yields (allocated board, its NIC ip)."""
        reply = self.fabric.request(self.source, GNM_ID, Op.LOOKUP_IP,
                                    _LOOKUP_REQ.pack(pack_ip(ip),
                                                     int(alloc_if_absent)))
        present, wire, raw_ip = _LOOKUP_RESP.unpack(reply.payload)
        if present:
            return ComponentId.from_wire(wire), None
        if alloc_if_absent:
            return ComponentId.from_wire(wire), unpack_ip(raw_ip)
        return None, None

    def is_rack_local(self, ip: str) -> bool:
        reply = self.fabric.request(self.source, GNM_ID, Op.IS_LOCAL, pack_ip(ip))
        return bool(reply.payload[0])

    def register(self, nc: ComponentId, nics: List[NicDescriptor]) -> None:
        self.fabric.request(self.source, GNM_ID, Op.REGISTER_NC,
                            pack_register(nc, nics))

    def deregister(self, nc: ComponentId) -> None:
        self.fabric.request(self.source, GNM_ID, Op.DEREGISTER_NC,
                            _DEREG_REQ.pack(nc.to_wire()))

    def alloc_nic(self) -> Tuple[ComponentId, str]:
        reply = self.fabric.request(self.source, GNM_ID, Op.ALLOC_NIC)
        wire, raw_ip = _ALLOC_RESP.unpack(reply.payload)
        return ComponentId.from_wire(wire), unpack_ip(raw_ip)
