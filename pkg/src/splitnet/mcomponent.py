"""Emulated memory board.

The board owns a flat byte-addressed space carved into non-overlapping
regions by a first-fit allocator with an address-ordered free list.  Backing
bytes are materialized per region (zero-filled at allocation), so a board can
advertise a capacity far larger than host RAM as long as live regions stay
small.

Other boards reach it through ``M_ALLOC/M_WRITE/M_READ/M_FREE`` frames; the
:class:`MemClient` wrapper hides the packing.  All remote access is exactly
one request/reply exchange per call, which is what makes the data-path hop
audits meaningful.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .errors import (OutOfBoundsError, OutOfMemoryError, SplitnetError,
                     UseAfterFreeError)
from .interconnect import ComponentId, Fabric, Frame, Op

_ALLOC_REQ = struct.Struct("<Q")       # length
_ALLOC_RESP = struct.Struct("<Q")      # address
_WRITE_REQ = struct.Struct("<QQ")      # address, offset (+ raw bytes)
_READ_REQ = struct.Struct("<QQI")      # address, offset, length
_FREE_REQ = struct.Struct("<Q")        # address


@dataclass(frozen=True, slots=True)
class MemRegion:
    """A byte range allocated on one memory board; the address is the handle
    that travels between boards."""

    owner: ComponentId
    address: int
    length: int


class MemBoard:
    """One memory board: allocator plus byte store plus frame dispatcher."""

    def __init__(self, cid: ComponentId, capacity: int,
                 fabric: Optional[Fabric] = None):
        self.cid = cid
        self.capacity = capacity
        self.fabric = fabric
        self._free: List[Tuple[int, int]] = [(0, capacity)]  # (addr, size), by addr
        self._regions: Dict[int, bytearray] = {}
        self._lengths: Dict[int, int] = {}

    # -- local operations ---------------------------------------------------

    def mem_alloc(self, length: int) -> MemRegion:
        if length <= 0:
            raise SplitnetError("allocation length must be positive")
        for i, (addr, size) in enumerate(self._free):
            if size >= length:
                if size == length:
                    del self._free[i]
                else:
                    self._free[i] = (addr + length, size - length)
                self._regions[addr] = bytearray(length)
                self._lengths[addr] = length
                return MemRegion(self.cid, addr, length)
        raise OutOfMemoryError(f"{self.cid}: no slot for {length} bytes")

    def _lookup(self, address: int) -> bytearray:
        store = self._regions.get(address)
        if store is None:
            raise UseAfterFreeError(f"{self.cid}: region 0x{address:x} is not allocated")
        return store

    def mem_write(self, address: int, offset: int, data: bytes) -> None:
        store = self._lookup(address)
        if offset < 0 or offset + len(data) > len(store):
            raise OutOfBoundsError(
                f"write [{offset}, {offset + len(data)}) outside region of "
                f"{len(store)} bytes")
        store[offset:offset + len(data)] = data

    def mem_read(self, address: int, offset: int, length: int) -> bytes:
        store = self._lookup(address)
        if offset < 0 or length < 0 or offset + length > len(store):
            raise OutOfBoundsError(
                f"read [{offset}, {offset + length}) outside region of "
                f"{len(store)} bytes")
        return bytes(store[offset:offset + length])

    def mem_free(self, address: int) -> None:
        if address not in self._regions:
            raise UseAfterFreeError(f"{self.cid}: double free of 0x{address:x}")
        length = self._lengths.pop(address)
        del self._regions[address]
        self._insert_free(address, length)

    def _insert_free(self, addr: int, size: int) -> None:
        # keep the free list address-ordered and coalesced
        lo, hi = 0, len(self._free)
        while lo < hi:
            mid = (lo + hi) // 2
            if self._free[mid][0] < addr:
                lo = mid + 1
            else:
                hi = mid
        self._free.insert(lo, (addr, size))
        merged: List[Tuple[int, int]] = []
        for a, s in self._free:
            if merged and merged[-1][0] + merged[-1][1] == a:
                merged[-1] = (merged[-1][0], merged[-1][1] + s)
            else:
                merged.append((a, s))
        self._free = merged

    @property
    def allocated_bytes(self) -> int:
        return sum(self._lengths.values())

    def regions(self) -> List[MemRegion]:
        return [MemRegion(self.cid, a, l) for a, l in sorted(self._lengths.items())]

    # -- frame dispatcher ---------------------------------------------------

    def handle_frame(self, frame: Frame) -> None:
        try:
            if frame.op is Op.M_ALLOC:
                (length,) = _ALLOC_REQ.unpack(frame.payload)
                region = self.mem_alloc(length)
                self.fabric.reply(frame, payload=_ALLOC_RESP.pack(region.address))
            elif frame.op is Op.M_WRITE:
                address, offset = _WRITE_REQ.unpack_from(frame.payload)
                self.mem_write(address, offset, frame.payload[_WRITE_REQ.size:])
                self.fabric.reply(frame)
            elif frame.op is Op.M_READ:
                address, offset, length = _READ_REQ.unpack(frame.payload)
                self.fabric.reply(frame, payload=self.mem_read(address, offset, length))
            elif frame.op is Op.M_FREE:
                (address,) = _FREE_REQ.unpack(frame.payload)
                self.mem_free(address)
                self.fabric.reply(frame)
            else:
                raise SplitnetError(f"memory board got unexpected {frame.op.name}")
        except SplitnetError as exc:
            self.fabric.reply_error(frame, exc)


class MemClient:
    """Remote access to one memory board from another component."""

    def __init__(self, fabric: Fabric, source: ComponentId, board: ComponentId):
        self.fabric = fabric
        self.source = source
        self.board = board

    def alloc(self, length: int) -> MemRegion:
        reply = self.fabric.request(self.source, self.board, Op.M_ALLOC,
                                    _ALLOC_REQ.pack(length))
        (address,) = _ALLOC_RESP.unpack(reply.payload)
        return MemRegion(self.board, address, length)

    def write(self, region: MemRegion, offset: int, data: bytes) -> None:
        self.fabric.request(self.source, self.board, Op.M_WRITE,
                            _WRITE_REQ.pack(region.address, offset) + bytes(data))

    def read(self, region: MemRegion, offset: int, length: int) -> bytes:
        reply = self.fabric.request(self.source, self.board, Op.M_READ,
                                    _READ_REQ.pack(region.address, offset, length))
        return reply.payload

    def free(self, region: MemRegion) -> None:
        self.fabric.request(self.source, self.board, Op.M_FREE,
                            _FREE_REQ.pack(region.address))
