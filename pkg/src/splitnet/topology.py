"""Declarative description of the emulated rack.

A topology lists the boards, the NIC addresses owned by each network board,
the machines outside the rack, and the link parameters of the interconnect.
It loads from a small YAML file (see ``RackTopology.from_dict`` for the
schema, and the README for a worked example); ``RackTopology.default()``
matches the reference setup: two processor boards, one memory board, one
network board with a gigabit NIC, one outside machine, and 4 us one-way
interconnect links (8 us round trip).

The ``SPLITNET_TOPOLOGY`` environment variable may point at a topology file;
the CLI falls back to it when ``--topology`` is not given.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterator, List, Optional

import yaml

from .errors import SplitnetError
from .interconnect import (ComponentId, ComponentKind, GNM_ID, LinkParams,
                           EID, MID, NID, PID)

ENV_TOPOLOGY = "SPLITNET_TOPOLOGY"

KIB = 1024
MIB = 1024 * KIB
GIB = 1024 * MIB


@dataclass(frozen=True)
class NicSpec:
    """One NIC on a network board, addressable from outside the rack."""

    ncomponent: ComponentId
    name: str
    ip: str
    capacity_bps: float = 1e9


@dataclass(frozen=True)
class ExternalSpec:
    """A machine outside the rack reachable through the NIC network."""

    component: ComponentId
    ip: str


@dataclass
class RackTopology:
    num_p: int = 2
    num_m: int = 1
    num_n: int = 1
    num_external: int = 1
    default_link: LinkParams = field(default_factory=LinkParams)
    external_link: LinkParams = field(
        default_factory=lambda: LinkParams(one_way_latency_us=30.0,
                                           bandwidth_bps=1e9))
    pair_links: Dict[FrozenSet[ComponentId], LinkParams] = field(default_factory=dict)
    instrumentation: bool = True
    excache_capacity: int = 64 * MIB      # per processor board
    mem_capacity: int = 8 * GIB           # per memory board
    dram_budget: int = 1 * MIB            # per-socket slice of nComponent DRAM
    max_skeletons: int = 8192             # per network board
    pipe_latency_us: float = 0.5          # intra-board stub-to-stub hop
    nics: List[NicSpec] = field(default_factory=list)
    externals: List[ExternalSpec] = field(default_factory=list)
    seed: int = 0

    # -- structure -------------------------------------------------------------

    def components(self) -> Iterator[ComponentId]:
        for i in range(self.num_p):
            yield PID(i)
        for i in range(self.num_m):
            yield MID(i)
        for i in range(self.num_n):
            yield NID(i)
        yield GNM_ID
        for i in range(self.num_external):
            yield EID(i)

    def has_component(self, cid: ComponentId) -> bool:
        counts = {ComponentKind.P: self.num_p, ComponentKind.M: self.num_m,
                  ComponentKind.N: self.num_n,
                  ComponentKind.EXTERNAL: self.num_external}
        if cid.kind is ComponentKind.GNM:
            return cid.index == 0
        return 0 <= cid.index < counts[cid.kind]

    def link_params(self, a: ComponentId, b: ComponentId) -> LinkParams:
        override = self.pair_links.get(frozenset((a, b)))
        if override is not None:
            return override
        if ComponentKind.EXTERNAL in (a.kind, b.kind):
            return self.external_link
        return self.default_link

    def validate(self) -> None:
        if min(self.num_p, self.num_m, self.num_n) < 1:
            raise SplitnetError("topology needs at least one P, M and N board")
        seen = set()
        for nic in self.nics:
            if not self.has_component(nic.ncomponent):
                raise SplitnetError(f"NIC {nic.name} on unknown {nic.ncomponent}")
            if nic.ncomponent.kind is not ComponentKind.N:
                raise SplitnetError(f"NIC {nic.name} must live on an N board")
            if nic.ip in seen:
                raise SplitnetError(f"duplicate NIC ip {nic.ip}")
            seen.add(nic.ip)
        for ext in self.externals:
            if ext.ip in seen:
                raise SplitnetError(f"external ip {ext.ip} collides with a NIC")
            seen.add(ext.ip)

    # -- construction -----------------------------------------------------------

    @classmethod
    def default(cls) -> "RackTopology":
        topo = cls()
        topo.nics = [NicSpec(NID(0), "eth0", "10.0.0.1", 1e9)]
        topo.externals = [ExternalSpec(EID(0), "192.168.1.100")]
        topo.validate()
        return topo

    def with_links(self, latency_us: float,
                   bandwidth_bps: Optional[float] = None) -> "RackTopology":
        """Copy with every interconnect link set to the given parameters."""
        link = LinkParams(latency_us,
                          bandwidth_bps or self.default_link.bandwidth_bps)
        return replace(self, default_link=link, pair_links={})

    @classmethod
    def from_dict(cls, data: dict) -> "RackTopology":
        topo = cls()
        comp = data.get("components", {})
        topo.num_p = int(comp.get("pcomponents", topo.num_p))
        topo.num_m = int(comp.get("mcomponents", topo.num_m))
        topo.num_n = int(comp.get("ncomponents", topo.num_n))
        topo.num_external = int(comp.get("externals", topo.num_external))
        topo.instrumentation = bool(data.get("instrumentation", True))
        topo.seed = int(data.get("seed", 0))
        for key in ("excache_capacity", "mem_capacity", "dram_budget",
                    "max_skeletons"):
            if key in data:
                setattr(topo, key, int(data[key]))
        if "pipe_latency_us" in data:
            topo.pipe_latency_us = float(data["pipe_latency_us"])

        links = data.get("links", {})
        if "default" in links:
            topo.default_link = _link_from_dict(links["default"])
        if "external_default" in links:
            topo.external_link = _link_from_dict(links["external_default"])
        for pair in links.get("pairs", []):
            a = ComponentId.parse(pair["a"])
            b = ComponentId.parse(pair["b"])
            topo.pair_links[frozenset((a, b))] = _link_from_dict(pair)

        nics = data.get("nics")
        if nics is None:
            topo.nics = [NicSpec(NID(i), f"eth{i}", f"10.0.{i}.1", 1e9)
                         for i in range(topo.num_n)]
        else:
            topo.nics = [NicSpec(ComponentId.parse(n["ncomponent"]),
                                 n.get("name", f"eth{i}"), n["ip"],
                                 float(n.get("capacity_bps", 1e9)))
                         for i, n in enumerate(nics)]
        exts = data.get("externals")
        if exts is None:
            topo.externals = [ExternalSpec(EID(i), f"192.168.1.{100 + i}")
                              for i in range(topo.num_external)]
        else:
            topo.externals = [ExternalSpec(ComponentId.parse(e["id"]), e["ip"])
                              for e in exts]
        topo.validate()
        return topo

    @classmethod
    def from_file(cls, path: str) -> "RackTopology":
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        return cls.from_dict(data)

    @classmethod
    def from_env_or_default(cls, path: Optional[str] = None) -> "RackTopology":
        path = path or os.environ.get(ENV_TOPOLOGY)
        if path:
            return cls.from_file(path)
        return cls.default()

    def nic_for_ip(self, ip: str) -> Optional[NicSpec]:
        for nic in self.nics:
            if nic.ip == ip:
                return nic
        return None


def _link_from_dict(data: dict) -> LinkParams:
    return LinkParams(float(data.get("latency_us", 4.0)),
                      float(data.get("bandwidth_bps", 40e9)))
