"""Executable emulation of socket networking in a disaggregated rack.

Processor, memory and network boards run as tasks on a deterministic
virtual-time kernel and talk over a latency-configurable interconnect.  A
BSD-like socket API is split between a processor-side stub and a network-
board-side skeleton, with memory-mediated (DMA-style) and cache-direct
(DDIO-style) data paths plus rack-local fast paths, and a benchmark harness
measuring them.
"""

from .errors import SplitnetError
from .interconnect import ComponentId, ComponentKind, Frame, LinkParams, Op
from .topology import RackTopology

__all__ = [
    "ComponentId",
    "ComponentKind",
    "Frame",
    "LinkParams",
    "Op",
    "RackTopology",
    "SplitnetError",
]

__version__ = "0.1.0"
