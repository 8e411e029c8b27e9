"""Exception hierarchy shared by every board and by the benchmark harness.

Errors that cross the interconnect are carried in reply frames as a small
numeric code plus a message, then re-raised on the calling side as the same
class (see :mod:`splitnet.interconnect`).
"""

from __future__ import annotations


class SplitnetError(Exception):
    """Base class for every error raised by this package."""

    #: stable numeric code used when the error travels inside a reply frame
    code = 1


# --- interconnect ---------------------------------------------------------

class UnknownComponentError(SplitnetError):
    """A component id does not exist in the topology (or a self-link was asked)."""
    code = 10


class ChannelClosedError(SplitnetError):
    code = 11


class RpcTimeoutError(SplitnetError):
    code = 12


class InstrumentationDisabledError(SplitnetError):
    code = 13


# --- global network manager -----------------------------------------------

class DuplicateIpError(SplitnetError):
    code = 20


class NoSuchIpError(SplitnetError):
    code = 21


# --- memory board ----------------------------------------------------------

class OutOfMemoryError(SplitnetError):
    code = 30


class OutOfBoundsError(SplitnetError):
    code = 31


class UseAfterFreeError(SplitnetError):
    code = 32


class CapacityExceededError(SplitnetError):
    """A cache load/flush was asked for a region bigger than the whole cache."""
    code = 33


# --- sockets ----------------------------------------------------------------

class InvalidStateError(SplitnetError):
    """A socket call was made from a state its contract does not allow."""
    code = 40


class AddrInUseError(SplitnetError):
    code = 41


class NotBoundError(SplitnetError):
    code = 42


class NotConnectedError(SplitnetError):
    code = 43


class ConnRefusedError(SplitnetError):
    code = 44


class NoRouteError(SplitnetError):
    code = 45


class PeerClosedError(SplitnetError):
    code = 46


class InterruptedError_(SplitnetError):
    """A blocking call (accept/recv) was cut short by close()."""
    code = 47


class ResourceExhaustedError(SplitnetError):
    code = 48


# --- benchmark harness -------------------------------------------------------

class ScenarioFailedError(SplitnetError):
    """A benchmark run hit a fidelity violation; its numbers are discarded."""
    code = 60


_BY_CODE = {cls.code: cls for cls in list(globals().values())
            if isinstance(cls, type) and issubclass(cls, SplitnetError)}


def error_from_code(code: int, message: str) -> SplitnetError:
    """Rebuild the exception a remote board packed into a reply frame."""
    return _BY_CODE.get(code, SplitnetError)(message)
