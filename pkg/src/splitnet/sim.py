"""Task kernels the emulated rack runs on.

Two kernels implement one factory API so board and application code can be
written in plain blocking style once:

* :class:`VirtualKernel` -- a discrete-event scheduler.  Tasks are greenlets,
  time is a virtual microsecond clock that jumps from event to event, and the
  run is fully deterministic: at most one task executes at any instant and
  ties are broken by submission order.  Nothing ever sleeps on the wall clock.
* :class:`RealKernel` -- plain daemon threads and ``time.sleep``, used when
  frames travel over real host sockets and results are wall-clock.

Blocking primitives (one-shot waiters, message queues, bounded byte streams)
are created through the kernel so the same caller code works on either.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from collections import deque
from typing import Any, Callable, Optional

import greenlet

US_PER_S = 1_000_000.0

# wake payload kinds
_OK = 0
_TIMEOUT = 1
_CANCEL = 2
_CLOSED = 3


class Cancelled(BaseException):
    """Raised inside a task that was cancelled while blocked.

    Derives from BaseException so a broad ``except Exception`` in task code
    cannot accidentally swallow a shutdown.
    """


class DeadlockError(RuntimeError):
    """The virtual run cannot make progress but the main task is not done."""


class Closed(Exception):
    """The queue or stream a task was blocked on has been torn down."""


class WaitTimeout(Exception):
    """A waiter's timeout elapsed before its value arrived."""


class _Park:
    """One blocking occurrence of one task; woken exactly once."""

    __slots__ = ("task", "woken")

    def __init__(self, task: "Task"):
        self.task = task
        self.woken = False


class Task:
    """Handle for a spawned unit of work (virtual kernel flavor)."""

    def __init__(self, kernel: "VirtualKernel", fn: Callable, args: tuple,
                 name: str, daemon: bool):
        self.kernel = kernel
        self.name = name
        self.daemon = daemon
        self.finished = False
        self.result: Any = None
        self.exc: Optional[BaseException] = None
        self._fn = fn
        self._args = args
        self._glet: Optional[greenlet.greenlet] = None
        self._cancelled = False
        self._current_park: Optional[_Park] = None
        self._joiners: list[_Park] = []

    def _main(self, _payload):
        if not self._cancelled:
            try:
                self.result = self._fn(*self._args)
            except Cancelled:
                pass
            except BaseException as exc:  # noqa: BLE001 - reported at run() end
                self.exc = exc
        self.finished = True
        self.kernel._on_task_finished(self)

    def cancel(self) -> None:
        if self.finished:
            return
        self._cancelled = True
        if self._current_park is not None:
            self.kernel._wake(self._current_park, (_CANCEL, None))

    def join(self) -> Any:
        """Block the calling task until this one finishes; returns its result."""
        if not self.finished:
            park = self.kernel._make_park()
            self._joiners.append(park)
            self.kernel._park_on(park)
        if self.exc is not None:
            raise self.exc
        return self.result


class VirtualKernel:
    """Deterministic discrete-event scheduler with a microsecond clock."""

    def __init__(self):
        self._now = 0.0
        self._seq = itertools.count()
        # heap items: (time, seq, kind, a, b) where kind is "call" or "wake"
        self._heap: list = []
        self._current: Optional[Task] = None
        self._sched: Optional[greenlet.greenlet] = None
        self._tasks: list[Task] = []
        self._running = False

    # -- clock and scheduling -------------------------------------------------

    def now_us(self) -> float:
        return self._now

    def call_at(self, t_us: float, fn: Callable, *args) -> None:
        """Run ``fn`` in scheduler context at virtual time ``t_us``; it must not block."""
        heapq.heappush(self._heap, (max(t_us, self._now), next(self._seq),
                                    "call", fn, args))

    def call_later(self, delay_us: float, fn: Callable, *args) -> None:
        self.call_at(self._now + max(delay_us, 0.0), fn, *args)

    def spawn(self, fn: Callable, *args, name: str = "task",
              daemon: bool = False) -> Task:
        task = Task(self, fn, args, name, daemon)
        self._tasks.append(task)
        heapq.heappush(self._heap, (self._now, next(self._seq),
                                    "wake", _Park(task), (_OK, None)))
        return task

    def sleep(self, delay_us: float) -> None:
        park = self._make_park()
        heapq.heappush(self._heap, (self._now + max(delay_us, 0.0),
                                    next(self._seq), "wake", park, (_OK, None)))
        self._park_on(park)

    # -- park / wake protocol ---------------------------------------------------

    def _make_park(self) -> _Park:
        assert self._current is not None, "blocking call outside a task"
        return _Park(self._current)

    def _park_on(self, park: _Park):
        """Suspend the current task until the park is woken; returns the payload."""
        task = park.task
        task._current_park = park
        payload = self._sched.switch()
        task._current_park = None
        if payload[0] == _CANCEL:
            raise Cancelled()
        return payload

    def _wake(self, park: _Park, payload) -> bool:
        """Claim the park now and deliver at the current virtual time."""
        if park.woken:
            return False
        park.woken = True
        heapq.heappush(self._heap, (self._now, next(self._seq),
                                    "wake!", park, payload))
        return True

    def _wake_later(self, delay_us: float, park: _Park, payload) -> None:
        """Deliver at a later time unless something else claims the park first."""
        heapq.heappush(self._heap, (self._now + max(delay_us, 0.0),
                                    next(self._seq), "wake", park, payload))

    def _on_task_finished(self, task: Task) -> None:
        for park in task._joiners:
            self._wake(park, (_OK, None))
        task._joiners.clear()

    # -- driving the run -----------------------------------------------------

    def run(self, main: Callable, *args) -> Any:
        """Spawn ``main`` and process events until it finishes.

        Leftover tasks (dispatcher loops and the like) are cancelled on the
        way out.  Raises :class:`DeadlockError` if the event heap drains while
        the main task is still blocked.
        """
        if self._running:
            raise RuntimeError("kernel.run() is not reentrant")
        self._running = True
        self._sched = greenlet.getcurrent()
        main_task = self.spawn(main, *args, name="main")
        try:
            while not main_task.finished:
                if not self._heap:
                    parked = [t.name for t in self._tasks
                              if not t.finished and t._current_park is not None]
                    raise DeadlockError(
                        f"no runnable work; blocked tasks: {parked}")
                self._step()
            self._drain()
        finally:
            self._running = False
        if main_task.exc is not None:
            raise main_task.exc
        for task in self._tasks:
            if task.exc is not None and not isinstance(task.exc, Cancelled):
                raise task.exc
        return main_task.result

    def run_until_idle(self) -> None:
        """Process events until the heap drains (callback-only workloads)."""
        if self._running:
            raise RuntimeError("kernel.run() is not reentrant")
        self._running = True
        self._sched = greenlet.getcurrent()
        try:
            while self._heap:
                self._step()
        finally:
            self._running = False

    def _step(self) -> None:
        t, _seq, kind, a, b = heapq.heappop(self._heap)
        if t > self._now:
            self._now = t
        if kind == "call":
            a(*b)
            return
        park: _Park = a
        if kind == "wake":  # unclaimed timed wake; may have lost the race
            if park.woken:
                return
            park.woken = True
        task = park.task
        if task.finished:
            return
        if task._glet is None:
            task._glet = greenlet.greenlet(task._main, parent=self._sched)
        prev = self._current
        self._current = task
        task._glet.switch(b)
        self._current = prev

    def _drain(self) -> None:
        """Cancel every unfinished task and let them unwind."""
        for task in self._tasks:
            task.cancel()
        guard = 0
        while self._heap and guard < 10_000_000:
            self._step()
            guard += 1

    # -- primitive factories ------------------------------------------------

    def waiter(self) -> "VWaiter":
        return VWaiter(self)

    def msg_queue(self) -> "VMsgQueue":
        return VMsgQueue(self)

    def byte_stream(self, capacity: int) -> "VByteStream":
        return VByteStream(self, capacity)


class VWaiter:
    """One-shot slot a single task blocks on (RPC reply, handshake ack)."""

    __slots__ = ("_kernel", "_done", "_value", "_exc", "_park")

    def __init__(self, kernel: VirtualKernel):
        self._kernel = kernel
        self._done = False
        self._value: Any = None
        self._exc: Optional[BaseException] = None
        self._park: Optional[_Park] = None

    def set(self, value: Any = None) -> None:
        if self._done:
            return
        self._done = True
        self._value = value
        if self._park is not None:
            self._kernel._wake(self._park, (_OK, None))

    def fail(self, exc: BaseException) -> None:
        if self._done:
            return
        self._done = True
        self._exc = exc
        if self._park is not None:
            self._kernel._wake(self._park, (_OK, None))

    def wait(self, timeout_us: Optional[float] = None) -> Any:
        if not self._done:
            park = self._kernel._make_park()
            self._park = park
            if timeout_us is not None:
                self._kernel._wake_later(timeout_us, park, (_TIMEOUT, None))
            kind, _ = self._kernel._park_on(park)
            self._park = None
            if kind == _TIMEOUT:
                raise WaitTimeout()
        if self._exc is not None:
            raise self._exc
        return self._value


class VMsgQueue:
    """Unbounded FIFO of objects; get() blocks, put() never does."""

    def __init__(self, kernel: VirtualKernel):
        self._kernel = kernel
        self._items: deque = deque()
        self._getters: deque[_Park] = deque()
        self._closed = False

    def __len__(self) -> int:
        return len(self._items)

    def put(self, item: Any) -> None:
        if self._closed:
            raise Closed()
        while self._getters:
            park = self._getters.popleft()
            if self._kernel._wake(park, (_OK, item)):
                return
        self._items.append(item)

    def get(self) -> Any:
        if self._items:
            return self._items.popleft()
        if self._closed:
            raise Closed()
        park = self._kernel._make_park()
        self._getters.append(park)
        kind, value = self._kernel._park_on(park)
        if kind == _CLOSED:
            raise Closed()
        return value

    def close(self) -> None:
        self._closed = True
        while self._getters:
            self._kernel._wake(self._getters.popleft(), (_CLOSED, None))

    def drain_close(self) -> list:
        """Close and hand back whatever was still queued."""
        leftovers = list(self._items)
        self._items.clear()
        self.close()
        return leftovers


class VByteStream:
    """Bounded byte FIFO with blocking put (backpressure) and EOF semantics.

    ``get`` returns up to ``max_len`` bytes, b"" once the stream hit EOF and
    drained.  ``put`` blocks while the buffered total would exceed capacity;
    chunks larger than the whole capacity are admitted alone so they cannot
    wedge the stream.
    """

    def __init__(self, kernel: VirtualKernel, capacity: int):
        self._kernel = kernel
        self.capacity = capacity
        self._chunks: deque[bytes] = deque()
        self._size = 0
        self._eof = False
        self._aborted = False
        self._getters: deque[_Park] = deque()
        self._putters: deque[_Park] = deque()

    @property
    def buffered(self) -> int:
        return self._size

    def put(self, data: bytes) -> None:
        if not data:
            return
        while (self._size > 0 and self._size + len(data) > self.capacity
               and not self._eof and not self._aborted):
            park = self._kernel._make_park()
            self._putters.append(park)
            self._kernel._park_on(park)
        if self._eof or self._aborted:
            raise Closed()
        self._chunks.append(bytes(data))
        self._size += len(data)
        self._wake_one(self._getters)

    def get(self, max_len: int) -> bytes:
        while not self._chunks:
            if self._eof or self._aborted:
                return b""
            park = self._kernel._make_park()
            self._getters.append(park)
            self._kernel._park_on(park)
        out = bytearray()
        while self._chunks and len(out) < max_len:
            chunk = self._chunks[0]
            take = min(len(chunk), max_len - len(out))
            out += chunk[:take]
            if take == len(chunk):
                self._chunks.popleft()
            else:
                self._chunks[0] = chunk[take:]
        self._size -= len(out)
        self._wake_one(self._putters)
        return bytes(out)

    def push_eof(self) -> None:
        """Graceful end: buffered bytes stay readable, then get() returns b""."""
        self._eof = True
        self._wake_all(self._getters)
        self._wake_all(self._putters)

    def abort(self) -> None:
        """Hard teardown: pending and future data are dropped."""
        self._aborted = True
        self._chunks.clear()
        self._size = 0
        self._wake_all(self._getters)
        self._wake_all(self._putters)

    def _wake_one(self, parks: deque) -> None:
        while parks:
            if self._kernel._wake(parks.popleft(), (_OK, None)):
                return

    def _wake_all(self, parks: deque) -> None:
        while parks:
            self._kernel._wake(parks.popleft(), (_OK, None))


# ---------------------------------------------------------------------------
# Wall-clock twin
# ---------------------------------------------------------------------------


class RealTask:
    def __init__(self, thread: threading.Thread):
        self._thread = thread
        self.result: Any = None
        self.exc: Optional[BaseException] = None

    @property
    def finished(self) -> bool:
        return not self._thread.is_alive()

    def cancel(self) -> None:
        # cooperative only: real-mode teardown closes the sockets and queues
        # a task blocks on, which unblocks it
        pass

    def join(self) -> Any:
        self._thread.join()
        if self.exc is not None:
            raise self.exc
        return self.result


class RealKernel:
    """Thread-backed kernel; time is the wall clock in microseconds."""

    def __init__(self):
        self._t0 = time.perf_counter()

    def now_us(self) -> float:
        return (time.perf_counter() - self._t0) * US_PER_S

    def spawn(self, fn: Callable, *args, name: str = "task",
              daemon: bool = True) -> RealTask:
        holder: dict = {}

        def runner():
            try:
                holder["task"].result = fn(*args)
            except Cancelled:
                pass
            except BaseException as exc:  # noqa: BLE001
                holder["task"].exc = exc

        thread = threading.Thread(target=runner, name=name, daemon=True)
        task = RealTask(thread)
        holder["task"] = task
        thread.start()
        return task

    def sleep(self, delay_us: float) -> None:
        if delay_us > 0:
            time.sleep(delay_us / US_PER_S)

    def call_later(self, delay_us: float, fn: Callable, *args) -> None:
        timer = threading.Timer(max(delay_us, 0.0) / US_PER_S, fn, args)
        timer.daemon = True
        timer.start()

    def call_at(self, t_us: float, fn: Callable, *args) -> None:
        self.call_later(t_us - self.now_us(), fn, *args)

    def run(self, main: Callable, *args) -> Any:
        return main(*args)

    def waiter(self) -> "RWaiter":
        return RWaiter()

    def msg_queue(self) -> "RMsgQueue":
        return RMsgQueue()

    def byte_stream(self, capacity: int) -> "RByteStream":
        return RByteStream(capacity)


class RWaiter:
    def __init__(self):
        self._event = threading.Event()
        self._value: Any = None
        self._exc: Optional[BaseException] = None

    def set(self, value: Any = None) -> None:
        self._value = value
        self._event.set()

    def fail(self, exc: BaseException) -> None:
        self._exc = exc
        self._event.set()

    def wait(self, timeout_us: Optional[float] = None) -> Any:
        timeout = None if timeout_us is None else timeout_us / US_PER_S
        if not self._event.wait(timeout):
            raise WaitTimeout()
        if self._exc is not None:
            raise self._exc
        return self._value


class RMsgQueue:
    def __init__(self):
        self._cond = threading.Condition()
        self._items: deque = deque()
        self._closed = False

    def __len__(self) -> int:
        with self._cond:
            return len(self._items)

    def put(self, item: Any) -> None:
        with self._cond:
            if self._closed:
                raise Closed()
            self._items.append(item)
            self._cond.notify()

    def get(self) -> Any:
        with self._cond:
            while not self._items and not self._closed:
                self._cond.wait()
            if self._items:
                return self._items.popleft()
            raise Closed()

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def drain_close(self) -> list:
        with self._cond:
            leftovers = list(self._items)
            self._items.clear()
            self._closed = True
            self._cond.notify_all()
        return leftovers


class RByteStream:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self._cond = threading.Condition()
        self._chunks: deque[bytes] = deque()
        self._size = 0
        self._eof = False
        self._aborted = False

    @property
    def buffered(self) -> int:
        with self._cond:
            return self._size

    def put(self, data: bytes) -> None:
        if not data:
            return
        with self._cond:
            while (self._size > 0 and self._size + len(data) > self.capacity
                   and not self._eof and not self._aborted):
                self._cond.wait()
            if self._eof or self._aborted:
                raise Closed()
            self._chunks.append(bytes(data))
            self._size += len(data)
            self._cond.notify_all()

    def get(self, max_len: int) -> bytes:
        with self._cond:
            while not self._chunks:
                if self._eof or self._aborted:
                    return b""
                self._cond.wait()
            out = bytearray()
            while self._chunks and len(out) < max_len:
                chunk = self._chunks[0]
                take = min(len(chunk), max_len - len(out))
                out += chunk[:take]
                if take == len(chunk):
                    self._chunks.popleft()
                else:
                    self._chunks[0] = chunk[take:]
            self._size -= len(out)
            self._cond.notify_all()
            return bytes(out)

    def push_eof(self) -> None:
        with self._cond:
            self._eof = True
            self._cond.notify_all()

    def abort(self) -> None:
        with self._cond:
            self._aborted = True
            self._chunks.clear()
            self._size = 0
            self._cond.notify_all()
