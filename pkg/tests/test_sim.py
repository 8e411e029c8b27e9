"""Kernel semantics: virtual clock, ordering, primitives, cancellation."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitnet.sim import (Cancelled, Closed, DeadlockError, VirtualKernel,
                          WaitTimeout)


def test_sleep_advances_virtual_clock_without_wall_time():
    k = VirtualKernel()

    def main():
        assert k.now_us() == 0.0
        k.sleep(1_000_000.0)  # a virtual second
        return k.now_us()

    assert k.run(main) == 1_000_000.0


def test_sleep_wakeups_order_by_deadline_then_submission():
    k = VirtualKernel()
    trace = []

    def sleeper(tag, dt):
        k.sleep(dt)
        trace.append((tag, k.now_us()))

    def main():
        k.spawn(sleeper, "late", 30.0)
        k.spawn(sleeper, "early", 10.0)
        k.spawn(sleeper, "tie-a", 20.0)
        k.spawn(sleeper, "tie-b", 20.0)
        k.sleep(100.0)

    k.run(main)
    assert trace == [("early", 10.0), ("tie-a", 20.0), ("tie-b", 20.0),
                     ("late", 30.0)]


def test_waiter_set_wakes_and_delivers_value():
    k = VirtualKernel()
    w = k.waiter()

    def setter():
        k.sleep(5.0)
        w.set("payload")

    def main():
        k.spawn(setter)
        value = w.wait()
        return value, k.now_us()

    assert k.run(main) == ("payload", 5.0)


def test_waiter_timeout_fires_at_exact_virtual_time():
    k = VirtualKernel()

    def main():
        w = k.waiter()
        with pytest.raises(WaitTimeout):
            w.wait(timeout_us=42.0)
        return k.now_us()

    assert k.run(main) == 42.0


def test_waiter_set_beats_slower_timeout():
    k = VirtualKernel()
    w = k.waiter()

    def main():
        k.spawn(lambda: (k.sleep(1.0), w.set(7)))
        assert w.wait(timeout_us=1000.0) == 7
        k.sleep(2000.0)  # let the stale timeout entry pop harmlessly
        return "ok"

    assert k.run(main) == "ok"


def test_msg_queue_fifo_and_close():
    k = VirtualKernel()

    def main():
        q = k.msg_queue()
        q.put(1)
        q.put(2)
        assert q.get() == 1
        assert q.get() == 2
        got = []

        def consumer():
            try:
                while True:
                    got.append(q.get())
            except Closed:
                got.append("closed")

        t = k.spawn(consumer)
        q.put("x")
        k.sleep(1.0)
        q.close()
        t.join()
        return got

    assert k.run(main) == ["x", "closed"]


def test_byte_stream_backpressure_blocks_then_drains():
    k = VirtualKernel()
    events = []

    def main():
        bs = k.byte_stream(capacity=4)

        def producer():
            bs.put(b"aaaa")
            events.append(("put1", k.now_us()))
            bs.put(b"bb")          # must wait for the consumer
            events.append(("put2", k.now_us()))
            bs.push_eof()

        k.spawn(producer)
        k.sleep(10.0)
        assert bs.get(2) == b"aa"
        k.sleep(10.0)
        rest = b""
        while True:
            chunk = bs.get(100)
            if not chunk:
                break
            rest += chunk
        return rest

    rest = k.run(main)
    assert rest == b"aabb"
    assert events[0] == ("put1", 0.0)
    assert events[1][1] >= 10.0   # second put blocked until space opened


def test_byte_stream_eof_drains_buffered_bytes_first():
    k = VirtualKernel()

    def main():
        bs = k.byte_stream(capacity=100)
        bs.put(b"tail")
        bs.push_eof()
        assert bs.get(2) == b"ta"
        assert bs.get(10) == b"il"
        assert bs.get(10) == b""
        return "ok"

    assert k.run(main) == "ok"


def test_byte_stream_oversized_chunk_admitted_alone():
    k = VirtualKernel()

    def main():
        bs = k.byte_stream(capacity=4)
        bs.put(b"0123456789")  # bigger than capacity, buffer empty: accepted
        assert bs.get(100) == b"0123456789"
        return "ok"

    assert k.run(main) == "ok"


def test_cancel_unwinds_blocked_task():
    k = VirtualKernel()
    unwound = []

    def blocked():
        q = k.msg_queue()
        try:
            q.get()
        except Cancelled:
            unwound.append(True)
            raise

    def main():
        t = k.spawn(blocked)
        k.sleep(1.0)
        t.cancel()
        k.sleep(1.0)
        assert t.finished

    k.run(main)
    assert unwound == [True]


def test_deadlock_detected_when_main_blocks_forever():
    k = VirtualKernel()

    def main():
        k.msg_queue().get()

    with pytest.raises(DeadlockError):
        k.run(main)


def test_task_exception_propagates_from_run():
    k = VirtualKernel()

    def boom():
        raise ValueError("kaboom")

    def main():
        k.spawn(boom)
        k.sleep(1.0)

    with pytest.raises(ValueError, match="kaboom"):
        k.run(main)


def test_join_returns_result():
    k = VirtualKernel()

    def worker():
        k.sleep(3.0)
        return 99

    def main():
        t = k.spawn(worker)
        return t.join(), k.now_us()

    assert k.run(main) == (99, 3.0)


@given(st.lists(st.binary(min_size=1, max_size=50), max_size=20),
       st.lists(st.integers(1, 37), min_size=1, max_size=50))
@settings(max_examples=60, deadline=None)
def test_byte_stream_reassembly_property(chunks, read_sizes):
    # whatever the chunking and read sizes, bytes out == bytes in, in order
    k = VirtualKernel()

    def main():
        bs = k.byte_stream(capacity=1 << 20)
        for chunk in chunks:
            bs.put(chunk)
        bs.push_eof()
        out = bytearray()
        i = 0
        while True:
            data = bs.get(read_sizes[i % len(read_sizes)])
            i += 1
            if not data:
                break
            out += data
        return bytes(out)

    assert k.run(main) == b"".join(chunks)


def test_identical_runs_produce_identical_traces():
    def build_and_run():
        k = VirtualKernel()
        trace = []

        def noisy(tag):
            for i in range(3):
                k.sleep(float(i))
                trace.append((tag, i, k.now_us()))

        def main():
            for tag in ("a", "b", "c"):
                k.spawn(noisy, tag)
            k.sleep(50.0)

        k.run(main)
        return trace

    assert build_and_run() == build_and_run()
