"""Memory board: allocator overlap safety, byte identity, frame access."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitnet.errors import (OutOfBoundsError, OutOfMemoryError,
                             UseAfterFreeError)
from splitnet.interconnect import Fabric, MID, NID, PID
from splitnet.mcomponent import MemBoard, MemClient
from splitnet.sim import VirtualKernel
from splitnet.topology import RackTopology


def test_alloc_on_empty_board():
    board = MemBoard(MID(0), 1 << 20)
    region = board.mem_alloc(4096)
    assert region.length == 4096
    assert board.mem_read(region.address, 0, 16) == bytes(16)  # zeroed


def test_alloc_beyond_capacity_fails():
    board = MemBoard(MID(0), 1 << 12)
    with pytest.raises(OutOfMemoryError):
        board.mem_alloc((1 << 12) + 1)


def test_write_then_read_identity():
    board = MemBoard(MID(0), 1 << 16)
    region = board.mem_alloc(64)
    board.mem_write(region.address, 0, b"hello")
    assert board.mem_read(region.address, 0, 5) == b"hello"


def test_read_past_end_is_out_of_bounds():
    board = MemBoard(MID(0), 1 << 16)
    region = board.mem_alloc(8)
    with pytest.raises(OutOfBoundsError):
        board.mem_read(region.address, 4, 5)
    with pytest.raises(OutOfBoundsError):
        board.mem_write(region.address, 7, b"??")


def test_use_after_free_detected():
    board = MemBoard(MID(0), 1 << 16)
    region = board.mem_alloc(8)
    board.mem_free(region.address)
    with pytest.raises(UseAfterFreeError):
        board.mem_read(region.address, 0, 1)
    with pytest.raises(UseAfterFreeError):
        board.mem_free(region.address)


def test_random_alloc_free_never_overlaps():
    # brute-force interval check after every step
    rng = random.Random(3)
    board = MemBoard(MID(0), 1 << 16)
    live = []
    for _ in range(100):
        if live and rng.random() < 0.4:
            region = live.pop(rng.randrange(len(live)))
            board.mem_free(region.address)
        else:
            try:
                live.append(board.mem_alloc(rng.randint(1, 4096)))
            except OutOfMemoryError:
                pass
        spans = sorted((r.address, r.address + r.length) for r in live)
        for (a1, e1), (a2, _e2) in zip(spans, spans[1:]):
            assert e1 <= a2, "allocated regions overlap"
    assert board.allocated_bytes == sum(r.length for r in live)


def test_free_coalesces_back_to_full_capacity():
    board = MemBoard(MID(0), 1 << 12)
    regions = [board.mem_alloc(1 << 10) for _ in range(4)]
    for region in regions:
        board.mem_free(region.address)
    # only possible if the free list coalesced into one span
    assert board.mem_alloc(1 << 12).length == 1 << 12


def test_random_io_matches_flat_reference_array():
    rng = random.Random(7)
    board = MemBoard(MID(0), 1 << 16)
    region = board.mem_alloc(4096)
    reference = bytearray(4096)  # oracle: plain byte array
    for _ in range(300):
        offset = rng.randrange(4096)
        length = rng.randint(1, 4096 - offset)
        if rng.random() < 0.5:
            blob = rng.randbytes(length)
            board.mem_write(region.address, offset, blob)
            reference[offset:offset + length] = blob
        else:
            assert (board.mem_read(region.address, offset, length)
                    == bytes(reference[offset:offset + length]))


def test_isolation_between_regions():
    board = MemBoard(MID(0), 1 << 16)
    a = board.mem_alloc(128)
    b = board.mem_alloc(128)
    board.mem_write(a.address, 0, b"\xff" * 128)
    assert board.mem_read(b.address, 0, 128) == bytes(128)


@given(st.lists(st.tuples(st.integers(0, 255), st.binary(min_size=1,
                                                         max_size=64)),
                max_size=30))
@settings(max_examples=60, deadline=None)
def test_write_read_identity_property(ops):
    board = MemBoard(MID(0), 1 << 12)
    region = board.mem_alloc(512)
    reference = bytearray(512)
    for offset, blob in ops:
        offset = offset % (512 - len(blob) + 1)
        board.mem_write(region.address, offset, blob)
        reference[offset:offset + len(blob)] = blob
        assert board.mem_read(region.address, 0, 512) == bytes(reference)


def make_rackless_fabric():
    kernel = VirtualKernel()
    fabric = Fabric(kernel, RackTopology.default())
    board = MemBoard(MID(0), 1 << 20, fabric)
    fabric.register_sink(MID(0), board.handle_frame)
    fabric.register_sink(PID(0), lambda f: None)
    fabric.register_sink(NID(0), lambda f: None)
    return kernel, fabric, board


def test_remote_access_round_trip_and_errors():
    kernel, fabric, _board = make_rackless_fabric()
    client = MemClient(fabric, PID(0), MID(0))

    def main():
        region = client.alloc(256)
        client.write(region, 3, b"abc")
        assert client.read(region, 0, 8) == b"\0\0\0abc\0\0"
        with pytest.raises(OutOfBoundsError):
            client.read(region, 250, 10)
        client.free(region)
        with pytest.raises(UseAfterFreeError):
            client.read(region, 0, 1)
        with pytest.raises(OutOfMemoryError):
            client.alloc(1 << 30)
        return "ok"

    assert kernel.run(main) == "ok"


def test_every_remote_op_is_exactly_one_exchange():
    kernel, fabric, _board = make_rackless_fabric()
    client = MemClient(fabric, PID(0), MID(0))
    inst = fabric.instrumentation

    def main():
        region = client.alloc(64)
        inst.reset()
        client.write(region, 0, b"z" * 64)
        client.read(region, 0, 64)
        client.free(region)
        assert inst.hop_count(PID(0), MID(0)) == 3
        assert inst.hop_count(MID(0), PID(0)) == 3
        return "ok"

    assert kernel.run(main) == "ok"


def test_two_clients_from_different_boards():
    kernel, fabric, _board = make_rackless_fabric()
    p_client = MemClient(fabric, PID(0), MID(0))
    n_client = MemClient(fabric, NID(0), MID(0))

    def main():
        region = p_client.alloc(32)
        p_client.write(region, 0, b"processor")
        assert n_client.read(region, 0, 9) == b"processor"
        assert fabric.instrumentation.hop_count(NID(0), MID(0)) == 1
        return "ok"

    assert kernel.run(main) == "ok"
