"""Oversized last-level cache: flush/load semantics and write-back eviction."""

import pytest

from splitnet.errors import CapacityExceededError, SplitnetError
from splitnet.interconnect import ComponentKind, MID, PID
from splitnet.rack import Rack
from splitnet.topology import RackTopology


def small_cache_rack(capacity=256):
    topo = RackTopology.default()
    topo.excache_capacity = capacity
    return Rack(topo)


def test_write_flush_lands_on_memory_board():
    rack = small_cache_rack()
    pc = rack.pcomponent(0)
    board = rack.mem_board(0)

    def main():
        region = pc.alloc_region(16)
        pc.excache.write(region, b"xyz")
        pc.excache.cache_flush(region)
        return board.mem_read(region.address, 0, 3)

    assert rack.run(main) == b"xyz"


def test_flush_clean_entry_sends_no_frames():
    rack = small_cache_rack()
    pc = rack.pcomponent(0)
    inst = rack.instrumentation

    def main():
        region = pc.alloc_region(16)
        pc.excache.write(region, b"abc")
        pc.excache.cache_flush(region)
        inst.reset()
        pc.excache.cache_flush(region)   # already clean: write-back skips
        return inst.pair_count(ComponentKind.P, ComponentKind.M)

    assert rack.run(main) == 0


def test_flush_without_entry_is_an_error():
    rack = small_cache_rack()
    pc = rack.pcomponent(0)

    def main():
        region = pc.alloc_region(16)
        with pytest.raises(SplitnetError):
            pc.excache.cache_flush(region)
        return "ok"

    assert rack.run(main) == "ok"


def test_load_bigger_than_capacity_is_rejected():
    rack = small_cache_rack(capacity=64)
    pc = rack.pcomponent(0)

    def main():
        region = pc.alloc_region(128)
        with pytest.raises(CapacityExceededError):
            pc.excache.cache_load(region)
        return "ok"

    assert rack.run(main) == "ok"


def test_load_pulls_bytes_written_by_another_board():
    rack = small_cache_rack()
    pc = rack.pcomponent(0)
    board = rack.mem_board(0)

    def main():
        region = pc.alloc_region(32)
        board.mem_write(region.address, 0, b"from-afar")
        return pc.excache.cache_load(region, length=9)

    assert rack.run(main) == b"from-afar"


def test_cached_load_sends_no_frames_but_forced_load_does():
    rack = small_cache_rack()
    pc = rack.pcomponent(0)
    inst = rack.instrumentation

    def main():
        region = pc.alloc_region(16)
        pc.excache.cache_load(region, length=8)
        inst.reset()
        pc.excache.cache_load(region, length=8)            # cache hit
        hits = inst.pair_count(ComponentKind.P, ComponentKind.M)
        pc.excache.cache_load(region, length=8, force=True)  # must re-read
        forced = inst.pair_count(ComponentKind.P, ComponentKind.M)
        return hits, forced

    assert rack.run(main) == (0, 2)


def test_every_dirty_eviction_is_preceded_by_a_flush_frame():
    rack = small_cache_rack(capacity=256)
    pc = rack.pcomponent(0)
    inst = rack.instrumentation

    def main():
        regions = [pc.alloc_region(64) for _ in range(8)]
        inst.reset()
        for i, region in enumerate(regions):
            pc.excache.write(region, bytes([i]) * 64)   # dirty entries
        # capacity 256 holds 4 entries of 64: four evictions so far
        evicted = pc.excache.evictions
        flush_frames = inst.hop_count(PID(0), MID(0))
        assert pc.excache.used <= 256
        return evicted, flush_frames

    evicted, flush_frames = rack.run(main)
    assert evicted == 4
    assert flush_frames == evicted   # every eviction wrote back first


def test_clean_evictions_write_nothing():
    rack = small_cache_rack(capacity=128)
    pc = rack.pcomponent(0)
    inst = rack.instrumentation
    board = rack.mem_board(0)

    def main():
        regions = [pc.alloc_region(64) for _ in range(4)]
        extra = pc.alloc_region(64)
        for region in regions:
            board.mem_write(region.address, 0, b"s" * 64)
            pc.excache.cache_load(region)   # clean entries
        inst.reset()
        pc.excache.write(extra, b"d" * 64)  # evicts one clean entry
        # only the new entry's own future flush would write; eviction did not
        return inst.hop_count(PID(0), MID(0))

    assert rack.run(main) == 0


def test_eviction_preserves_bytes_for_later_load():
    rack = small_cache_rack(capacity=128)
    pc = rack.pcomponent(0)

    def main():
        first = pc.alloc_region(128)
        pc.excache.write(first, b"A" * 128)
        second = pc.alloc_region(128)
        pc.excache.write(second, b"B" * 128)   # evicts the dirty first entry
        assert not pc.excache.resident(first)
        return pc.excache.cache_load(first, length=128)

    assert rack.run(main) == b"A" * 128


def test_lru_order_respects_recent_touch():
    rack = small_cache_rack(capacity=128)
    pc = rack.pcomponent(0)

    def main():
        a = pc.alloc_region(64)
        b = pc.alloc_region(64)
        pc.excache.write(a, b"a" * 64)
        pc.excache.write(b, b"b" * 64)
        pc.excache.cache_flush(a)            # touch A: B becomes the victim
        c = pc.alloc_region(64)
        pc.excache.write(c, b"c" * 64)
        return pc.excache.resident(a), pc.excache.resident(b)

    assert rack.run(main) == (True, False)


def test_drop_discards_without_writing_back():
    rack = small_cache_rack()
    pc = rack.pcomponent(0)
    board = rack.mem_board(0)

    def main():
        region = pc.alloc_region(16)
        pc.excache.write(region, b"gone")
        pc.excache.drop(region)
        assert not pc.excache.resident(region)
        return board.mem_read(region.address, 0, 4)

    assert rack.run(main) == bytes(4)   # never flushed


def test_install_larger_than_backing_region_rejected():
    rack = small_cache_rack()
    pc = rack.pcomponent(0)

    def main():
        region = pc.alloc_region(8)
        with pytest.raises(CapacityExceededError):
            pc.excache.write(region, b"way too many bytes")
        return "ok"

    assert rack.run(main) == "ok"
