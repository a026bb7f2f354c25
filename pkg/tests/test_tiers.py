import math

import pytest
from hypothesis import given, settings, strategies as st

from kvtier.core import BlockMeta, BlockType
from kvtier.tiers import (
    DEFAULT_TIERS, GB, Hierarchy, HashRing, IllegalState, NeedsEviction, TierDisabled, ValueScoreParams, ring_node,
    transfer_ns, transfer_time, value_score,
)
from helpers import small_tiers

MB = 10**6


def meta(bid, size=4 * MB, tokens=128, last_access=0):
    return BlockMeta(bid, "s", BlockType.USER_CONTEXT, (0, tokens), size, last_access=last_access)


def test_transfer_examples():
    assert transfer_time(DEFAULT_TIERS[3], 2 * MB) == 176_667
    assert transfer_ns(DEFAULT_TIERS[0], 1) == pytest.approx(100, abs=0.01)
    assert transfer_ns(DEFAULT_TIERS[4], 4096) == pytest.approx(1000 + 4096 / 50e9 * 1e9)
    assert transfer_ns(DEFAULT_TIERS[4], 16 * 1024 * 1024) == pytest.approx(100_000 + 16 * 1024 * 1024 / 50)
    with pytest.raises(ValueError):
        transfer_time(DEFAULT_TIERS[0], 0)


@given(st.sampled_from(DEFAULT_TIERS), st.floats(1, 1e10), st.floats(1, 1e10))
def test_transfer_monotone(spec, a, b):
    lo, hi = sorted((a, b))
    if lo < hi:
        assert transfer_ns(spec, lo) < transfer_ns(spec, hi)


def test_cumulative_capacities():
    h = Hierarchy()
    for k in range(1, 6):
        h.disable_tier(k, 0)
    caps = []
    for k in range(1, 6):
        caps.append(h.capacity())
        h.enable_tier(k, 0)
    assert caps == [40 * GB, 200 * GB, 712 * GB, 4_700 * GB, 38_000 * GB]
    assert math.isinf(h.capacity())


def test_write_read_evict():
    h = Hierarchy()
    done = h.write_block(0, meta(1), 10)
    assert done == 10 + transfer_time(DEFAULT_TIERS[0], 4 * MB)
    assert h.tiers[0].used_bytes == 4 * MB
    got, t = h.read_block(0, 1, 20)
    assert got.last_access == 20 and h.tiers[0].hit_count == 1
    assert h.read_block(0, 2, 20) is None and h.tiers[0].miss_count == 1
    h.evict_block(0, 1)
    assert h.read_block(0, 1, 30) is None


def test_write_overflow_does_not_mutate():
    h = Hierarchy(small_tiers([10, 20, 30, 40, 50, None]))
    h.write_block(0, meta(1, 6), 0)
    before = h.snapshot()
    with pytest.raises(NeedsEviction) as err:
        h.write_block(0, meta(2, 6), 0)
    assert err.value.bytes_short == 2
    assert h.snapshot() == before


def test_disabled_tier_write():
    h = Hierarchy()
    h.disable_tier(2, 0)
    with pytest.raises(TierDisabled):
        h.write_block(2, meta(1), 0)


def test_value_score_examples():
    p = ValueScoreParams()
    m = meta(1, tokens=512)
    for spec in DEFAULT_TIERS:
        assert value_score(0.0, m, spec, p) < 0
        assert value_score(0.9, m, spec, p) > value_score(0.1, m, spec, p)
    assert value_score(1.0, m, DEFAULT_TIERS[5], p) >= value_score(1.0, m, DEFAULT_TIERS[0], p)
    with pytest.raises(ValueError):
        value_score(1.5, m, DEFAULT_TIERS[0], p)


def test_default_calibration_places_in_tier1():
    from kvtier.sizing import PRESETS, sequence_kv_bytes
    size = sequence_kv_bytes(PRESETS["Llama-3-70B"], 512)
    assert Hierarchy().place(meta(1, size, 512), 0.7, ValueScoreParams()) == 1


def test_place():
    h = Hierarchy()
    p = ValueScoreParams()
    zero = ValueScoreParams(promotion_thresholds=(0.0,) * 6)
    assert h.place(meta(1, 1, 512), 1.0, zero) == 0
    assert h.place(meta(1), 0.0, p) == 5
    cheap = ValueScoreParams(promotion_thresholds=(1.0, 1.0, 0.0, 0.0, 0.0, 0.0))
    assert h.place(meta(1, 1), 1.0, cheap) == 2
    h.disable_tier(2, 0)
    assert h.place(meta(1, 1), 1.0, cheap) == 3
    h.disable_tier(5, 0)
    assert h.place(meta(1), 0.0, p) == 4


def test_promote_two_legs():
    h = Hierarchy()
    h.write_block(3, meta(1), 0)
    done = h.promote(1, 3, 0, 100)
    assert done == 100 + transfer_time(DEFAULT_TIERS[3], 4 * MB) + transfer_time(DEFAULT_TIERS[0], 4 * MB)
    assert h.locate(1, 100) == 3  # reads are served from the source until completion
    h.advance(done)
    assert h.locate(1, done) == 0 and 1 not in h.tiers[3].resident
    assert h.promote(1, 0, 0, 7) == 7
    h.check_invariants()


def test_demote_from_disabled():
    h = Hierarchy()
    h.write_block(2, meta(1), 0)
    h.disable_tier(2, 0)
    with pytest.raises(IllegalState):
        h.demote(1, 2, 3, 0)


def test_disable_examples():
    h = Hierarchy(small_tiers([100, 100, 30, 30, 60, None]))
    assert h.disable_tier(1, 0) == []
    for b in range(3):
        h.write_block(2, meta(b, 10), 0)
    events = h.disable_tier(2, 0)
    assert [e.dst for e in events] == [3, 3, 3]
    h.check_invariants()

    h = Hierarchy(small_tiers([100, 100, 30, 30, 60, None]))
    for b in range(3):
        h.write_block(2, meta(b, 10), 0)
        h.write_block(3, meta(10 + b, 10), 0)
    assert [e.dst for e in h.disable_tier(2, 0)] == [4, 4, 4]
    h.check_invariants()


ops = st.lists(st.tuples(st.integers(0, 4), st.integers(0, 19), st.integers(1, 40)), max_size=40)


@settings(max_examples=60)
@given(ops, st.integers(1, 4))
def test_disable_enable_round_trip(writes, tier):
    h = Hierarchy(small_tiers([100, 100, 100, 100, 100, None]))
    for t, b, size in writes:
        if b not in h.where and h.tiers[t].fits(size):
            h.write_block(t, meta(b, size), 0)
    before = h.snapshot()
    h.disable_tier(tier, 0)
    h.check_invariants()
    assert sum(t.used_bytes for t in h.tiers) == sum(sum(v.values()) for v in before.values())
    h.enable_tier(tier, 0)
    h.check_invariants()
    assert h.snapshot() == before


@settings(max_examples=60)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 9), st.integers(0, 5), st.integers(1, 30)), max_size=60))
def test_conservation_under_random_ops(steps):
    h = Hierarchy(small_tiers([60, 60, 60, 60, 60, None]))
    now = 0
    for op, b, t, size in steps:
        now += 1000
        h.advance(now)
        try:
            if op == 0 and b not in h.where:
                h.write_block(t, meta(b, size), now)
            elif op == 1 and b in h.where and b not in h.inflight:
                h.migrate(b, h.where[b], t, now)
            elif op == 2 and b in h.where and b not in h.inflight:
                h.evict_block(h.where[b], b)
        except NeedsEviction:
            pass
        h.check_invariants()


def test_hash_ring():
    nodes = [f"n{i}" for i in range(5)]
    ring = HashRing(nodes)
    assert {ring.node_for(k) for k in range(2000)} == set(nodes)
    assert ring_node(42, nodes) == ring.node_for(42)
    # Removing one node only moves that node's keys.
    smaller = HashRing(nodes[:-1])
    for k in range(500):
        if ring.node_for(k) != "n4":
            assert smaller.node_for(k) == ring.node_for(k)
    with pytest.raises(ValueError):
        HashRing([])
