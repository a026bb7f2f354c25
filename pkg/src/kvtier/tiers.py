"""Six-tier storage hierarchy simulation.

Each tier exposes the same allocate/read/write/evict surface. Transfers are
charged latency + size/bandwidth with no contention between transfers.
Migrations between tiers are serial read-leg + write-leg; non-blocking
migrations keep the source copy readable until completion.
"""

from __future__ import annotations

import bisect
import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

from .core import NUM_TIERS, BlockMeta, SimTime

GB = 10**9
KIB = 1024
MIB = 1024 * 1024

# Piecewise-latency endpoints: base latency up to 4 KiB, large latency from 16 MiB.
SMALL_MESSAGE_BYTES = 4 * KIB
LARGE_MESSAGE_BYTES = 16 * MIB


class TierError(Exception):
    pass


class NeedsEviction(TierError):
    def __init__(self, tier: int, bytes_short: int):
        super().__init__(f"tier {tier} is short {bytes_short} bytes")
        self.tier = tier
        self.bytes_short = bytes_short


class TierDisabled(TierError):
    def __init__(self, tier: int):
        super().__init__(f"tier {tier} is disabled")
        self.tier = tier


class IllegalState(TierError):
    pass


@dataclass(frozen=True)
class TierSpec:
    tier_index: int
    name: str
    bandwidth_bytes_per_sec: float
    base_latency_ns: float
    capacity_bytes: Optional[int]  # None: unbounded backing store
    cost_dollars_per_gb_hour: float
    latency_large_ns: Optional[float] = None

    def __post_init__(self):
        if not 0 <= self.tier_index < NUM_TIERS:
            raise ValueError(f"tier_index {self.tier_index} out of range")
        if self.bandwidth_bytes_per_sec <= 0 or self.base_latency_ns <= 0:
            raise ValueError(f"tier {self.tier_index}: bandwidth and latency must be positive")
        if self.capacity_bytes is not None and self.capacity_bytes <= 0:
            raise ValueError(f"tier {self.tier_index}: capacity must be positive")
        if self.cost_dollars_per_gb_hour <= 0:
            raise ValueError(f"tier {self.tier_index}: cost must be positive")
        if self.latency_large_ns is not None and self.latency_large_ns < self.base_latency_ns:
            raise ValueError(f"tier {self.tier_index}: large-message latency below base latency")

    @property
    def piecewise(self) -> bool:
        return self.latency_large_ns is not None and self.latency_large_ns != self.base_latency_ns

    def scaled(self, factor: float) -> "TierSpec":
        if self.capacity_bytes is None:
            return self
        return replace(self, capacity_bytes=max(1, int(self.capacity_bytes * factor)))


# Ranged datasheet latencies use a representative point: 3 us for DRAM
# (1-5 us GPU-observed) and the 1 us / 100 us endpoints for RDMA.
DEFAULT_TIERS: tuple[TierSpec, ...] = (
    TierSpec(0, "GPU HBM3", 3.35e12, 100, 40 * GB, 0.500),
    TierSpec(1, "CPU DRAM (pinned)", 204e9, 3_000, 160 * GB, 0.050),
    TierSpec(2, "CXL 3.0 Memory", 64e9, 500, 512 * GB, 0.030),
    TierSpec(3, "NVMe + GDS", 12e9, 10_000, 3_988 * GB, 0.020),
    TierSpec(4, "RDMA Network", 50e9, 1_000, 33_300 * GB, 0.005, latency_large_ns=100_000),
    TierSpec(5, "Parallel FS", 2e9, 1_000_000, None, 0.001),
)


def effective_latency_ns(spec: TierSpec, size_bytes: float) -> float:
    if not spec.piecewise:
        return spec.base_latency_ns
    if size_bytes <= SMALL_MESSAGE_BYTES:
        return spec.base_latency_ns
    if size_bytes >= LARGE_MESSAGE_BYTES:
        return spec.latency_large_ns
    frac = math.log(size_bytes / SMALL_MESSAGE_BYTES) / math.log(LARGE_MESSAGE_BYTES / SMALL_MESSAGE_BYTES)
    return spec.base_latency_ns + frac * (spec.latency_large_ns - spec.base_latency_ns)


def transfer_ns(spec: TierSpec, size_bytes: float) -> float:
    """Exact (fractional) transfer time in nanoseconds."""
    return effective_latency_ns(spec, size_bytes) + size_bytes / spec.bandwidth_bytes_per_sec * 1e9


def transfer_time(spec: TierSpec, size_bytes: int) -> SimTime:
    """Transfer time rounded to whole simulated nanoseconds."""
    if size_bytes <= 0:
        raise ValueError("size_bytes must be positive")
    return int(round(transfer_ns(spec, size_bytes)))


@dataclass(frozen=True)
class ValueScoreParams:
    """Cost model behind placement.

    ``promotion_thresholds`` are dollars per token, one per tier, and are
    multiplied by a block's token count before comparison with its score.
    """

    recompute_cost_per_token_ns: float = 250_000.0
    gpu_hour_cost: float = 2.0
    expected_residency_hours: float = 0.001
    promotion_thresholds: tuple[float, ...] = (1e-7, 4e-8, 1.5e-8, 5e-9, 1e-9, 0.0)

    def __post_init__(self):
        th = tuple(self.promotion_thresholds)
        if len(th) != NUM_TIERS:
            raise ValueError(f"need {NUM_TIERS} promotion thresholds, got {len(th)}")
        # The slowest tier is the unconditional fallback; its threshold is not used.
        if any(a < b for a, b in zip(th[:-2], th[1:-1])):
            raise ValueError("promotion thresholds must be non-increasing with tier index")
        if self.recompute_cost_per_token_ns <= 0 or self.gpu_hour_cost <= 0 or self.expected_residency_hours <= 0:
            raise ValueError("value-score cost parameters must be positive")

    def recompute_dollars(self, tokens: int) -> float:
        return tokens * self.recompute_cost_per_token_ns * 1e-9 / 3600.0 * self.gpu_hour_cost


def storage_dollars(spec: TierSpec, size_bytes: int, hours: float) -> float:
    return size_bytes / GB * spec.cost_dollars_per_gb_hour * hours


def value_score(p_reuse: float, meta: BlockMeta, tier: TierSpec, params: ValueScoreParams) -> float:
    """Expected recompute dollars saved minus storage dollars spent at ``tier``."""
    if not 0.0 <= p_reuse <= 1.0:
        raise ValueError(f"p_reuse {p_reuse} outside [0, 1]")
    return p_reuse * params.recompute_dollars(meta.num_tokens) - storage_dollars(
        tier, meta.size_bytes, params.expected_residency_hours
    )


@dataclass
class TierState:
    spec: TierSpec
    used_bytes: int = 0
    resident: dict[int, BlockMeta] = field(default_factory=dict)
    hit_count: int = 0
    miss_count: int = 0
    promotion_count: int = 0
    demotion_count: int = 0
    eviction_count: int = 0
    enabled: bool = True

    @property
    def index(self) -> int:
        return self.spec.tier_index

    @property
    def free_bytes(self) -> float:
        if self.spec.capacity_bytes is None:
            return math.inf
        return self.spec.capacity_bytes - self.used_bytes

    def fits(self, size_bytes: int) -> bool:
        return size_bytes <= self.free_bytes


@dataclass(frozen=True)
class Migration:
    block_id: int
    src: int
    dst: int
    ready_at: SimTime


@dataclass(frozen=True)
class RedistributionEvent:
    block_id: int
    src: int
    dst: Optional[int]  # None: no enabled tier could take the block
    completion: SimTime


class Hierarchy:
    """Live state of all tiers; externally synchronized (one mutator at a time)."""

    def __init__(self, specs: Sequence[TierSpec] = DEFAULT_TIERS):
        indices = [s.tier_index for s in specs]
        if sorted(indices) != list(range(len(specs))) or len(specs) != NUM_TIERS:
            raise ValueError(f"hierarchy needs tiers 0..{NUM_TIERS - 1} exactly once, got {indices}")
        self.tiers = [TierState(s) for s in sorted(specs, key=lambda s: s.tier_index)]
        self.where: dict[int, int] = {}  # block_id -> tier holding the authoritative copy
        self.inflight: dict[int, Migration] = {}
        self._displaced: dict[int, list[tuple[int, int]]] = {}
        self.touched: Optional[set[int]] = None  # debug audit hook: ids whose residency changed
        self._enabled = [t.index for t in self.tiers]  # kept in step with disable_tier/enable_tier

    # -- queries ---------------------------------------------------------

    def __getitem__(self, idx: int) -> TierState:
        return self.tiers[idx]

    @property
    def enabled_indices(self) -> list[int]:
        return [t.index for t in self.tiers if t.enabled]

    def next_enabled(self, idx: int) -> Optional[int]:
        for t in self.tiers[idx + 1:]:
            if t.enabled:
                return t.index
        return None

    def locate(self, block_id: int, now: Optional[SimTime] = None) -> Optional[int]:
        """Tier serving reads of ``block_id`` at ``now`` (source tier while in flight).

        This, not ``BlockMeta.resident_tier``, is authoritative: metas are
        stored as given and are not rewritten on every move.
        """
        mig = self.inflight.get(block_id)
        if mig is not None and (now is None or now < mig.ready_at):
            return mig.src
        return self.where.get(block_id)

    def capacity(self, enabled_only: bool = True) -> float:
        total = 0
        for t in self.tiers:
            if enabled_only and not t.enabled:
                continue
            if t.spec.capacity_bytes is None:
                return math.inf
            total += t.spec.capacity_bytes
        return total

    # -- uniform tier interface -------------------------------------------

    def _require_enabled(self, idx: int) -> TierState:
        tier = self.tiers[idx]
        if not tier.enabled:
            raise TierDisabled(idx)
        return tier

    def _insert(self, tier: TierState, meta: BlockMeta) -> None:
        tier.resident[meta.block_id] = meta
        tier.used_bytes += meta.size_bytes
        if self.touched is not None:
            self.touched.add(meta.block_id)

    def _remove(self, tier: TierState, block_id: int) -> BlockMeta:
        meta = tier.resident.pop(block_id)
        tier.used_bytes -= meta.size_bytes
        if self.touched is not None:
            self.touched.add(block_id)
        return meta

    def detach(self, block_id: int) -> tuple[BlockMeta, int]:
        """Take a settled block out of the hierarchy without counting an eviction.

        Used by callers that relocate a block in several steps; the block must
        be re-attached (or deliberately dropped) before the next event.
        """
        if block_id in self.inflight:
            raise IllegalState(f"block {block_id} is mid-migration")
        idx = self.where.pop(block_id)
        return self._remove(self.tiers[idx], block_id), idx

    def attach(self, idx: int, meta: BlockMeta) -> None:
        tier = self.tiers[idx]
        if not tier.enabled:
            raise TierDisabled(idx)
        bid = meta.block_id
        if bid in self.where:
            raise IllegalState(f"block {bid} already resident in tier {self.where[bid]}")
        cap = tier.spec.capacity_bytes
        if cap is not None and meta.size_bytes > cap - tier.used_bytes:
            raise NeedsEviction(idx, int(meta.size_bytes - tier.free_bytes))
        self._insert(tier, meta)
        self.where[bid] = idx

    def write_block(self, idx: int, meta: BlockMeta, now: SimTime) -> SimTime:
        tier = self._require_enabled(idx)
        if meta.block_id in tier.resident:
            raise IllegalState(f"block {meta.block_id} already resident in tier {idx}")
        if meta.block_id in self.where:
            raise IllegalState(f"block {meta.block_id} already resident in tier {self.where[meta.block_id]}")
        if not tier.fits(meta.size_bytes):
            raise NeedsEviction(idx, int(meta.size_bytes - tier.free_bytes))
        self._insert(tier, replace(meta, last_access=now, resident_tier=idx))
        self.where[meta.block_id] = idx
        return now + transfer_time(tier.spec, meta.size_bytes)

    def read_block(self, idx: int, block_id: int, now: SimTime) -> Optional[tuple[BlockMeta, SimTime]]:
        """Hit: (meta, completion time). Miss: None."""
        tier = self._require_enabled(idx)
        if self.locate(block_id, now) != idx:
            tier.miss_count += 1
            return None
        tier.hit_count += 1
        meta = replace(tier.resident[block_id], last_access=now)
        tier.resident[block_id] = meta
        return meta, now + transfer_time(tier.spec, meta.size_bytes)

    def touch(self, idx: int, block_id: int, now: SimTime) -> None:
        tier = self.tiers[idx]
        tier.resident[block_id] = replace(tier.resident[block_id], last_access=now)

    def evict_block(self, idx: int, block_id: int) -> BlockMeta:
        """Drop a block from the hierarchy entirely."""
        tier = self.tiers[idx]
        if block_id in self.inflight:
            raise IllegalState(f"block {block_id} is mid-migration")
        if self.where.get(block_id) != idx:
            raise IllegalState(f"block {block_id} not resident in tier {idx}")
        del self.where[block_id]
        tier.eviction_count += 1
        return self._remove(tier, block_id)

    def migrate(self, block_id: int, src: int, dst: int, now: SimTime, blocking: bool = False) -> SimTime:
        """Move a block between tiers; returns the completion time.

        Non-blocking migrations reserve space at ``dst`` immediately and keep
        serving reads from ``src`` until :meth:`advance` passes completion.
        """
        if src == dst:
            return now
        if not self.tiers[src].enabled:
            raise IllegalState(f"tier {src} is disabled; its blocks were redistributed")
        if self.where.get(block_id) != src or block_id in self.inflight:
            raise IllegalState(f"block {block_id} not settled in tier {src}")
        target = self._require_enabled(dst)
        source = self.tiers[src]
        meta = source.resident[block_id]
        if not target.fits(meta.size_bytes):
            raise NeedsEviction(dst, int(meta.size_bytes - target.free_bytes))
        done = now + transfer_time(source.spec, meta.size_bytes) + transfer_time(target.spec, meta.size_bytes)
        self._insert(target, meta)
        self.where[block_id] = dst
        if dst < src:
            target.promotion_count += 1
        else:
            source.demotion_count += 1
        if blocking:
            self._remove(source, block_id)
        else:
            self.inflight[block_id] = Migration(block_id, src, dst, done)
        return done

    def promote(self, block_id: int, from_tier: int, to_tier: int, now: SimTime, blocking: bool = False) -> SimTime:
        if to_tier > from_tier:
            raise ValueError("promote moves toward faster tiers")
        return self.migrate(block_id, from_tier, to_tier, now, blocking)

    def demote(self, block_id: int, from_tier: int, to_tier: int, now: SimTime, blocking: bool = False) -> SimTime:
        if to_tier < from_tier:
            raise ValueError("demote moves toward slower tiers")
        return self.migrate(block_id, from_tier, to_tier, now, blocking)

    def complete(self, block_id: int) -> None:
        mig = self.inflight.pop(block_id)
        self._remove(self.tiers[mig.src], block_id)

    def cancel(self, block_id: int) -> None:
        mig = self.inflight.pop(block_id)
        self._remove(self.tiers[mig.dst], block_id)
        self.where[block_id] = mig.src

    def advance(self, now: SimTime) -> list[Migration]:
        """Complete every migration whose completion time is <= ``now``."""
        if not self.inflight:
            return []
        done = sorted((m for m in self.inflight.values() if m.ready_at <= now),
                      key=lambda m: (m.ready_at, m.block_id))
        for mig in done:
            self.complete(mig.block_id)
        return done

    # -- placement ---------------------------------------------------------

    def place(self, meta: BlockMeta, p_reuse: float, params: ValueScoreParams, min_tier: int = 0) -> int:
        """Fastest enabled tier (>= ``min_tier``) whose threshold the block's score exceeds."""
        if not 0.0 <= p_reuse <= 1.0:
            raise ValueError(f"p_reuse {p_reuse} outside [0, 1]")
        enabled = self._enabled
        if not enabled:
            raise IllegalState("no enabled tiers")
        fallback = enabled[-1]
        if min_tier > fallback:
            return fallback
        tokens = meta.num_tokens
        gain = p_reuse * params.recompute_dollars(tokens)
        per_byte_hour = meta.size_bytes / GB * params.expected_residency_hours
        thresholds = params.promotion_thresholds
        for tier in self.tiers[min_tier:fallback]:
            if not tier.enabled:
                continue
            # Same quantity as value_score(), unrolled for the replay hot path.
            score = gain - per_byte_hour * tier.spec.cost_dollars_per_gb_hour
            if score > thresholds[tier.spec.tier_index] * tokens:
                return tier.spec.tier_index
        return fallback

    # -- degradation -------------------------------------------------------

    def _settle_inflight(self, idx: int) -> None:
        for mig in sorted(self.inflight.values(), key=lambda m: m.block_id):
            if mig.dst == idx:
                self.cancel(mig.block_id)
            elif mig.src == idx:
                self.complete(mig.block_id)

    def _fallback_order(self, idx: int) -> list[int]:
        slower = [t.index for t in self.tiers[idx + 1:] if t.enabled]
        faster = [t.index for t in reversed(self.tiers[:idx]) if t.enabled]
        return slower + faster

    def disable_tier(self, idx: int, now: SimTime) -> list[RedistributionEvent]:
        """Remove a tier from the promotion/demotion graph, re-homing its blocks.

        Blocks go to the next slower enabled tier, cascading further down on
        overflow, then to faster tiers if nothing slower has room.
        """
        tier = self._require_enabled(idx)
        self._settle_inflight(idx)
        tier.enabled = False
        self._enabled = [t.index for t in self.tiers if t.enabled]
        events = []
        moved = []
        order = self._fallback_order(idx)
        blocks = sorted(tier.resident.values(), key=lambda m: (-m.last_access, m.block_id))
        for meta in blocks:
            self._remove(tier, meta.block_id)
            dst = next((j for j in order if self.tiers[j].fits(meta.size_bytes)), None)
            if dst is None:
                del self.where[meta.block_id]
                events.append(RedistributionEvent(meta.block_id, idx, None, now))
                continue
            target = self.tiers[dst]
            self._insert(target, meta)
            self.where[meta.block_id] = dst
            if dst > idx:
                tier.demotion_count += 1
            else:
                target.promotion_count += 1
            done = now + transfer_time(tier.spec, meta.size_bytes) + transfer_time(target.spec, meta.size_bytes)
            events.append(RedistributionEvent(meta.block_id, idx, dst, done))
            moved.append((meta.block_id, dst))
        self._displaced[idx] = moved
        return events

    def enable_tier(self, idx: int, now: SimTime) -> list[RedistributionEvent]:
        """Re-enable a tier and pull back blocks displaced when it was disabled."""
        tier = self.tiers[idx]
        if tier.enabled:
            return []
        tier.enabled = True
        self._enabled = [t.index for t in self.tiers if t.enabled]
        events = []
        for block_id, where in self._displaced.pop(idx, []):
            if self.where.get(block_id) != where or block_id in self.inflight:
                continue
            meta = self.tiers[where].resident[block_id]
            if not tier.fits(meta.size_bytes):
                continue
            self._remove(self.tiers[where], block_id)
            self._insert(tier, meta)
            self.where[block_id] = idx
            done = now + transfer_time(self.tiers[where].spec, meta.size_bytes) + transfer_time(tier.spec, meta.size_bytes)
            events.append(RedistributionEvent(block_id, where, idx, done))
        return events

    # -- checks --------------------------------------------------------------

    def check_invariants(self) -> None:
        """Raise AssertionError if occupancy or single-residency is violated."""
        seen: dict[int, list[int]] = {}
        for tier in self.tiers:
            total = sum(m.size_bytes for m in tier.resident.values())
            assert total == tier.used_bytes, f"tier {tier.index}: used {tier.used_bytes} != {total}"
            cap = tier.spec.capacity_bytes
            assert cap is None or tier.used_bytes <= cap, f"tier {tier.index} over capacity"
            assert tier.enabled or not tier.resident, f"disabled tier {tier.index} holds blocks"
            for bid in tier.resident:
                seen.setdefault(bid, []).append(tier.index)
        assert set(seen) == set(self.where), "residency map out of sync"
        for bid, tiers in seen.items():
            mig = self.inflight.get(bid)
            if mig is None:
                assert tiers == [self.where[bid]], f"block {bid} resident in {tiers}"
            else:
                assert sorted(tiers) == sorted({mig.src, mig.dst}), f"in-flight block {bid} in {tiers}"

    def snapshot(self) -> dict[int, dict[int, int]]:
        """tier -> {block_id: size} for brute-force state comparison."""
        return {t.index: {b: m.size_bytes for b, m in sorted(t.resident.items())} for t in self.tiers}


class HashRing:
    """Consistent-hash ring mapping keys to nodes; lookup is a binary search."""

    def __init__(self, nodes: Iterable[str], vnodes: int = 64):
        if vnodes <= 0:
            raise ValueError("vnodes must be positive")
        self.vnodes = vnodes
        points = []
        for node in nodes:
            for i in range(vnodes):
                points.append((_ring_hash(f"{node}#{i}".encode()), node))
        if not points:
            raise ValueError("hash ring needs at least one node")
        points.sort()
        self._keys = [p[0] for p in points]
        self._nodes = [p[1] for p in points]

    def node_for(self, key) -> str:
        if isinstance(key, int):
            key = key.to_bytes(8, "little", signed=False)
        elif isinstance(key, str):
            key = key.encode()
        idx = bisect.bisect_right(self._keys, _ring_hash(key))
        return self._nodes[idx % len(self._nodes)]


def _ring_hash(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "big")


def ring_node(key, nodes: Sequence[str], vnodes: int = 64) -> str:
    return HashRing(nodes, vnodes).node_for(key)
