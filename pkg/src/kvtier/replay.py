"""Deterministic trace replay under LRU, EMA, or Bayesian cache management.

Every accessed block ends the access resident in Tier 0; the policies differ
in which block leaves a full tier and where it goes:

* LRU: least recently used block, demoted to the next enabled tier.
* EMA: lowest head-importance score (recency EMA, no positional decay), then
  least recent; demoted to the next enabled tier.
* Bayesian: lowest predicted reuse probability, then importance and recency;
  demoted to the tier its value score earns. Also warms the tool-context
  blocks of the predicted next tool on every tool call.

Position-window prefetch is an independent switch (``prefetch.enabled``)
that applies under any policy.

Reuse labels for the predictor are forward-looking: when a block is accessed
again, its previous access is recorded as reused; accesses not followed by a
re-access within ``label_horizon_events`` accesses are recorded as not reused.
"""

from __future__ import annotations

import bisect
import enum
import heapq
import json
import math
import statistics
import time as _time
from collections import OrderedDict, deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

from .agentic import DEFAULT_CLASS_THRESHOLDS, ToolChain, ToolMemoryProfiles, on_tool_switch
from .core import (NUM_TIERS, NS_PER_S, AccessEvent, BlockMeta, BlockType, EventKind, TransitionType,
                   block_tokens_for_arch)
from .eviction import DEFAULT_TRANSITION_MULTIPLIERS, EvictionParams, ImportanceMatrix
from .predictor import PredictorParams, PredictorState
from .prefetch import PrefetchParams, plan_prefetch
from .sizing import PRESETS, ModelConfig, infer_architecture
from .tiers import DEFAULT_TIERS, Hierarchy, IllegalState, TierSpec, ValueScoreParams

SCHEMA_VERSION = 1


class PolicyKind(str, enum.Enum):
    LRU = "lru"
    EMA = "ema"
    BAYESIAN = "bayesian"


@dataclass(frozen=True)
class AgenticParams:
    smoothing: float = 1.0
    memory_decay: float = 0.5
    class_thresholds: tuple[float, float, float] = DEFAULT_CLASS_THRESHOLDS
    prefetch_next_tool: bool = True
    reserve_on_switch: bool = True
    reserve_cap_fraction: float = 0.1  # at most this share of Tier 0 is freed ahead of a switch


@dataclass(frozen=True)
class ReplayConfig:
    tiers: tuple[TierSpec, ...] = DEFAULT_TIERS
    # Share of the tier table's capacities one replay gets. A 1,000-session
    # trace under the full table never evicts its shared prompts or tool
    # schemas, so every policy would look alike.
    capacity_scale: float = 0.05
    value: ValueScoreParams = field(default_factory=ValueScoreParams)
    predictor: PredictorParams = field(default_factory=PredictorParams)
    eviction: EvictionParams = field(default_factory=EvictionParams)
    prefetch: PrefetchParams = field(default_factory=lambda: PrefetchParams(enabled=False))
    agentic: AgenticParams = field(default_factory=AgenticParams)
    model: str = "Llama-3-70B"
    label_horizon_events: int = 20_000
    age_half_life_s: Optional[float] = 30.0  # recency discount on predicted reuse when ranking victims
    admit_max_tier: int = 1  # Bayesian: blocks placed below this tier are not pulled into Tier 0
    debug: bool = False

    def __post_init__(self):
        if self.capacity_scale <= 0:
            raise ValueError("capacity_scale must be positive")
        if self.label_horizon_events <= 0:
            raise ValueError("label_horizon_events must be positive")
        if self.age_half_life_s is not None and self.age_half_life_s <= 0:
            raise ValueError("age_half_life_s must be positive")
        if self.model not in PRESETS:
            raise ValueError(f"unknown model {self.model!r}")
        if not 0 <= self.admit_max_tier < NUM_TIERS:
            raise ValueError(f"admit_max_tier must lie in [0, {NUM_TIERS - 1}]")

    @property
    def model_config(self) -> ModelConfig:
        return PRESETS[self.model]

    def scaled_tiers(self) -> tuple[TierSpec, ...]:
        return tuple(t.scaled(self.capacity_scale) for t in self.tiers)


@dataclass
class ReplayMetrics:
    policy: str
    seed: int
    total_accesses: int = 0
    hits_by_tier: list[int] = field(default_factory=lambda: [0] * NUM_TIERS)
    misses: int = 0
    promotions_by_tier: list[int] = field(default_factory=lambda: [0] * NUM_TIERS)
    demotions_by_tier: list[int] = field(default_factory=lambda: [0] * NUM_TIERS)
    prefetches_issued: int = 0
    prefetch_served_from_source: int = 0
    admissions_bypassed: int = 0
    recompute_saved_ns: int = 0
    recompute_charged_ns: int = 0
    events: int = 0
    used_bytes_by_tier: list[int] = field(default_factory=lambda: [0] * NUM_TIERS)
    wall_time_s: Optional[float] = None

    @property
    def tier01_hits(self) -> int:
        return self.hits_by_tier[0] + self.hits_by_tier[1]

    @property
    def hit_rate_t01(self) -> float:
        return self.tier01_hits / self.total_accesses if self.total_accesses else 0.0

    @property
    def tier0_misses(self) -> int:
        return self.total_accesses - self.hits_by_tier[0]

    def to_json(self, include_wall_time: bool = False) -> dict:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "policy": self.policy,
            "seed": self.seed,
            "events": self.events,
            "total_accesses": self.total_accesses,
            "hits_by_tier": list(self.hits_by_tier),
            "misses": self.misses,
            "hit_rate_t01": self.hit_rate_t01,
            "promotions_by_tier": list(self.promotions_by_tier),
            "demotions_by_tier": list(self.demotions_by_tier),
            "prefetches_issued": self.prefetches_issued,
            "prefetch_served_from_source": self.prefetch_served_from_source,
            "admissions_bypassed": self.admissions_bypassed,
            "recompute_saved_ns": self.recompute_saved_ns,
            "recompute_charged_ns": self.recompute_charged_ns,
            "used_bytes_by_tier": list(self.used_bytes_by_tier),
        }
        if include_wall_time:
            doc["wall_time_s"] = self.wall_time_s
        return doc

    def dumps(self, include_wall_time: bool = False) -> str:
        return json.dumps(self.to_json(include_wall_time), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, doc: dict) -> "ReplayMetrics":
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"metrics schema_version {version} unsupported (expected {SCHEMA_VERSION})")
        m = cls(policy=doc["policy"], seed=int(doc["seed"]))
        for name in ("events", "total_accesses", "misses", "prefetches_issued", "prefetch_served_from_source",
                     "admissions_bypassed", "recompute_saved_ns", "recompute_charged_ns"):
            setattr(m, name, int(doc[name]))
        for name in ("hits_by_tier", "promotions_by_tier", "demotions_by_tier", "used_bytes_by_tier"):
            setattr(m, name, [int(x) for x in doc[name]])
        m.wall_time_s = doc.get("wall_time_s")
        return m


@dataclass
class _SessionState:
    spans: list[tuple[int, int]] = field(default_factory=list)  # sorted (token_start, block_id)
    prev_tool: Optional[str] = None
    step_bytes: int = 0


class _Auditor:
    """Per-event conservation check that recomputes occupancy independently.

    Only blocks whose residency changed during the event are re-examined, so
    the cost per event is proportional to the work the event did.
    """

    def __init__(self, hier: Hierarchy):
        self.hier = hier
        self.where: dict[int, tuple[tuple[int, ...], int]] = {}
        self.used = [0] * NUM_TIERS
        hier.touched = set()

    def check(self) -> None:
        hier = self.hier
        for bid in hier.touched:
            tiers = tuple(t.index for t in hier.tiers if bid in t.resident)
            old_tiers, size = self.where.pop(bid, ((), 0))
            for k in old_tiers:
                self.used[k] -= size
            if tiers:
                size = hier.tiers[tiers[0]].resident[bid].size_bytes
                for k in tiers:
                    self.used[k] += size
                self.where[bid] = (tiers, size)
            mig = hier.inflight.get(bid)
            if mig is None:
                if len(tiers) > 1:
                    raise IllegalState(f"block {bid} resident in tiers {tiers}")
                if hier.where.get(bid) != (tiers[0] if tiers else None):
                    raise IllegalState(f"residency map disagrees for block {bid}")
            elif set(tiers) != {mig.src, mig.dst}:
                raise IllegalState(f"in-flight block {bid} found in {tiers}")
        hier.touched.clear()
        for t in hier.tiers:
            if self.used[t.index] != t.used_bytes:
                raise IllegalState(f"tier {t.index}: used_bytes {t.used_bytes} != recomputed {self.used[t.index]}")
            cap = t.spec.capacity_bytes
            if cap is not None and t.used_bytes > cap:
                raise IllegalState(f"tier {t.index} over capacity")


class ReplayEngine:
    def __init__(self, config: ReplayConfig, policy: PolicyKind, seed: int = 0):
        self.config = config
        self.policy = PolicyKind(policy)
        # Plain bools: str-enum comparisons are slow on the per-event path.
        self._lru = self.policy == PolicyKind.LRU
        self._bayes = self.policy == PolicyKind.BAYESIAN
        self.seed = seed
        self.hier = Hierarchy(config.scaled_tiers())
        self.metrics = ReplayMetrics(self.policy.value, seed)
        model = config.model_config
        self.matrix = ImportanceMatrix.for_model(model)
        self.eviction_params = (
            replace(config.eviction, position_decay_tau=math.inf) if self.policy == PolicyKind.EMA else config.eviction
        )
        self.predictor = PredictorState(config.predictor)
        self.chain = ToolChain(config.agentic.smoothing)
        self.profiles = ToolMemoryProfiles(config.agentic.memory_decay)
        self.tool_blocks: dict[str, dict[int, None]] = {}
        self.sessions: dict[str, _SessionState] = {}
        self.metas: dict[int, BlockMeta] = {}
        self.num_layers = model.num_layers
        # Recency structures: LRU keeps one ordered dict per tier; the other
        # policies keep one min-heap of (last_access, block_id) per group.
        self.lru: list[OrderedDict] = [OrderedDict() for _ in range(NUM_TIERS)]
        self.heaps: list[dict[tuple, list]] = [{} for _ in range(NUM_TIERS)]
        self.info: dict[int, tuple[int, tuple, int]] = {}  # block -> (tier, group, last_access)
        self.pending: dict[int, tuple[BlockType, TransitionType, int]] = {}
        self.horizon: deque = deque()
        self.seq = 0
        self.now = 0
        self.block_tokens = block_tokens_for_arch(infer_architecture(model))
        self.auditor = _Auditor(self.hier) if config.debug else None
        self._score_cache: dict[frozenset, float] = {}
        self._p_cache: dict[tuple[BlockType, TransitionType], float] = {}  # dropped per key on observation

    # -- recency/group bookkeeping ------------------------------------------------

    def _group(self, meta: BlockMeta, b: BlockType, t: TransitionType) -> tuple:
        if self._bayes:
            return (b, t, meta.layer_set)
        return (meta.layer_set,)

    def _track(self, bid: int, tier: int, group: tuple, last_access: int) -> None:
        if self._lru:
            self.lru[tier][bid] = None
        else:
            heapq.heappush(self.heaps[tier].setdefault(group, []), (last_access, bid))
        self.info[bid] = (tier, group, last_access)

    def _untrack(self, bid: int) -> tuple[int, tuple, int]:
        entry = self.info.pop(bid)
        if self._lru:
            del self.lru[entry[0]][bid]
        return entry

    def _group_head(self, tier: int, group: tuple, heap: list) -> Optional[tuple[int, int]]:
        """Oldest valid, settled block of a group; discards stale heap entries."""
        skipped = []
        head = None
        while heap:
            la, bid = heap[0]
            entry = self.info.get(bid)
            if entry is None or entry[0] != tier or entry[1] != group or entry[2] != la:
                heapq.heappop(heap)
                continue
            if bid in self.hier.inflight:
                skipped.append(heapq.heappop(heap))
                continue
            head = (la, bid)
            break
        for item in skipped:
            heapq.heappush(heap, item)
        return head

    def _layer_score(self, layer_set: frozenset) -> float:
        score = self._score_cache.get(layer_set)
        if score is None:
            per_layer = self.matrix.layer_scores()
            score = float(per_layer.sum() if not layer_set else per_layer[sorted(layer_set)].sum())
            self._score_cache[layer_set] = score
        return score

    def _predict(self, b: BlockType, t: TransitionType) -> float:
        p = self._p_cache.get((b, t))
        if p is None:
            p = self._p_cache[(b, t)] = self.predictor.predict(b, t)
        return p

    def _age_factor(self, last_access: int) -> float:
        hl = self.config.age_half_life_s
        if hl is None:
            return 1.0
        return 0.5 ** ((self.now - last_access) / (hl * NS_PER_S))

    def _pick_victim(self, tier: int) -> Optional[tuple[int, float]]:
        """(block_id, effective reuse probability) of the block to move out of ``tier``."""
        if self._lru:
            for bid in self.lru[tier]:
                if bid not in self.hier.inflight:
                    return bid, 0.0
            return None
        info = self.info
        inflight = self.hier.inflight
        bayes = self._bayes
        best = None  # (p, layer score, last access, block id), layer score filled lazily on ties
        heaps = self.heaps[tier]
        for group, heap in list(heaps.items()):
            if heap:
                la, bid = heap[0]
                entry = info.get(bid)
                fresh = entry is not None and entry[0] == tier and entry[1] == group and entry[2] == la
            else:
                fresh = False
            if not fresh or bid in inflight:
                head = self._group_head(tier, group, heap)
                if head is None:
                    if not heap:
                        del heaps[group]
                    continue
                la, bid = head
            p = self._predict(group[0], group[1]) * self._age_factor(la) if bayes else 0.0
            if best is not None:
                if p > best[0]:
                    continue
                if p == best[0]:
                    if best[1] is None:
                        best = (best[0], self._layer_score(best[4][-1]), best[2], best[3], best[4])
                    key = (p, self._layer_score(group[-1]), la, bid, group)
                    if key[:4] >= best[:4]:
                        continue
                    best = key
                    continue
            best = (p, None, la, bid, group)
        return (best[3], best[0]) if best is not None else None

    def _demotion_target(self, tier: int, meta: BlockMeta, p: float) -> Optional[int]:
        nxt = self.hier.next_enabled(tier)
        if nxt is None or not self._bayes:
            return nxt
        return self.hier.place(meta, min(1.0, max(0.0, p)), self.config.value, min_tier=tier + 1)

    def _make_room(self, tier: int, need: int) -> None:
        state = self.hier.tiers[tier]
        cap = state.spec.capacity_bytes
        if cap is None:
            return
        if need > cap:
            raise IllegalState(f"block of {need} bytes exceeds tier {tier} capacity {cap}")
        while cap - state.used_bytes < need:
            pick = self._pick_victim(tier)
            if pick is None:
                raise IllegalState(f"tier {tier}: no evictable block to free {need} bytes")
            bid, p = pick
            meta, _ = self.hier.detach(bid)
            _, group, la = self._untrack(bid)
            dst = self._demotion_target(tier, meta, p)
            state.demotion_count += 1
            self.metrics.demotions_by_tier[tier] += 1
            if dst is None:
                state.eviction_count += 1
                continue
            self._make_room(dst, meta.size_bytes)
            self.hier.attach(dst, meta)
            self._track(bid, dst, group, la)

    # -- event handling -----------------------------------------------------------

    def preload(self, meta: BlockMeta, tier: int, b: Optional[BlockType] = None,
                t: TransitionType = TransitionType.REASONING_STEP) -> None:
        """Place a block before replay starts (e.g. a warm lower-tier cache)."""
        self._make_room(tier, meta.size_bytes)
        self.hier.attach(tier, meta)
        self._track(meta.block_id, tier, self._group(meta, b or meta.block_type, t), meta.last_access)
        self.metas[meta.block_id] = meta
        self._remember(meta.session_id, meta)
        if self.auditor:
            self.auditor.check()

    def _remember(self, session_id: str, meta: BlockMeta) -> _SessionState:
        st = self.sessions.get(session_id)
        if st is None:
            st = self.sessions[session_id] = _SessionState()
        item = (meta.token_span[0], meta.block_id)
        i = bisect.bisect_left(st.spans, item)
        if i == len(st.spans) or st.spans[i] != item:
            st.spans.insert(i, item)
        return st

    def _label(self, e: AccessEvent) -> None:
        # A prediction depends only on its own cell, so only observed keys go stale.
        p_cache = self._p_cache
        seq = self.seq
        horizon = self.horizon
        limit = seq - self.config.label_horizon_events
        pending = self.pending
        while horizon and horizon[0][0] <= limit:
            s0, b0 = horizon.popleft()
            ent = pending.get(b0)
            if ent is not None and ent[2] == s0:
                self.predictor.observe(ent[0], ent[1], False)
                p_cache.pop((ent[0], ent[1]), None)
                del pending[b0]
        ent = pending.get(e.block_id)
        if ent is not None:
            self.predictor.observe(ent[0], ent[1], True)
            p_cache.pop((ent[0], ent[1]), None)
        pending[e.block_id] = (e.block_type, e.transition_type, seq)
        horizon.append((seq, e.block_id))

    def _meta_for(self, e: AccessEvent) -> BlockMeta:
        meta = self.metas.get(e.block_id)
        if meta is None:
            meta = BlockMeta(e.block_id, e.session_id, e.block_type, e.token_span, e.size_bytes,
                             last_access=e.time)
            self.metas[e.block_id] = meta
        return meta

    def _access(self, e: AccessEvent) -> None:
        now = self.now
        bid = e.block_id
        m = self.metrics
        bayes = self._bayes
        if bayes:
            self._label(e)
        self.seq += 1
        meta = self._meta_for(e)
        hier = self.hier
        mig = hier.inflight.get(bid)
        recompute = round(meta.num_tokens * self.config.value.recompute_cost_per_token_ns)
        m.total_accesses += 1
        if mig is not None:
            # Strict model: an unfinished promotion is served from its source;
            # the demand read then waits for the copy to land.
            m.hits_by_tier[mig.src] += 1
            m.prefetch_served_from_source += 1
            m.recompute_saved_ns += recompute
            hier.complete(bid)
            src = mig.dst
        else:
            src = hier.where.get(bid)
            if src is None:
                m.misses += 1
                m.recompute_charged_ns += recompute
            else:
                m.hits_by_tier[src] += 1
                m.recompute_saved_ns += recompute
        group = self._group(meta, e.block_type, e.transition_type)
        if bayes and src != 0 and self._bypass(meta, e, src, group):
            pass
        elif src == 0:
            self._untrack(bid)
            self._track(bid, 0, group, now)
        else:
            if src is not None:
                hier.detach(bid)
                self._untrack(bid)
                hier.tiers[0].promotion_count += 1
                m.promotions_by_tier[0] += 1
            self._make_room(0, meta.size_bytes)
            hier.attach(0, meta)
            self._track(bid, 0, group, now)

        if not self._lru:
            self.matrix.record_block_access(None, e.position - meta.midpoint, self.eviction_params)
            self._score_cache.clear()
        st = self._remember(e.session_id, meta)
        st.step_bytes += meta.size_bytes
        if e.block_type == BlockType.TOOL_CONTEXT and st.prev_tool is not None:
            self.tool_blocks.setdefault(st.prev_tool, {})[bid] = None
        if self.config.prefetch.enabled:
            self._position_prefetch(e, st)

    def _bypass(self, meta: BlockMeta, e: AccessEvent, src: Optional[int], group: tuple) -> bool:
        """Value-score admission: a block whose placement falls below the fast tiers stays out of Tier 0.

        A miss is written straight to its placed tier; a hit stays where it is.
        Returns False when the block should be promoted as usual.
        """
        p = self._predict(e.block_type, e.transition_type)
        home = self.hier.place(meta, p, self.config.value)
        if home <= self.config.admit_max_tier:
            return False
        if src is None:
            self._make_room(home, meta.size_bytes)
            self.hier.attach(home, meta)
            self._track(meta.block_id, home, group, self.now)
        else:
            self._untrack(meta.block_id)
            self._track(meta.block_id, src, group, self.now)
        self.metrics.admissions_bypassed += 1
        return True

    def _promote_async(self, bid: int) -> None:
        hier = self.hier
        src = hier.where.get(bid)
        if src is None or src == 0 or bid in hier.inflight:
            return
        meta = hier.tiers[src].resident[bid]
        try:
            self._make_room(0, meta.size_bytes)
        except IllegalState:
            return  # Tier 0 is pinned by in-flight copies; a prefetch is only a hint
        if hier.where.get(bid) != src:  # the cascade moved it; try again from its new home
            src = hier.where.get(bid)
            if src is None or src == 0:
                return
        _, group, _ = self._untrack(bid)
        hier.migrate(bid, src, 0, self.now, blocking=False)
        self._track(bid, 0, group, self.now)  # a fresh arrival, for LRU and heap policies alike
        self.metrics.prefetches_issued += 1
        self.metrics.promotions_by_tier[0] += 1

    def _position_prefetch(self, e: AccessEvent, st: _SessionState) -> None:
        params = self.config.prefetch
        bt = self.block_tokens
        # Whole-stack blocks: the union of per-layer windows is the widest (last-layer) window.
        layer = self.num_layers - 1
        n = e.position
        hi = n + params.w_max * bt
        lo_i = bisect.bisect_left(st.spans, (n - bt, -1))
        hi_i = bisect.bisect_right(st.spans, (hi, 1 << 64))
        if hi_i <= lo_i:
            return
        where = self.hier.where
        inflight = self.hier.inflight
        candidates = {}
        for _, bid in st.spans[lo_i:hi_i]:
            tier = where.get(bid)
            if bid in inflight:
                tier = 0  # already on its way up
            candidates[bid] = (self.metas[bid], tier)
        for bid in plan_prefetch(n, layer, self.num_layers, candidates, params, bt):
            self._promote_async(bid)

    def _tool_call(self, e: AccessEvent) -> None:
        st = self.sessions.get(e.session_id)
        if st is None:
            st = self.sessions[e.session_id] = _SessionState()
        tool = e.tool_name
        if self._bayes:
            if st.prev_tool is not None:
                self.chain.observe_transition(st.prev_tool, tool)
                self.profiles.update(st.prev_tool, st.step_bytes)
            plan = on_tool_switch(self.chain, self.profiles, st.prev_tool, tool)
            self.matrix.apply_transition_multipliers(plan.transition_type, DEFAULT_TRANSITION_MULTIPLIERS)
            self._score_cache.clear()
            cfg = self.config.agentic
            if cfg.reserve_on_switch and plan.reserve_bytes > 0:
                t0 = self.hier.tiers[0]
                cap = t0.spec.capacity_bytes
                want = int(min(plan.reserve_bytes, cap * cfg.reserve_cap_fraction))
                if want > 0:
                    self._make_room(0, want)
            if cfg.prefetch_next_tool and plan.predicted_tool is not None:
                for bid in self.tool_blocks.get(plan.predicted_tool, ()):
                    self._promote_async(bid)
        st.prev_tool = tool
        st.step_bytes = 0

    def process(self, e: AccessEvent) -> None:
        if e.time < self.now:
            raise IllegalState(f"event at {e.time} precedes simulated time {self.now}")
        self.now = e.time
        if self.hier.inflight:
            self.hier.advance(e.time)
        self.metrics.events += 1
        if e.kind == EventKind.BLOCK_ACCESS:
            self._access(e)
        elif e.kind == EventKind.TOOL_CALL:
            self._tool_call(e)
        if self.auditor:
            self.auditor.check()

    def run(self, events: Iterable[AccessEvent]) -> ReplayMetrics:
        start = _time.perf_counter()
        for e in order_events(events):
            self.process(e)
        self.finish()
        self.metrics.wall_time_s = _time.perf_counter() - start
        return self.metrics

    def finish(self) -> None:
        self.metrics.used_bytes_by_tier = [t.used_bytes for t in self.hier.tiers]
        if self.config.debug:
            self.hier.check_invariants()


def order_events(events: Iterable[AccessEvent]) -> list[AccessEvent]:
    """Stable (time, sequence) order; sequence is the position in the input."""
    evs = list(events)
    if all(a.time <= b.time for a, b in zip(evs, evs[1:])):
        return evs
    return sorted(evs, key=lambda e: e.time)  # sort is stable, so ties keep input order


def validate_trace(events: Sequence[AccessEvent], config: ReplayConfig) -> None:
    """Reject traces whose blocks cannot fit the smallest enabled bounded tier."""
    t0 = config.scaled_tiers()[0].capacity_bytes
    for i, e in enumerate(events):
        if e.kind == EventKind.BLOCK_ACCESS and t0 is not None and e.size_bytes > t0:
            raise ValueError(f"event {i}: block {e.block_id} ({e.size_bytes} bytes) exceeds Tier 0 capacity")


def replay(events: Iterable[AccessEvent], policy: PolicyKind, config: ReplayConfig = ReplayConfig(),
           seed: int = 0) -> ReplayMetrics:
    evs = order_events(events)
    validate_trace(evs, config)
    return ReplayEngine(config, policy, seed).run(evs)


@dataclass(frozen=True)
class PolicySummary:
    policy: str
    runs: int
    mean: float
    stdev: float
    rates: tuple[float, ...]


def summarize(metrics: Sequence[ReplayMetrics]) -> dict[str, PolicySummary]:
    by_policy: dict[str, list[float]] = {}
    for m in metrics:
        by_policy.setdefault(m.policy, []).append(m.hit_rate_t01)
    out = {}
    for policy, rates in sorted(by_policy.items()):
        sd = statistics.stdev(rates) if len(rates) >= 2 else 0.0
        out[policy] = PolicySummary(policy, len(rates), statistics.fmean(rates), sd, tuple(rates))
    return out


def compare_policies(
    traces: Sequence[Sequence[AccessEvent]],
    config: ReplayConfig = ReplayConfig(),
    seeds: Sequence[int] = (),
    policies: Sequence[PolicyKind] = tuple(PolicyKind),
) -> dict[str, PolicySummary]:
    """Replay each (trace, seed) run under every policy; mean and stdev of Tier 0+1 hit rate.

    One trace per seed: runs differ by the generator seed that produced them.
    """
    if len(traces) < 2:
        raise ValueError("compare_policies needs at least two runs")
    if seeds and len(seeds) != len(traces):
        raise ValueError("need one seed per trace")
    seeds = list(seeds) or list(range(len(traces)))
    results = []
    for trace, seed in zip(traces, seeds):
        evs = order_events(trace)
        validate_trace(evs, config)
        for policy in policies:
            results.append(ReplayEngine(config, policy, seed).run(evs))
    return summarize(results)


def format_summary(summary: dict[str, PolicySummary], fmt: str = "text") -> str:
    rows = [summary[k] for k in sorted(summary, key=lambda p: [x.value for x in PolicyKind].index(p)
                                       if p in {x.value for x in PolicyKind} else 99)]
    if fmt == "json":
        return json.dumps(
            {r.policy: {"runs": r.runs, "mean": r.mean, "stdev": r.stdev, "rates": list(r.rates)} for r in rows},
            indent=2, sort_keys=True,
        ) + "\n"
    if fmt == "csv":
        return "policy,runs,mean_hit_rate_t01,stdev\n" + "".join(
            f"{r.policy},{r.runs},{r.mean:.6f},{r.stdev:.6f}\n" for r in rows
        )
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    lines = ["policy      runs  tier0+1 hit rate"]
    for r in rows:
        lines.append(f"{r.policy:<10}  {r.runs:>4}  {100 * r.mean:5.1f} +/- {100 * r.stdev:.1f} %")
    return "\n".join(lines) + "\n"


SWEEPS = {
    "ema_decay": (0.1, 0.3, 0.5, 0.7, 0.9),
    "confidence_halfpoint": (10.0, 20.0, 40.0),
    "prior": (1.0, 2.0, 5.0),  # symmetric Beta(a, a)
}


def swept_config(config: ReplayConfig, param: str, value: float) -> ReplayConfig:
    if param == "ema_decay":
        return replace(config, eviction=replace(config.eviction, ema_decay=value))
    if param == "confidence_halfpoint":
        return replace(config, predictor=replace(config.predictor, confidence_halfpoint=value))
    if param == "prior":
        return replace(config, predictor=replace(config.predictor, alpha0=value, beta0=value))
    raise ValueError(f"unknown sweep parameter {param!r}; expected one of {sorted(SWEEPS)}")


def sensitivity_sweep(events: Sequence[AccessEvent], param: str, values: Optional[Sequence[float]] = None,
                      policy: PolicyKind = PolicyKind.BAYESIAN, config: ReplayConfig = ReplayConfig(),
                      seed: int = 0) -> dict[float, float]:
    """Tier 0+1 hit rate of one trace at each value of ``param``."""
    evs = order_events(events)
    validate_trace(evs, config)
    out = {}
    for v in (SWEEPS[param] if values is None else values):
        out[v] = ReplayEngine(swept_config(config, param, v), policy, seed).run(evs).hit_rate_t01
    return out
