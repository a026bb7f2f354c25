"""Prometheus text exposition and merging of replay metrics."""

from __future__ import annotations

from typing import Iterable, Sequence

from prometheus_client import CollectorRegistry, generate_latest
from prometheus_client.core import CounterMetricFamily, GaugeMetricFamily

from .core import NUM_TIERS
from .replay import ReplayMetrics

_PER_TIER_COUNTERS = (
    ("kvtier_hits", "Accesses served from each tier.", "hits_by_tier"),
    ("kvtier_promotions", "Blocks promoted into each tier.", "promotions_by_tier"),
    ("kvtier_demotions", "Blocks demoted into each tier.", "demotions_by_tier"),
)

_SCALAR_COUNTERS = (
    ("kvtier_misses", "Accesses that found the block in no tier.", "misses"),
    ("kvtier_accesses", "Block accesses replayed.", "total_accesses"),
    ("kvtier_events", "Trace events replayed.", "events"),
    ("kvtier_prefetches", "Prefetch promotions issued.", "prefetches_issued"),
    ("kvtier_admissions_bypassed", "Accesses served in place instead of promoted to Tier 0.",
     "admissions_bypassed"),
)


class ReplayCollector:
    """Exposes one or more runs; each run is labelled by policy and seed.

    Counters carry no creation timestamp so the exposition is reproducible.
    """

    def __init__(self, runs: Sequence[ReplayMetrics]):
        self.runs = list(runs)

    def collect(self):
        for name, doc, attr in _PER_TIER_COUNTERS:
            fam = CounterMetricFamily(name, doc, labels=["policy", "seed", "tier"])
            for m in self.runs:
                for tier, v in enumerate(getattr(m, attr)):
                    fam.add_metric([m.policy, str(m.seed), str(tier)], v)
            yield fam
        for name, doc, attr in _SCALAR_COUNTERS:
            fam = CounterMetricFamily(name, doc, labels=["policy", "seed"])
            for m in self.runs:
                fam.add_metric([m.policy, str(m.seed)], getattr(m, attr))
            yield fam
        used = GaugeMetricFamily("kvtier_used_bytes", "Bytes resident in each tier at the end of the replay.",
                                 labels=["policy", "seed", "tier"])
        for m in self.runs:
            for tier, v in enumerate(m.used_bytes_by_tier):
                used.add_metric([m.policy, str(m.seed), str(tier)], v)
        yield used
        rate = GaugeMetricFamily("kvtier_hit_rate_t01", "Share of accesses served from Tier 0 or Tier 1.",
                                 labels=["policy", "seed"])
        for m in self.runs:
            rate.add_metric([m.policy, str(m.seed)], m.hit_rate_t01)
        yield rate


def prometheus_text(runs: Sequence[ReplayMetrics]) -> str:
    registry = CollectorRegistry(auto_describe=False)
    registry.register(ReplayCollector(runs))
    return generate_latest(registry).decode()


def write_prometheus(path: str, runs: Sequence[ReplayMetrics]) -> None:
    with open(path, "w") as fh:
        fh.write(prometheus_text(runs))


def merge(runs: Iterable[ReplayMetrics]) -> ReplayMetrics:
    """Sum counters of runs under one policy; associative and order-independent.

    The merged seed is the smallest input seed; wall time is dropped.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("nothing to merge")
    policies = {m.policy for m in runs}
    if len(policies) != 1:
        raise ValueError(f"cannot merge runs of different policies: {sorted(policies)}")
    out = ReplayMetrics(policy=runs[0].policy, seed=min(m.seed for m in runs))
    for m in runs:
        for name in ("total_accesses", "misses", "prefetches_issued", "prefetch_served_from_source",
                     "admissions_bypassed", "recompute_saved_ns", "recompute_charged_ns", "events"):
            setattr(out, name, getattr(out, name) + getattr(m, name))
        for name in ("hits_by_tier", "promotions_by_tier", "demotions_by_tier", "used_bytes_by_tier"):
            acc = getattr(out, name)
            for k in range(NUM_TIERS):
                acc[k] += getattr(m, name)[k]
    return out
