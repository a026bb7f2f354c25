"""Analytical TTFT / throughput / cost projections over a tier hierarchy.

The model is per block access. An access served from Tier 0 costs nothing
extra; one served from tier k stalls for that tier's transfer time (less the
share hidden by prefetch); a miss stalls for a full prefill recompute.
Throughput scales with batch size and inversely with compute-plus-stall
time per access, capped at a saturation throughput. TTFT and TBT are affine
in the stall, anchored on a GPU-only baseline. Cost is GPU-hours per
million tokens plus tier occupancy, times a calibration factor.

The free constants (hit fractions per configuration, fetches on the TTFT
critical path, the cost factor, saturation points) are fitted once by
``fit_calibration`` against published rows and shipped frozen in
``data/calibration.json``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Optional, Sequence

from scipy.optimize import minimize_scalar

from .core import NUM_TIERS, ArchitectureKind, block_tokens_for_arch
from .sizing import DEFAULT_BUDGET, GB, PRESETS, ModelConfig, SizingBudget, infer_architecture, max_batch_size, \
    sequence_kv_bytes
from .tiers import DEFAULT_TIERS, TierSpec, ValueScoreParams, transfer_ns

CALIBRATION_VERSION = 1


class Component(str, enum.Enum):
    SIZING = "sizing"
    BAYESIAN = "bayesian"
    MULTITIER = "multitier"
    HEAD_EVICTION = "head_eviction"
    DEDUP = "dedup"
    ROPE = "rope"


@dataclass(frozen=True)
class BaselineAnchor:
    """Published GPU-only operating point the projections are relative to."""

    ttft_p50_s: float
    ttft_p99_s: float
    tbt_p99_s: float
    throughput: float
    batch_size: int
    tier0_hit_fraction: float

    def __post_init__(self):
        if min(self.ttft_p50_s, self.ttft_p99_s, self.tbt_p99_s, self.throughput) <= 0 or self.batch_size <= 0:
            raise ValueError("baseline anchor values must be positive")
        if not 0.0 <= self.tier0_hit_fraction <= 1.0:
            raise ValueError("tier0_hit_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class StallModel:
    compute_s_per_access: float
    recompute_s_per_block: float
    block_bytes: int
    fetches_p50: float  # synchronous fetches on the TTFT critical path
    fetches_p99: float
    fetches_per_token_p99: float  # same, for one decode step
    prefetch_hidden: float = 0.0  # share of lower-tier transfer time overlapped with compute

    def __post_init__(self):
        if self.compute_s_per_access <= 0 or self.recompute_s_per_block <= 0 or self.block_bytes <= 0:
            raise ValueError("stall model constants must be positive")
        if min(self.fetches_p50, self.fetches_p99, self.fetches_per_token_p99) < 0:
            raise ValueError("fetch counts must be non-negative")
        if not 0.0 <= self.prefetch_hidden < 1.0:
            raise ValueError("prefetch_hidden must lie in [0, 1)")


@dataclass(frozen=True)
class ProjectionInputs:
    model: ModelConfig
    tiers: tuple[TierSpec, ...]  # enabled tiers only
    hit_fractions: tuple[float, ...]  # per tier index; remainder is recompute
    batch_size: int
    baseline: BaselineAnchor
    stall: StallModel
    gpu_hour_cost: float = 2.0
    saturation_throughput: float = math.inf
    saturation_batch: float = math.inf  # batch at which scaling is half of linear
    cost_calibration: float = 1.0
    residency_hours: float = 1.0 / 60.0  # how long a token's KV stays resident in a lower tier
    lru_hit_fractions: Optional[tuple[float, ...]] = None  # fallback when the predictor is removed
    eviction_hit_gain: float = 0.0  # Tier 0 hit share owed to head-granular eviction
    dedup_savings: float = 0.0  # capacity share reclaimed by deduplication
    fallback_batch_size: Optional[int] = None  # batch under MHA-equivalent sizing

    def __post_init__(self):
        if not self.tiers:
            raise ValueError("at least one tier must be enabled")
        for name in ("hit_fractions", "lru_hit_fractions"):
            fr = getattr(self, name)
            if fr is None:
                continue
            if len(fr) != NUM_TIERS:
                raise ValueError(f"{name} needs {NUM_TIERS} entries")
            if any(f < 0 for f in fr) or sum(fr) > 1.0 + 1e-9:
                raise ValueError(f"{name} must be non-negative and sum to at most 1")
            enabled = {t.tier_index for t in self.tiers}
            if any(f > 0 and k not in enabled for k, f in enumerate(fr)):
                raise ValueError(f"{name} puts hits on a disabled tier")
        if min(self.batch_size, self.gpu_hour_cost, self.saturation_throughput, self.saturation_batch) <= 0:
            raise ValueError("batch size, GPU cost and saturation must be positive")
        if self.cost_calibration <= 0 or self.residency_hours < 0:
            raise ValueError("cost calibration must be positive and residency non-negative")
        if not 0.0 <= self.eviction_hit_gain <= self.hit_fractions[0]:
            raise ValueError("eviction_hit_gain must lie in [0, Tier 0 hit fraction]")
        if not 0.0 <= self.dedup_savings < 1.0:
            raise ValueError("dedup_savings must lie in [0, 1)")

    @property
    def miss_fraction(self) -> float:
        return max(0.0, 1.0 - sum(self.hit_fractions))


def project_capacity(tiers: Sequence[TierSpec]) -> float:
    """Total bytes across enabled tiers; infinite when an unbounded tier is present."""
    if not tiers:
        raise ValueError("at least one tier must be enabled")
    if any(t.capacity_bytes is None for t in tiers):
        return math.inf
    return float(sum(t.capacity_bytes for t in tiers))


def _fetch_s(tiers: Sequence[TierSpec], stall: StallModel) -> dict[int, float]:
    return {t.tier_index: transfer_ns(t, stall.block_bytes) * 1e-9 for t in tiers}


def access_stall_s(fractions: Sequence[float], tiers: Sequence[TierSpec], stall: StallModel,
                   prefetch_hidden: Optional[float] = None) -> float:
    """Expected stall per block access."""
    hidden = stall.prefetch_hidden if prefetch_hidden is None else prefetch_hidden
    fetch = _fetch_s(tiers, stall)
    s = sum(f * fetch[k] * (1.0 - hidden) for k, f in enumerate(fractions) if k > 0 and f > 0)
    return s + max(0.0, 1.0 - sum(fractions)) * stall.recompute_s_per_block


def baseline_stall_s(inputs: ProjectionInputs) -> float:
    return (1.0 - inputs.baseline.tier0_hit_fraction) * inputs.stall.recompute_s_per_block


def _stall(inputs: ProjectionInputs) -> float:
    return access_stall_s(inputs.hit_fractions, inputs.tiers, inputs.stall)


def effective_batch(batch: float, saturation_batch: float) -> float:
    """Linear for small batches, flattening as the GPU nears compute saturation."""
    return batch if math.isinf(saturation_batch) else batch / (1.0 + batch / saturation_batch)


def project_throughput(inputs: ProjectionInputs) -> float:
    """Tokens/s/GPU: baseline x batch ratio x service-time ratio, capped at saturation."""
    c = inputs.stall.compute_s_per_access
    service_ratio = (c + baseline_stall_s(inputs)) / (c + _stall(inputs))
    batch_ratio = (effective_batch(inputs.batch_size, inputs.saturation_batch)
                   / effective_batch(inputs.baseline.batch_size, inputs.saturation_batch))
    return min(inputs.saturation_throughput, inputs.baseline.throughput * batch_ratio * service_ratio)


def project_ttft(inputs: ProjectionInputs) -> tuple[float, float]:
    """(P50, P99) seconds: prefill compute plus the synchronous fetch stalls at each quantile."""
    base = baseline_stall_s(inputs)
    s = _stall(inputs)
    out = []
    for anchor, n in ((inputs.baseline.ttft_p50_s, inputs.stall.fetches_p50),
                      (inputs.baseline.ttft_p99_s, inputs.stall.fetches_p99)):
        prefill = anchor - n * base
        out.append(prefill + n * s)
    return out[0], out[1]


def project_tbt(inputs: ProjectionInputs) -> float:
    n = inputs.stall.fetches_per_token_p99
    return inputs.baseline.tbt_p99_s - n * baseline_stall_s(inputs) + n * _stall(inputs)


def project_cost(inputs: ProjectionInputs, throughput: float) -> float:
    """Dollars per million tokens."""
    if throughput <= 0:
        raise ValueError("throughput must be positive")
    gpu = inputs.gpu_hour_cost / (throughput * 3600.0) * 1e6
    gb_per_token = sequence_kv_bytes(inputs.model, 1) / GB
    cost_rate = {t.tier_index: t.cost_dollars_per_gb_hour for t in inputs.tiers}
    occupancy = sum(
        f * gb_per_token * 1e6 * inputs.residency_hours * cost_rate[k]
        for k, f in enumerate(inputs.hit_fractions) if k > 0 and f > 0
    )
    return inputs.cost_calibration * (gpu + occupancy)


# -- ablation -------------------------------------------------------------------


def _scale_hits(fractions: Sequence[float], factor: float, start: int = 0) -> tuple[float, ...]:
    return tuple(f * factor if k >= start else f for k, f in enumerate(fractions))


def without(inputs: ProjectionInputs, component: Component) -> ProjectionInputs:
    """Inputs with one component reverted to its fallback behavior."""
    component = Component(component)
    if component == Component.SIZING:
        if inputs.fallback_batch_size is None:
            return inputs
        return replace(inputs, batch_size=inputs.fallback_batch_size)
    if component == Component.BAYESIAN:
        if inputs.lru_hit_fractions is None:
            return inputs
        return replace(inputs, hit_fractions=inputs.lru_hit_fractions, lru_hit_fractions=None,
                       eviction_hit_gain=min(inputs.eviction_hit_gain, inputs.lru_hit_fractions[0]))
    if component == Component.MULTITIER:
        tier0 = tuple(t for t in inputs.tiers if t.tier_index == 0) or inputs.tiers[:1]
        keep = {t.tier_index for t in tier0}
        fr = tuple(f if k in keep else 0.0 for k, f in enumerate(inputs.hit_fractions))
        lru = inputs.lru_hit_fractions
        if lru is not None:
            lru = tuple(f if k in keep else 0.0 for k, f in enumerate(lru))
        return replace(inputs, tiers=tier0, hit_fractions=fr, lru_hit_fractions=lru)
    if component == Component.HEAD_EVICTION:
        fr = list(inputs.hit_fractions)
        fr[0] -= inputs.eviction_hit_gain
        return replace(inputs, hit_fractions=tuple(fr), eviction_hit_gain=0.0)
    if component == Component.DEDUP:
        if inputs.dedup_savings == 0:
            return inputs
        # Without dedup, duplicate copies take the lower-tier room that held reusable blocks.
        return replace(inputs, hit_fractions=_scale_hits(inputs.hit_fractions, 1.0 - inputs.dedup_savings, 1),
                       dedup_savings=0.0)
    if component == Component.ROPE:
        return replace(inputs, stall=replace(inputs.stall, prefetch_hidden=0.0))
    raise AssertionError(component)


def ablation(inputs: ProjectionInputs, component: Component) -> float:
    """Throughput change (percent, negative is a loss) from removing ``component``."""
    full = project_throughput(inputs)
    return 100.0 * (project_throughput(without(inputs, component)) - full) / full


# -- calibration ----------------------------------------------------------------

TIER_ROW_LABELS = ("GPU-only", "+ CPU DRAM", "+ CXL 3.0", "+ NVMe (GDS)", "+ RDMA Pool", "Full system")


@dataclass(frozen=True)
class TierRowTarget:
    label: str
    tiers_enabled: int  # tiers 0..n-1
    ttft_p99_s: float
    throughput: float


@dataclass(frozen=True)
class SystemRow:
    system: str
    ttft_p50_s: float
    ttft_p99_s: float
    tbt_p99_s: float
    throughput: float
    cost_per_mtok: float


@dataclass(frozen=True)
class AblationScenario:
    name: str
    model: str
    workload: str
    batch_size: int
    fallback_batch_size: int
    sizing_target_pct: Optional[float] = None


@dataclass(frozen=True)
class CalibrationTargets:
    """Published operating points the calibration is fitted against (input data, never computed)."""

    tier_rows: tuple[TierRowTarget, ...]
    baselines: tuple[SystemRow, ...]  # first entry is the GPU-only anchor system
    ours: SystemRow
    workload_hit_rates: dict[str, tuple[float, float]]  # workload -> (LRU, Bayesian) Tier 0+1 hit rate
    scenarios: tuple[AblationScenario, ...]
    # Chosen (not fitted) constants.
    tier0_hit_fraction: float = 0.5
    compute_s_per_access: float = 0.004
    prefetch_hidden: float = 0.25
    residency_hours: float = 1.0 / 60.0
    gpu_hour_cost: float = 2.0
    eviction_hit_gain: float = 0.02
    dedup_savings: float = 0.232
    model: str = "Llama-3-70B"


@dataclass(frozen=True)
class Calibration:
    version: int
    targets: CalibrationTargets
    row_fractions: tuple[tuple[float, ...], ...]  # one per tier row
    stall: StallModel
    cost_calibration: float
    scenario_saturation: dict[str, Optional[float]]  # scenario -> half-saturation batch; None is linear

    # -- builders ----------------------------------------------------------

    @property
    def anchor(self) -> BaselineAnchor:
        b = self.targets.baselines[0]
        return BaselineAnchor(b.ttft_p50_s, b.ttft_p99_s, b.tbt_p99_s, b.throughput,
                              _anchor_batch(self.targets), self.targets.tier0_hit_fraction)

    def inputs_for_row(self, row: int) -> ProjectionInputs:
        t = self.targets
        n = t.tier_rows[row].tiers_enabled
        return ProjectionInputs(
            model=PRESETS[t.model],
            tiers=DEFAULT_TIERS[:n],
            hit_fractions=self.row_fractions[row],
            batch_size=_anchor_batch(t),
            baseline=self.anchor,
            stall=self.stall,
            gpu_hour_cost=t.gpu_hour_cost,
            cost_calibration=self.cost_calibration,
            residency_hours=t.residency_hours,
        )

    def full_system(self) -> ProjectionInputs:
        return self.inputs_for_row(len(self.row_fractions) - 1)

    def scenario_inputs(self, name: str) -> ProjectionInputs:
        t = self.targets
        sc = next((s for s in t.scenarios if s.name == name), None)
        if sc is None:
            raise KeyError(f"unknown ablation scenario {name!r}")
        return workload_inputs(self, sc.workload, batch_size=sc.batch_size,
                               fallback_batch_size=sc.fallback_batch_size,
                               saturation_batch=self.scenario_saturation.get(name))

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        t = self.targets
        return {
            "version": self.version,
            "targets": {
                "tier_rows": [asdict(r) for r in t.tier_rows],
                "baselines": [asdict(r) for r in t.baselines],
                "ours": asdict(t.ours),
                "workload_hit_rates": {k: list(v) for k, v in sorted(t.workload_hit_rates.items())},
                "scenarios": [asdict(s) for s in t.scenarios],
                "tier0_hit_fraction": t.tier0_hit_fraction,
                "compute_s_per_access": t.compute_s_per_access,
                "prefetch_hidden": t.prefetch_hidden,
                "residency_hours": t.residency_hours,
                "gpu_hour_cost": t.gpu_hour_cost,
                "eviction_hit_gain": t.eviction_hit_gain,
                "dedup_savings": t.dedup_savings,
                "model": t.model,
            },
            "fitted": {
                "row_fractions": [list(r) for r in self.row_fractions],
                "stall": asdict(self.stall),
                "cost_calibration": self.cost_calibration,
                "scenario_saturation": dict(sorted(self.scenario_saturation.items())),
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, doc: dict) -> "Calibration":
        if doc.get("version") != CALIBRATION_VERSION:
            raise ValueError(f"calibration version {doc.get('version')} unsupported")
        td = doc["targets"]
        targets = CalibrationTargets(
            tier_rows=tuple(TierRowTarget(**r) for r in td["tier_rows"]),
            baselines=tuple(SystemRow(**r) for r in td["baselines"]),
            ours=SystemRow(**td["ours"]),
            workload_hit_rates={k: (float(v[0]), float(v[1])) for k, v in td["workload_hit_rates"].items()},
            scenarios=tuple(AblationScenario(**s) for s in td["scenarios"]),
            **{k: td[k] for k in ("tier0_hit_fraction", "compute_s_per_access", "prefetch_hidden",
                                  "residency_hours", "gpu_hour_cost", "eviction_hit_gain", "dedup_savings",
                                  "model")},
        )
        fd = doc["fitted"]
        return cls(
            version=CALIBRATION_VERSION,
            targets=targets,
            row_fractions=tuple(tuple(float(x) for x in r) for r in fd["row_fractions"]),
            stall=StallModel(**fd["stall"]),
            cost_calibration=float(fd["cost_calibration"]),
            scenario_saturation={k: (None if v is None else float(v)) for k, v in fd["scenario_saturation"].items()},
        )

    @classmethod
    def load(cls, path=None) -> "Calibration":
        if path is None:
            text = resources.files("kvtier").joinpath("data/calibration.json").read_text()
        else:
            with open(path) as fh:
                text = fh.read()
        return cls.from_json(json.loads(text))


def _anchor_batch(t: CalibrationTargets) -> int:
    return max_batch_size(PRESETS[t.model], DEFAULT_BUDGET)


def workload_inputs(calib: Calibration, workload: str, batch_size: Optional[int] = None,
                    fallback_batch_size: Optional[int] = None,
                    saturation_batch: Optional[float] = None) -> ProjectionInputs:
    """Full-system inputs for a workload; the LRU fallback scales hits by the measured LRU/Bayesian ratio."""
    t = calib.targets
    if workload not in t.workload_hit_rates:
        raise KeyError(f"no hit rates for workload {workload!r}")
    lru, bayes = t.workload_hit_rates[workload]
    return inputs_from_rates(calib, lru, bayes, batch_size=batch_size, fallback_batch_size=fallback_batch_size,
                             saturation_batch=saturation_batch)


def inputs_from_rates(calib: Calibration, lru_rate: float, bayes_rate: float, batch_size: Optional[int] = None,
                      fallback_batch_size: Optional[int] = None,
                      saturation_batch: Optional[float] = None) -> ProjectionInputs:
    if not 0 < bayes_rate <= 1 or not 0 <= lru_rate <= 1:
        raise ValueError("hit rates must lie in [0, 1] with a positive Bayesian rate")
    base = calib.full_system()
    t = calib.targets
    ratio = min(1.0, lru_rate / bayes_rate)
    return replace(
        base,
        batch_size=batch_size or base.batch_size,
        fallback_batch_size=fallback_batch_size,
        saturation_batch=saturation_batch if saturation_batch is not None else math.inf,
        lru_hit_fractions=_scale_hits(base.hit_fractions, ratio),
        eviction_hit_gain=t.eviction_hit_gain,
        dedup_savings=t.dedup_savings,
    )


def sizing_fallback_batch(cfg: ModelConfig, budget: SizingBudget = DEFAULT_BUDGET) -> int:
    """Batch size when the model is sized as MHA.

    MLA models fall back to the MHA default (sharded under TP). Models whose
    preset keeps KV replicated stay replicated, so only the head count changes.
    """
    replicated = infer_architecture(cfg) != ArchitectureKind.MLA and not cfg.shards_kv
    return max_batch_size(cfg.mha_equivalent(False if replicated else None), budget)


def fit_calibration(targets: CalibrationTargets) -> Calibration:
    """Invert the model against the published rows.

    1. Each tier row's throughput fixes its expected stall; the newly added
       tier's hit fraction is the miss share it must absorb to get there.
    2. P99 critical-path fetches minimize the worst relative TTFT error over
       the tier rows; P50 fetches and per-token fetches match the end-to-end row.
    3. The cost factor matches the GPU-only system's published cost.
    4. Each scenario's half-saturation batch matches its published sizing
       ablation; a scenario without a target, or whose raw batch ratio
       already lands within a point of it, scales linearly.
    """
    model = PRESETS[targets.model]
    arch = infer_architecture(model)
    block_tokens = block_tokens_for_arch(arch)
    value = ValueScoreParams()
    anchor_row = targets.baselines[0]
    stall = StallModel(
        compute_s_per_access=targets.compute_s_per_access,
        recompute_s_per_block=block_tokens * value.recompute_cost_per_token_ns * 1e-9,
        block_bytes=sequence_kv_bytes(model, block_tokens),
        fetches_p50=0.0, fetches_p99=0.0, fetches_per_token_p99=0.0,
        prefetch_hidden=targets.prefetch_hidden,
    )
    rows = targets.tier_rows
    if rows[0].tiers_enabled != 1 or rows[0].throughput != anchor_row.throughput:
        raise ValueError("the first tier row must be the GPU-only anchor")
    c = stall.compute_s_per_access
    f0 = targets.tier0_hit_fraction
    base_stall = (1.0 - f0) * stall.recompute_s_per_block
    fetch = _fetch_s(DEFAULT_TIERS, stall)

    fractions = [f0] + [0.0] * (NUM_TIERS - 1)
    row_fractions = [tuple(fractions)]
    stalls = [base_stall]
    for prev, row in zip(rows, rows[1:]):
        k = row.tiers_enabled - 1
        if k != prev.tiers_enabled:
            raise ValueError("tier rows must add one tier at a time")
        target = (c + base_stall) * anchor_row.throughput / row.throughput - c
        gain = stall.recompute_s_per_block - fetch[k] * (1.0 - stall.prefetch_hidden)
        x = (stalls[-1] - target) / gain
        if x < 0 or sum(fractions) + x > 1.0:
            raise ValueError(f"row {row.label!r} is infeasible under this model")
        fractions[k] = x
        row_fractions.append(tuple(fractions))
        stalls.append(target)

    def worst_p99(n: float) -> float:
        prefill = anchor_row.ttft_p99_s - n * base_stall
        return max(abs(prefill + n * s - r.ttft_p99_s) / r.ttft_p99_s for s, r in zip(stalls[1:], rows[1:]))

    limit = anchor_row.ttft_p99_s / base_stall
    fetches_p99 = float(minimize_scalar(worst_p99, bounds=(0.0, limit), method="bounded",
                                        options={"xatol": 1e-9}).x)
    ours = targets.ours
    drop = base_stall - stalls[-1]
    stall = replace(
        stall,
        fetches_p99=fetches_p99,
        fetches_p50=(anchor_row.ttft_p50_s - ours.ttft_p50_s) / drop,
        fetches_per_token_p99=(anchor_row.tbt_p99_s - ours.tbt_p99_s) / drop,
    )
    cost_calibration = anchor_row.cost_per_mtok / (targets.gpu_hour_cost / (anchor_row.throughput * 3600.0) * 1e6)

    saturation: dict[str, Optional[float]] = {}
    for sc in targets.scenarios:
        q = sc.fallback_batch_size / sc.batch_size
        if sc.sizing_target_pct is None or abs(100.0 * (q - 1.0) - sc.sizing_target_pct) <= 1.0:
            saturation[sc.name] = None
            continue
        # r = q (S + b) / (S + b_f) solved for S
        r = 1.0 + sc.sizing_target_pct / 100.0
        if r <= q:
            raise ValueError(f"scenario {sc.name!r}: target is steeper than the raw batch collapse")
        saturation[sc.name] = (q * sc.batch_size - r * sc.fallback_batch_size) / (r - q)
    return Calibration(CALIBRATION_VERSION, targets, tuple(row_fractions), stall, cost_calibration, saturation)


# -- reports ----------------------------------------------------------------------


@dataclass(frozen=True)
class TierRow:
    label: str
    capacity_bytes: float
    ttft_p99_s: float
    throughput: float


@dataclass
class ProjectionReport:
    tier_rows: list[TierRow]
    systems: list[SystemRow]  # published baselines followed by the projected row
    ablations: dict[str, dict[str, float]] = field(default_factory=dict)  # component -> scenario -> pct

    def to_json(self) -> dict:
        return {
            "tier_rows": [
                {"configuration": r.label,
                 "capacity_bytes": None if math.isinf(r.capacity_bytes) else int(r.capacity_bytes),
                 "ttft_p99_s": round(r.ttft_p99_s, 6), "throughput": round(r.throughput, 3)}
                for r in self.tier_rows
            ],
            "systems": [{k: (round(v, 6) if isinstance(v, float) else v) for k, v in asdict(s).items()}
                        for s in self.systems],
            "ablations": {c: {s: round(v, 4) for s, v in row.items()} for c, row in self.ablations.items()},
        }


def project_report(calib: Calibration) -> ProjectionReport:
    tier_rows = []
    for i, target in enumerate(calib.targets.tier_rows):
        inp = calib.inputs_for_row(i)
        tier_rows.append(TierRow(target.label, project_capacity(inp.tiers), project_ttft(inp)[1],
                                 project_throughput(inp)))
    full = calib.full_system()
    tput = project_throughput(full)
    p50, p99 = project_ttft(full)
    ours = SystemRow(calib.targets.ours.system, p50, p99, project_tbt(full), tput, project_cost(full, tput))
    ablations: dict[str, dict[str, float]] = {}
    for comp in Component:
        ablations[comp.value] = {sc.name: ablation(calib.scenario_inputs(sc.name), comp)
                                 for sc in calib.targets.scenarios}
    return ProjectionReport(tier_rows, list(calib.targets.baselines) + [ours], ablations)


def _capacity_text(b: float) -> str:
    if math.isinf(b):
        return "unbounded"
    if b >= 1000 * GB:
        return f"{b / (1000 * GB):g} TB"
    return f"{b / GB:g} GB"


def format_report(report: ProjectionReport, fmt: str = "table") -> str:
    if fmt == "json":
        return json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        lines = ["section,name,capacity_bytes,ttft_p50_s,ttft_p99_s,tbt_p99_s,throughput,cost_per_mtok"]
        for r in report.tier_rows:
            cap = "" if math.isinf(r.capacity_bytes) else str(int(r.capacity_bytes))
            lines.append(f"tiers,{r.label},{cap},,{r.ttft_p99_s:.6f},,{r.throughput:.3f},")
        for s in report.systems:
            lines.append(f"systems,{s.system},,{s.ttft_p50_s:.6f},{s.ttft_p99_s:.6f},{s.tbt_p99_s:.6f},"
                         f"{s.throughput:.3f},{s.cost_per_mtok:.6f}")
        lines.append("ablation,component,scenario,delta_pct")
        for comp, row in report.ablations.items():
            for sc, v in row.items():
                lines.append(f"ablation,{comp},{sc},{v:.4f}")
        return "\n".join(lines) + "\n"
    if fmt != "table":
        raise ValueError(f"unknown format {fmt!r}")
    out = ["Configuration     Capacity   TTFT P99   Tput (tok/s/GPU)"]
    for r in report.tier_rows:
        out.append(f"{r.label:<16}  {_capacity_text(r.capacity_bytes):>9}  {r.ttft_p99_s:7.2f} s  {r.throughput:16,.0f}")
    out.append("")
    out.append("System                 TTFT P50  TTFT P99  TBT P99  Tput (tok/s/GPU)  Cost ($/Mtok)")
    for s in report.systems:
        out.append(f"{s.system:<21}  {s.ttft_p50_s:6.2f} s  {s.ttft_p99_s:6.2f} s  {1000 * s.tbt_p99_s:4.0f} ms"
                   f"  {s.throughput:16,.0f}  {s.cost_per_mtok:13.2f}")
    if report.ablations:
        scenarios = list(next(iter(report.ablations.values())).keys())
        out.append("")
        out.append("Component removed  " + "  ".join(f"{s:>10}" for s in scenarios))
        for comp, row in report.ablations.items():
            out.append(f"{comp:<17}  " + "  ".join(f"{row[s]:9.1f}%" for s in scenarios))
    return "\n".join(out) + "\n"
