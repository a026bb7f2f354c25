"""Head-granular importance tracking and eviction victim selection.

The importance matrix is indexed [layer][kv_head]. GQA query heads fold into
their KV head (max over the group within a step); MLA collapses to a single
latent head per layer.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import ArchitectureKind, BlockMeta, TransitionType
from .sizing import ModelConfig, infer_architecture


class EmptyCandidates(ValueError):
    pass


@dataclass(frozen=True)
class EvictionParams:
    ema_decay: float = 0.5
    position_decay_tau: float = 2048.0  # tokens; math.inf gives pure recency EMA

    def __post_init__(self):
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")
        if not self.position_decay_tau > 0:
            raise ValueError("position_decay_tau must be positive")

    def weight(self, distance_tokens: float) -> float:
        if math.isinf(self.position_decay_tau):
            return 1.0
        return math.exp(-abs(distance_tokens) / self.position_decay_tau)


# (start_fraction, end_fraction, multiplier) over model depth, end exclusive
# except that a band ending at 1.0 includes the last layer.
LayerBand = tuple[float, float, float]

DEFAULT_TRANSITION_MULTIPLIERS: dict[TransitionType, tuple[LayerBand, ...]] = {
    TransitionType.REASONING_STEP: (),
    TransitionType.SAME_TOOL_REPEAT: (),
    TransitionType.TOOL_SWITCH: ((1 / 3, 2 / 3, 0.8),),
    TransitionType.AGENT_HANDOFF: ((2 / 3, 1.0, 0.5),),
}


@dataclass
class ImportanceMatrix:
    num_layers: int
    query_heads: int
    kv_heads: int
    arch: ArchitectureKind
    scores: np.ndarray = field(init=False)
    multipliers: np.ndarray = field(init=False)
    missing_multiplier_entries: int = 0

    def __post_init__(self):
        if self.num_layers <= 0 or self.query_heads <= 0 or self.kv_heads <= 0:
            raise ValueError("matrix dimensions must be positive")
        if self.arch == ArchitectureKind.MLA:
            self.kv_heads = 1
        elif self.query_heads % self.kv_heads:
            raise ValueError("query_heads must be a multiple of kv_heads")
        self.scores = np.zeros((self.num_layers, self.kv_heads))
        self.multipliers = np.ones((self.num_layers, self.kv_heads))

    @classmethod
    def for_model(cls, cfg: ModelConfig) -> "ImportanceMatrix":
        return cls(cfg.num_layers, cfg.query_heads, cfg.kv_heads, infer_architecture(cfg))

    @property
    def group_size(self) -> int:
        return self.query_heads // self.kv_heads

    @property
    def head_weights(self) -> np.ndarray:
        """Per-KV-head aggregation weights: 1/h for MHA, g/h_q for GQA, 1 for MLA."""
        if self.arch == ArchitectureKind.MLA:
            return np.ones(1)
        return np.full(self.kv_heads, self.group_size / self.query_heads)

    def kv_head_of(self, query_head: int) -> int:
        if not 0 <= query_head < self.query_heads:
            raise IndexError(f"query head {query_head} out of range")
        return 0 if self.arch == ArchitectureKind.MLA else query_head // self.group_size

    def _check_layer(self, layer: int) -> None:
        if not 0 <= layer < self.num_layers:
            raise IndexError(f"layer {layer} out of range")

    def record_access(self, layer: int, query_head: int, distance_tokens: float, params: EvictionParams) -> None:
        self.record_step(layer, {query_head: distance_tokens}, params)

    def record_step(self, layer: int, distances: Mapping[int, float], params: EvictionParams) -> None:
        """One attention step at ``layer``; query heads sharing a KV head keep the max update."""
        self._check_layer(layer)
        lam = params.ema_decay
        updates: dict[int, float] = {}
        for qh, dist in distances.items():
            kv = self.kv_head_of(qh)
            new = lam * self.scores[layer, kv] + (1.0 - lam) * params.weight(dist)
            updates[kv] = max(updates.get(kv, new), new)
        for kv, value in updates.items():
            self.scores[layer, kv] = value

    def record_block_access(self, layers: Optional[Iterable[int]], distance_tokens: float, params: EvictionParams) -> None:
        """Every head of the given layers (all layers when None) attends at ``distance_tokens``.

        This is the trace-replay proxy: no attention weights exist, so each
        access updates all heads of the touched layers with the same weight.
        """
        w = params.weight(distance_tokens)
        lam = params.ema_decay
        if layers is None:
            self.scores *= lam
            self.scores += (1.0 - lam) * w
            return
        idx = np.fromiter(layers, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.num_layers):
            raise IndexError("layer index out of range")
        self.scores[idx] = lam * self.scores[idx] + (1.0 - lam) * w

    def layer_scores(self) -> np.ndarray:
        """Weighted per-layer aggregate, so block_score is a sum over its layers."""
        return (self.scores * self.multipliers) @ self.head_weights

    def block_score(self, meta: BlockMeta) -> float:
        per_layer = self.layer_scores()
        if not meta.layer_set:
            return float(per_layer.sum())
        layers = sorted(meta.layer_set)
        if layers[0] < 0 or layers[-1] >= self.num_layers:
            raise IndexError(f"block {meta.block_id} layer_set outside matrix")
        return float(per_layer[layers].sum())

    def apply_transition_multipliers(
        self,
        transition: TransitionType,
        table: Mapping[TransitionType, Sequence[LayerBand]] = DEFAULT_TRANSITION_MULTIPLIERS,
    ) -> None:
        """Replace (not compound) multipliers with the table's bands for ``transition``."""
        self.multipliers[:] = 1.0
        bands = table.get(transition)
        if bands is None:
            self.missing_multiplier_entries += 1
            return
        for start, end, mult in bands:
            if mult <= 0:
                raise ValueError("multipliers must be positive")
            lo = int(round(start * self.num_layers))
            hi = self.num_layers if end >= 1.0 else int(round(end * self.num_layers))
            self.multipliers[lo:hi] = mult

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("layer,head,score\n")
        for layer in range(self.num_layers):
            for head in range(self.kv_heads):
                buf.write(f"{layer},{head},{float(self.scores[layer, head])!r}\n")
        return buf.getvalue()


def victim_key(matrix: ImportanceMatrix, meta: BlockMeta) -> tuple[float, int, int]:
    return (matrix.block_score(meta), meta.last_access, meta.block_id)


def select_victim(matrix: ImportanceMatrix, candidates: Sequence[BlockMeta]) -> int:
    """Lowest aggregate importance; ties go to the oldest access, then smallest id."""
    if not candidates:
        raise EmptyCandidates("no eviction candidates")
    per_layer = matrix.layer_scores()
    total = float(per_layer.sum())
    by_layers: dict[frozenset, float] = {}

    def key(meta: BlockMeta):
        if not meta.layer_set:
            score = total
        else:
            score = by_layers.get(meta.layer_set)
            if score is None:
                score = by_layers[meta.layer_set] = float(per_layer[sorted(meta.layer_set)].sum())
        return (score, meta.last_access, meta.block_id)

    return min(candidates, key=key).block_id
