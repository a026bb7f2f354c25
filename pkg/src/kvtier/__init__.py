"""Tiered KV-cache management: architecture-aware sizing, a six-tier hierarchy,
Bayesian reuse prediction, trace replay and analytical projections."""

from .core import AccessEvent, ArchitectureKind, BlockMeta, BlockType, EventKind, TransitionType
from .replay import PolicyKind, ReplayConfig, ReplayMetrics, compare_policies, replay
from .sizing import PRESETS, ModelConfig, SizingBudget, bytes_per_token_layer, max_batch_size
from .traces import WorkloadSpec, generate

__version__ = "0.1.0"

__all__ = [
    "AccessEvent", "ArchitectureKind", "BlockMeta", "BlockType", "EventKind", "TransitionType",
    "PolicyKind", "ReplayConfig", "ReplayMetrics", "compare_policies", "replay",
    "PRESETS", "ModelConfig", "SizingBudget", "bytes_per_token_layer", "max_batch_size",
    "WorkloadSpec", "generate",
]
