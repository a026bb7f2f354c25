"""Position-window prefetch planning.

Rotary embeddings make attention strongly local in position, so the blocks
covering the next few positions after the decode head are the likeliest to
be read next. The window is narrow for early layers and wide for late ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

from .core import BlockMeta


@dataclass(frozen=True)
class PrefetchParams:
    w_min: int = 2
    w_max: int = 8
    enabled: bool = True

    def __post_init__(self):
        if not 1 <= self.w_min <= self.w_max:
            raise ValueError("need 1 <= w_min <= w_max")


def window_for_layer(layer: int, num_layers: int, params: PrefetchParams) -> int:
    """Linear ramp from w_min (layer 0) to w_max (last layer), round-half-even."""
    if not 0 <= layer < num_layers:
        raise ValueError(f"layer {layer} outside [0, {num_layers})")
    if num_layers == 1:
        return params.w_max
    return params.w_min + round((params.w_max - params.w_min) * layer / (num_layers - 1))


def plan_prefetch(
    current_position: int,
    layer: int,
    num_layers: int,
    resident_map: Mapping[int, tuple[BlockMeta, Optional[int]]],
    params: PrefetchParams,
    block_tokens: int = 128,
) -> list[int]:
    """Block ids to promote for positions [n, n + w*block_tokens], nearest first.

    ``resident_map`` maps block_id to (meta, tier), tier None meaning absent.
    Absent and Tier-0 blocks are never planned.
    """
    if current_position < 0:
        raise ValueError("position must be non-negative")
    if not params.enabled:
        return []
    w = window_for_layer(layer, num_layers, params)
    lo, hi = current_position, current_position + w * block_tokens
    hits = [
        (meta.token_span[0], bid)
        for bid, (meta, tier) in resident_map.items()
        if tier is not None and tier > 0 and meta.token_span[0] <= hi and meta.token_span[1] > lo
    ]
    hits.sort()
    return [bid for _, bid in hits[:w]]
