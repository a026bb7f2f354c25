"""Shared domain vocabulary: block and transition taxonomies, block metadata,
simulated time and trace access events."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

# Simulated time is integer nanoseconds since simulation start.
SimTime = int

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000

NUM_TIERS = 6


class BlockType(str, Enum):
    SYSTEM_PROMPT = "system_prompt"
    TOOL_CONTEXT = "tool_context"
    USER_CONTEXT = "user_context"
    INTERMEDIATE_REASONING = "intermediate_reasoning"


class TransitionType(str, Enum):
    SAME_TOOL_REPEAT = "same_tool_repeat"
    TOOL_SWITCH = "tool_switch"
    REASONING_STEP = "reasoning_step"
    AGENT_HANDOFF = "agent_handoff"


class EventKind(str, Enum):
    REQUEST_START = "request_start"
    BLOCK_ACCESS = "block_access"
    TOOL_CALL = "tool_call"
    REQUEST_END = "request_end"


class ArchitectureKind(str, Enum):
    MHA = "MHA"
    GQA = "GQA"
    MQA = "MQA"
    MLA = "MLA"


def reuse_keys() -> list[tuple[BlockType, TransitionType]]:
    """All 16 (block type, transition type) pairs in a fixed order."""
    return list(itertools.product(BlockType, TransitionType))


_BLOCK_TOKENS = {
    ArchitectureKind.MLA: 512,
    ArchitectureKind.GQA: 128,
    ArchitectureKind.MQA: 128,
    ArchitectureKind.MHA: 64,
}


def block_tokens_for_arch(arch: ArchitectureKind) -> int:
    """Tokens per cache block for an attention architecture."""
    return _BLOCK_TOKENS[ArchitectureKind(arch)]


@dataclass(frozen=True)
class BlockMeta:
    """Metadata for one KV-cache block. Carries sizes and hashes, never tensors.

    An empty ``layer_set`` means the block covers every layer of the model
    (whole-stack granularity, the trace default).
    """

    block_id: int
    session_id: str
    block_type: BlockType
    token_span: tuple[int, int]
    size_bytes: int
    content_hash: bytes = b""
    layer_set: frozenset[int] = field(default_factory=frozenset)
    ref_count: int = 0
    last_access: SimTime = 0
    resident_tier: Optional[int] = None

    def __post_init__(self):
        start, end = self.token_span
        if end <= start:
            raise ValueError(f"block {self.block_id}: empty token span {self.token_span}")
        if self.size_bytes <= 0:
            raise ValueError(f"block {self.block_id}: size_bytes must be positive")
        if self.ref_count < 0:
            raise ValueError(f"block {self.block_id}: negative ref_count")
        if self.resident_tier is not None and not 0 <= self.resident_tier < NUM_TIERS:
            raise ValueError(f"block {self.block_id}: bad tier {self.resident_tier}")

    @property
    def num_tokens(self) -> int:
        return self.token_span[1] - self.token_span[0]

    @property
    def midpoint(self) -> float:
        return (self.token_span[0] + self.token_span[1]) / 2.0

    def layers(self, num_layers: int) -> frozenset[int]:
        return self.layer_set or frozenset(range(num_layers))


@dataclass(frozen=True)
class AccessEvent:
    """One record of a replayable trace.

    Block fields are only meaningful for ``block_access`` events; ``tool_name``
    is present exactly for ``tool_call`` events.
    """

    time: SimTime
    session_id: str
    kind: EventKind
    block_id: Optional[int] = None
    block_type: Optional[BlockType] = None
    transition_type: Optional[TransitionType] = None
    position: int = 0
    size_bytes: int = 0
    tool_name: Optional[str] = None
    content_seed: Optional[int] = None
    token_start: Optional[int] = None
    token_end: Optional[int] = None

    def __post_init__(self):
        if self.time < 0:
            raise ValueError("event time must be non-negative")
        if (self.kind == EventKind.TOOL_CALL) != (self.tool_name is not None):
            raise ValueError("tool_name must be present exactly for tool_call events")
        if self.kind == EventKind.BLOCK_ACCESS:
            if self.block_id is None or self.block_type is None or self.transition_type is None:
                raise ValueError("block_access requires block_id, block_type and transition_type")
            if self.size_bytes <= 0:
                raise ValueError("block_access requires positive size_bytes")

    @property
    def token_span(self) -> tuple[int, int]:
        if self.token_start is not None and self.token_end is not None:
            return (self.token_start, self.token_end)
        return (self.position, self.position + 1)
