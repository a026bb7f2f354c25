"""Tool-transition model for agentic sessions.

A first-order Markov chain predicts the next tool; per-tool EMA memory
profiles size the reservation made ahead of a switch; sessions are bucketed
into demand classes by aggregate peak bytes.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import BlockType, TransitionType

GB = 10**9


class SessionClass(enum.IntEnum):
    LIGHT = 0
    MEDIUM = 1
    HEAVY = 2
    EXTREME = 3


DEFAULT_CLASS_THRESHOLDS = (1 * GB, 4 * GB, 16 * GB)


def classify_session(aggregate_peak_bytes: float, thresholds: Sequence[float] = DEFAULT_CLASS_THRESHOLDS) -> SessionClass:
    t1, t2, t3 = thresholds
    if not t1 < t2 < t3:
        raise ValueError("class thresholds must be strictly increasing")
    if aggregate_peak_bytes < t1:
        return SessionClass.LIGHT
    if aggregate_peak_bytes < t2:
        return SessionClass.MEDIUM
    if aggregate_peak_bytes < t3:
        return SessionClass.HEAVY
    return SessionClass.EXTREME


class ToolChain:
    """Transition counts between tools with add-k smoothing on prediction."""

    def __init__(self, smoothing: float = 1.0):
        if smoothing <= 0:
            raise ValueError("smoothing must be positive")
        self.smoothing = smoothing
        self.tools: list[str] = []
        self._index: dict[str, int] = {}
        self.counts = np.zeros((0, 0), dtype=np.int64)

    def intern(self, tool: str) -> int:
        idx = self._index.get(tool)
        if idx is None:
            idx = len(self.tools)
            self.tools.append(tool)
            self._index[tool] = idx
            grown = np.zeros((idx + 1, idx + 1), dtype=np.int64)
            grown[:idx, :idx] = self.counts
            self.counts = grown
        return idx

    def observe_transition(self, from_tool: str, to_tool: str) -> None:
        i = self.intern(from_tool)
        j = self.intern(to_tool)
        self.counts[i, j] += 1

    def distribution(self, current_tool: Optional[str]) -> np.ndarray:
        n = len(self.tools)
        if n == 0:
            return np.zeros(0)
        i = self._index.get(current_tool) if current_tool is not None else None
        if i is None:
            return np.full(n, 1.0 / n)
        row = self.counts[i].astype(float)
        k = self.smoothing
        return (row + k) / (row.sum() + n * k)

    def predict_next(self, current_tool: Optional[str]) -> list[tuple[str, float]]:
        """(tool, probability) pairs, most likely first; ties by tool name."""
        probs = self.distribution(current_tool)
        ranked = sorted(zip(self.tools, probs.tolist()), key=lambda tp: (-tp[1], tp[0]))
        return ranked

    def probability(self, from_tool: str, to_tool: str) -> float:
        probs = self.distribution(from_tool)
        j = self._index.get(to_tool)
        return float(probs[j]) if j is not None else 0.0

    def to_json(self) -> dict:
        return {
            "smoothing": self.smoothing,
            "tools": list(self.tools),
            "edges": [
                {"from": self.tools[i], "to": self.tools[j], "count": int(self.counts[i, j])}
                for i, j in zip(*np.nonzero(self.counts))
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, doc: dict) -> "ToolChain":
        chain = cls(float(doc.get("smoothing", 1.0)))
        for tool in doc["tools"]:
            chain.intern(tool)
        for edge in doc["edges"]:
            chain.counts[chain.intern(edge["from"]), chain.intern(edge["to"])] = int(edge["count"])
        return chain


@dataclass
class ToolProfile:
    mean: float
    variance: float
    peak: float
    samples: int = 1

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


@dataclass
class ToolMemoryProfiles:
    decay: float = 0.5  # weight kept on the running estimate per observation
    profiles: dict[str, ToolProfile] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")

    def update(self, tool: str, observed_bytes: float) -> ToolProfile:
        if observed_bytes < 0:
            raise ValueError("observed_bytes must be non-negative")
        prof = self.profiles.get(tool)
        if prof is None:
            prof = self.profiles[tool] = ToolProfile(float(observed_bytes), 0.0, float(observed_bytes))
            return prof
        lam = self.decay
        diff = observed_bytes - prof.mean
        prof.mean = lam * prof.mean + (1.0 - lam) * observed_bytes
        prof.variance = lam * (prof.variance + (1.0 - lam) * diff * diff)
        prof.peak = max(prof.peak, float(observed_bytes))
        prof.samples += 1
        return prof

    def predict_memory(self, tool: str) -> tuple[float, float]:
        """(mean, peak) for ``tool``; the cross-tool average for unseen tools."""
        prof = self.profiles.get(tool)
        if prof is not None:
            return prof.mean, prof.peak
        g = self.global_profile()
        return (g.mean, g.peak) if g is not None else (0.0, 0.0)

    def global_profile(self) -> Optional[ToolProfile]:
        if not self.profiles:
            return None
        profs = list(self.profiles.values())
        return ToolProfile(
            mean=float(np.mean([p.mean for p in profs])),
            variance=float(np.mean([p.variance for p in profs])),
            peak=max(p.peak for p in profs),
            samples=sum(p.samples for p in profs),
        )


@dataclass(frozen=True)
class PreparationPlan:
    reserve_bytes: float
    transition_type: TransitionType
    predicted_tool: Optional[str]
    prefetch_block_types: tuple[BlockType, ...]


def transition_for(previous_tool: Optional[str], tool: str) -> TransitionType:
    if previous_tool is None:
        return TransitionType.AGENT_HANDOFF
    return TransitionType.SAME_TOOL_REPEAT if previous_tool == tool else TransitionType.TOOL_SWITCH


def on_tool_switch(
    chain: ToolChain,
    profiles: ToolMemoryProfiles,
    previous_tool: Optional[str],
    tool: str,
) -> PreparationPlan:
    """Plan for the tool just called: reservation, transition label, and the next tool to warm.

    The reservation covers the called tool's memory (mean + 1 sigma; the
    cross-tool profile if the tool is new). A repeat of the same tool needs
    no new reservation. Prefetch targets the tool_context blocks of the most
    likely successor.
    """
    transition = transition_for(previous_tool, tool)
    if transition == TransitionType.SAME_TOOL_REPEAT:
        reserve = 0.0
    else:
        prof = profiles.profiles.get(tool) or profiles.global_profile()
        reserve = prof.mean + prof.std if prof is not None else 0.0
    ranked = chain.predict_next(tool)
    predicted = ranked[0][0] if ranked else None
    return PreparationPlan(reserve, transition, predicted, (BlockType.TOOL_CONTEXT,))
