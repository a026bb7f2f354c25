"""Beta-Bernoulli reuse predictor over (block type, transition type) pairs.

Each of the 16 cells keeps a Beta posterior plus a sliding window of recent
outcomes. ``predict`` blends the posterior mean with the window frequency,
trusting the posterior more as its observation count grows.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from .core import BlockType, TransitionType, reuse_keys

Key = tuple[BlockType, TransitionType]


@dataclass(frozen=True)
class PredictorParams:
    alpha0: float = 1.0
    beta0: float = 1.0
    window_size: int = 1000
    confidence_halfpoint: float = 20.0

    def __post_init__(self):
        if self.alpha0 <= 0 or self.beta0 <= 0:
            raise ValueError("prior parameters must be positive")
        if not isinstance(self.window_size, int) or self.window_size <= 0:
            raise ValueError("window_size must be a positive integer")
        if self.confidence_halfpoint <= 0:
            raise ValueError("confidence_halfpoint must be positive")


@dataclass
class BetaCell:
    alpha: float
    beta: float
    observation_count: int = 0

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)


@dataclass
class _Window:
    outcomes: deque
    reuses: int = 0

    def push(self, reused: bool) -> None:
        if len(self.outcomes) == self.outcomes.maxlen:
            self.reuses -= self.outcomes[0]
        self.outcomes.append(reused)
        self.reuses += reused

    @property
    def frequency(self) -> float | None:
        return self.reuses / len(self.outcomes) if self.outcomes else None


@dataclass
class PredictorState:
    params: PredictorParams = field(default_factory=PredictorParams)
    cells: dict[Key, BetaCell] = field(init=False)
    windows: dict[Key, _Window] = field(init=False)

    def __post_init__(self):
        p = self.params
        self.cells = {k: BetaCell(p.alpha0, p.beta0) for k in reuse_keys()}
        self.windows = {k: _Window(deque(maxlen=p.window_size)) for k in reuse_keys()}

    def observe(self, b: BlockType, t: TransitionType, reused: bool) -> None:
        cell = self.cells[(b, t)]
        if reused:
            cell.alpha += 1
        else:
            cell.beta += 1
        cell.observation_count += 1
        self.windows[(b, t)].push(bool(reused))

    def observe_many(self, labels: Iterable[tuple[BlockType, TransitionType, bool]]) -> None:
        for b, t, reused in labels:
            self.observe(b, t, reused)

    def posterior_mean(self, b: BlockType, t: TransitionType) -> float:
        return self.cells[(b, t)].mean

    def confidence(self, b: BlockType, t: TransitionType) -> float:
        n = self.cells[(b, t)].observation_count
        return n / (n + self.params.confidence_halfpoint)

    def window_frequency(self, b: BlockType, t: TransitionType) -> float | None:
        return self.windows[(b, t)].frequency

    def predict(self, b: BlockType, t: TransitionType) -> float:
        cell = self.cells[(b, t)]
        mean = cell.mean
        freq = self.windows[(b, t)].frequency
        if freq is None:
            return mean
        n = cell.observation_count
        c = n / (n + self.params.confidence_halfpoint)
        return c * mean + (1.0 - c) * freq

    # -- checkpoints -------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "params": {
                "alpha0": self.params.alpha0,
                "beta0": self.params.beta0,
                "window_size": self.params.window_size,
                "confidence_halfpoint": self.params.confidence_halfpoint,
            },
            "cells": [
                {
                    "block_type": b.value,
                    "transition_type": t.value,
                    "alpha": cell.alpha,
                    "beta": cell.beta,
                    "observation_count": cell.observation_count,
                    "window": "".join("1" if x else "0" for x in self.windows[(b, t)].outcomes),
                }
                for (b, t), cell in self.cells.items()
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, doc: dict) -> "PredictorState":
        state = cls(PredictorParams(**doc["params"]))
        cells = doc["cells"]
        if len(cells) != 16:
            raise ValueError(f"predictor dump needs 16 cells, got {len(cells)}")
        for entry in cells:
            key = (BlockType(entry["block_type"]), TransitionType(entry["transition_type"]))
            state.cells[key] = BetaCell(float(entry["alpha"]), float(entry["beta"]), int(entry["observation_count"]))
            window = state.windows[key]
            for ch in entry.get("window", ""):
                window.push(ch == "1")
        return state

    @classmethod
    def loads(cls, text: str) -> "PredictorState":
        return cls.from_json(json.loads(text))
