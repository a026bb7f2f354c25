"""Architecture-aware KV-cache sizing and batch-size planning.

All byte counts are exact rationals until the final per-sequence figure,
which is rounded up to whole bytes (fractional precisions such as INT4 give
fractional per-token sizes). "GB" is decimal (1e9 bytes) throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional, Sequence, Union

from .core import ArchitectureKind

Number = Union[int, float, Fraction]

GB = 10**9


class ConfigError(ValueError):
    """Invalid model or budget configuration."""


@dataclass(frozen=True)
class ModelConfig:
    name: str
    num_layers: int
    query_heads: int
    kv_heads: int
    head_dim: int
    latent_dim: Optional[int] = None
    rope_dim: Optional[int] = None
    precision_bytes: Number = 2
    tp_degree: int = 1
    # None selects the architecture default: shard for MHA/GQA/MQA,
    # replicate the MLA latent across TP ranks.
    kv_shard_under_tp: Optional[bool] = None

    def __post_init__(self):
        for attr in ("num_layers", "query_heads", "kv_heads", "head_dim", "tp_degree"):
            value = getattr(self, attr)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise ConfigError(f"{self.name}: {attr} must be a positive integer, got {value!r}")
        if self.kv_heads > self.query_heads:
            raise ConfigError(f"{self.name}: kv_heads ({self.kv_heads}) exceeds query_heads ({self.query_heads})")
        if self.query_heads % self.kv_heads:
            raise ConfigError(f"{self.name}: query_heads must be a multiple of kv_heads")
        if self.latent_dim is not None:
            if self.rope_dim is None:
                raise ConfigError(f"{self.name}: latent_dim requires rope_dim")
            if self.latent_dim < 0 or self.rope_dim < 0:
                raise ConfigError(f"{self.name}: latent/rope dims must be non-negative")
        if Fraction(self.precision) <= 0:
            raise ConfigError(f"{self.name}: precision_bytes must be positive")

    @property
    def precision(self) -> Fraction:
        p = self.precision_bytes
        return Fraction(p).limit_denominator(1 << 20) if isinstance(p, float) else Fraction(p)

    @property
    def arch(self) -> ArchitectureKind:
        return infer_architecture(self)

    @property
    def group_size(self) -> int:
        return self.query_heads // self.kv_heads

    @property
    def shards_kv(self) -> bool:
        if self.kv_shard_under_tp is not None:
            return self.kv_shard_under_tp
        return self.arch != ArchitectureKind.MLA

    def mha_equivalent(self, kv_shard_under_tp: Optional[bool] = None) -> "ModelConfig":
        """The same model sized as if every query head had its own KV head."""
        return replace(
            self,
            name=f"{self.name} (MHA-equivalent)",
            kv_heads=self.query_heads,
            latent_dim=None,
            rope_dim=None,
            kv_shard_under_tp=kv_shard_under_tp,
        )


@dataclass(frozen=True)
class SizingBudget:
    m_target_bytes: Number
    n_max: int

    def __post_init__(self):
        if self.m_target_bytes <= 0:
            raise ConfigError("m_target_bytes must be positive")
        if self.n_max <= 0:
            raise ConfigError("n_max must be positive")


def infer_architecture(cfg: ModelConfig) -> ArchitectureKind:
    if cfg.kv_heads > cfg.query_heads:
        raise ConfigError(f"{cfg.name}: kv_heads exceeds query_heads")
    if cfg.latent_dim is not None:
        return ArchitectureKind.MLA
    if cfg.kv_heads == cfg.query_heads:
        return ArchitectureKind.MHA
    if cfg.kv_heads == 1:
        return ArchitectureKind.MQA
    return ArchitectureKind.GQA


def bytes_per_token_layer(cfg: ModelConfig) -> Fraction:
    """KV bytes for one token in one layer, before any TP sharding."""
    arch = infer_architecture(cfg)
    p = cfg.precision
    if arch == ArchitectureKind.MLA:
        return (cfg.latent_dim + cfg.rope_dim) * p
    if arch == ArchitectureKind.MHA:
        return 2 * cfg.query_heads * cfg.head_dim * p
    return 2 * cfg.kv_heads * cfg.head_dim * p


def _per_gpu_fraction(cfg: ModelConfig) -> Fraction:
    return Fraction(1, cfg.tp_degree) if cfg.shards_kv else Fraction(1)


def sequence_kv_bytes(cfg: ModelConfig, n: int) -> int:
    """Per-GPU KV bytes for one sequence of ``n`` tokens across all layers."""
    if n < 0:
        raise ValueError("token count must be non-negative")
    exact = cfg.num_layers * n * bytes_per_token_layer(cfg) * _per_gpu_fraction(cfg)
    return math.ceil(exact)


def max_batch_size(cfg: ModelConfig, budget: SizingBudget) -> int:
    """Largest batch whose KV cache at ``n_max`` tokens fits the budget.

    Returns 0 when not even one sequence fits.
    """
    per_seq = sequence_kv_bytes(cfg, budget.n_max)
    return math.floor(Fraction(budget.m_target_bytes) / per_seq)


@dataclass(frozen=True)
class FleetRow:
    model: str
    arch: ArchitectureKind
    mha_bytes: Fraction
    actual_bytes: Fraction
    ratio: float
    mha_batch: int
    arch_batch: int

    @property
    def batch_gain(self) -> float:
        return self.arch_batch / self.mha_batch if self.mha_batch else math.inf

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "arch": self.arch.value,
            "mha_bytes_per_token_layer": _num(self.mha_bytes),
            "actual_bytes_per_token_layer": _num(self.actual_bytes),
            "ratio": round(self.ratio, 4),
            "mha_batch": self.mha_batch,
            "arch_batch": self.arch_batch,
            "batch_gain": round(self.batch_gain, 4) if self.mha_batch else None,
        }


def _num(x: Fraction):
    return int(x) if x.denominator == 1 else float(x)


def fleet_report(cfgs: Sequence[ModelConfig], budget: SizingBudget) -> list[FleetRow]:
    """Per-model MHA-equivalent vs architecture-aware sizing and batch sizes."""
    if not cfgs:
        raise ValueError("fleet_report needs at least one model")
    rows = []
    for cfg in cfgs:
        try:
            mha = cfg.mha_equivalent()
            mha_bytes = bytes_per_token_layer(mha)
            actual = bytes_per_token_layer(cfg)
            rows.append(
                FleetRow(
                    model=cfg.name,
                    arch=infer_architecture(cfg),
                    mha_bytes=mha_bytes,
                    actual_bytes=actual,
                    ratio=float(mha_bytes / actual),
                    mha_batch=max_batch_size(mha, budget),
                    arch_batch=max_batch_size(cfg, budget),
                )
            )
        except ConfigError as exc:
            raise ConfigError(f"model {cfg.name!r}: {exc}") from exc
    return rows


def format_fleet_report(rows: Sequence[FleetRow], fmt: str = "text") -> str:
    import csv
    import io
    import json

    if fmt == "json":
        return json.dumps([r.as_dict() for r in rows], indent=2) + "\n"
    header = ["model", "arch", "mha_bytes", "actual_bytes", "ratio", "mha_batch", "arch_batch", "gain"]
    body = [
        [
            r.model,
            r.arch.value,
            f"{_num(r.mha_bytes):,}",
            f"{_num(r.actual_bytes):,}",
            f"{r.ratio:.1f}x",
            str(r.mha_batch),
            str(r.arch_batch),
            f"{r.batch_gain:.1f}x" if r.mha_batch else "inf",
        ]
        for r in rows
    ]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for r in rows:
            d = r.as_dict()
            writer.writerow([d["model"], d["arch"], d["mha_bytes_per_token_layer"],
                             d["actual_bytes_per_token_layer"], d["ratio"], d["mha_batch"],
                             d["arch_batch"], d["batch_gain"]])
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    widths = [max(len(h), *(len(row[i]) for row in body)) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) if i < 2 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    for row in body:
        lines.append("  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
    return "\n".join(lines) + "\n"


# Published model shapes. Llama-style GQA presets keep KV replicated under TP:
# with 8 KV heads per model the per-GPU cache is sized on the full KV head count.
DEEPSEEK_V3 = ModelConfig("DeepSeek-V3", num_layers=61, query_heads=128, kv_heads=128,
                          head_dim=128, latent_dim=512, rope_dim=64, tp_degree=8)
LLAMA3_70B = ModelConfig("Llama-3-70B", num_layers=80, query_heads=64, kv_heads=8,
                         head_dim=128, tp_degree=8, kv_shard_under_tp=False)
MIXTRAL_8X22B = ModelConfig("Mixtral-8x22B", num_layers=56, query_heads=48, kv_heads=8,
                            head_dim=128, tp_degree=8, kv_shard_under_tp=False)
QWEN25_72B = ModelConfig("Qwen-2.5-72B", num_layers=80, query_heads=64, kv_heads=8,
                         head_dim=128, tp_degree=8, kv_shard_under_tp=False)

PRESETS = {cfg.name: cfg for cfg in (DEEPSEEK_V3, LLAMA3_70B, MIXTRAL_8X22B, QWEN25_72B)}

DEFAULT_BUDGET = SizingBudget(m_target_bytes=30 * GB, n_max=4096)
