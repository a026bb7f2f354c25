import json
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from kvtier.sizing import (
    DEFAULT_BUDGET, PRESETS, ArchitectureKind, ConfigError, ModelConfig, SizingBudget, bytes_per_token_layer,
    fleet_report, format_fleet_report, infer_architecture, max_batch_size, sequence_kv_bytes,
)

DSV3 = PRESETS["DeepSeek-V3"]
LLAMA = PRESETS["Llama-3-70B"]


def test_infer_architecture():
    assert infer_architecture(ModelConfig("g", 80, 64, 8, 128)) == ArchitectureKind.GQA
    assert infer_architecture(ModelConfig("m", 80, 64, 64, 128)) == ArchitectureKind.MHA
    assert infer_architecture(ModelConfig("q", 80, 64, 1, 128)) == ArchitectureKind.MQA
    assert infer_architecture(DSV3) == ArchitectureKind.MLA


@pytest.mark.parametrize("kwargs", [
    dict(kv_heads=128), dict(query_heads=60), dict(num_layers=0), dict(latent_dim=512), dict(precision_bytes=0),
])
def test_config_rejects(kwargs):
    base = dict(name="x", num_layers=80, query_heads=64, kv_heads=8, head_dim=128)
    base.update(kwargs)
    with pytest.raises(ConfigError):
        ModelConfig(**base)


def test_bytes_per_token_layer():
    assert bytes_per_token_layer(LLAMA.mha_equivalent()) == 32_768
    assert bytes_per_token_layer(LLAMA) == 4_096
    assert bytes_per_token_layer(DSV3) == 1_152
    assert bytes_per_token_layer(DSV3.mha_equivalent()) == 65_536
    assert bytes_per_token_layer(ModelConfig("q", 1, 64, 1, 128)) == 512


def test_sequence_bytes():
    assert sequence_kv_bytes(LLAMA.mha_equivalent(kv_shard_under_tp=False), 128_000) == 335_544_320_000
    assert sequence_kv_bytes(LLAMA, 128_000) == pytest.approx(41.9e9, rel=0.005)
    assert sequence_kv_bytes(DSV3, 0) == 0
    with pytest.raises(ValueError):
        sequence_kv_bytes(LLAMA, -1)


def test_fractional_precision_rounds_up():
    int4 = ModelConfig("i4", 1, 1, 1, 1, precision_bytes=0.5)
    assert bytes_per_token_layer(int4) == Fraction(1)
    assert sequence_kv_bytes(ModelConfig("i4", 1, 1, 1, 3, precision_bytes=0.25), 1) == 2  # 1.5 -> 2


def test_batch_sizes():
    assert max_batch_size(DSV3, DEFAULT_BUDGET) == 104
    assert max_batch_size(DSV3.mha_equivalent(), DEFAULT_BUDGET) == 14
    assert max_batch_size(LLAMA, DEFAULT_BUDGET) == 22
    assert max_batch_size(LLAMA, SizingBudget(1, 4096)) == 0


def test_dsv3_layer_count_from_batch_sizes():
    # Every layer count that reproduces both DeepSeek-V3 batch sizes, computed with plain integers.
    def fits(layers):
        mla = 30 * 10**9 // (layers * 4096 * 1152)
        mha = 30 * 10**9 * 8 // (layers * 4096 * 65536)
        return mla == 104 and mha == 14
    assert 61 in [L for L in range(1, 300) if fits(L)]


def test_fleet_report_ratios():
    rows = {r.model: r for r in fleet_report(list(PRESETS.values()), DEFAULT_BUDGET)}
    assert round(rows["DeepSeek-V3"].ratio) == 57
    assert round(rows["Mixtral-8x22B"].ratio) == 6
    assert (rows["DeepSeek-V3"].mha_batch, rows["DeepSeek-V3"].arch_batch) == (14, 104)
    assert rows["Llama-3-70B"].mha_batch == rows["Llama-3-70B"].arch_batch == 22
    assert (rows["Mixtral-8x22B"].mha_batch, rows["Mixtral-8x22B"].arch_batch) == (42, 31)
    assert rows["Qwen-2.5-72B"].mha_batch == rows["Qwen-2.5-72B"].arch_batch == 22
    mha = fleet_report([ModelConfig("m", 4, 8, 8, 64)], DEFAULT_BUDGET)
    assert mha[0].ratio == 1.0


def test_fleet_report_names_bad_model():
    with pytest.raises(ValueError):
        fleet_report([], DEFAULT_BUDGET)


def test_fleet_formats():
    rows = fleet_report([DSV3, LLAMA], DEFAULT_BUDGET)
    text = format_fleet_report(rows)
    assert "65,536" in text and "1,152" in text
    assert format_fleet_report(rows, "csv").splitlines()[0].startswith("model,arch")
    assert json.loads(format_fleet_report(rows, "json"))[0]["arch_batch"] == 104
    with pytest.raises(ValueError):
        format_fleet_report(rows, "xml")


heads = st.sampled_from([1, 2, 4, 8, 16, 32, 64])


@st.composite
def configs(draw):
    hq = draw(heads)
    hkv = draw(st.sampled_from([h for h in (1, 2, 4, 8, 16, 32, 64) if h <= hq]))
    return ModelConfig("x", draw(st.integers(1, 128)), hq, hkv, draw(st.sampled_from([64, 128])),
                       precision_bytes=draw(st.sampled_from([0.5, 1, 2])), tp_degree=draw(st.sampled_from([1, 2, 8])))


@given(configs(), st.integers(0, 10**6), st.integers(0, 10**6))
def test_sequence_bytes_linear(cfg, a, b):
    exact = lambda n: cfg.num_layers * n * bytes_per_token_layer(cfg) / (cfg.tp_degree if cfg.shards_kv else 1)
    assert exact(a + b) == exact(a) + exact(b)
    assert sequence_kv_bytes(cfg, a + b) <= sequence_kv_bytes(cfg, a) + sequence_kv_bytes(cfg, b)


@given(configs(), st.integers(1, 10**12), st.integers(1, 10**12), st.integers(1, 10**5))
def test_batch_monotone_and_safe(cfg, m1, m2, n):
    lo, hi = sorted((m1, m2))
    b_lo = max_batch_size(cfg, SizingBudget(lo, n))
    assert b_lo <= max_batch_size(cfg, SizingBudget(hi, n))
    assert max_batch_size(cfg, SizingBudget(lo, n + 1)) <= b_lo
    assert b_lo * sequence_kv_bytes(cfg, n) <= lo


@given(configs())
def test_architecture_ordering(cfg):
    mha = bytes_per_token_layer(cfg.mha_equivalent())
    gqa = bytes_per_token_layer(cfg)
    mqa = bytes_per_token_layer(ModelConfig("q", cfg.num_layers, cfg.query_heads, 1, cfg.head_dim,
                                            precision_bytes=cfg.precision_bytes))
    mla = bytes_per_token_layer(ModelConfig("l", cfg.num_layers, cfg.query_heads, cfg.query_heads, cfg.head_dim,
                                            latent_dim=cfg.head_dim, rope_dim=cfg.head_dim // 2,
                                            precision_bytes=cfg.precision_bytes))
    assert mla <= mqa <= gqa <= mha


@given(configs())
def test_gqa_degenerate_cases(cfg):
    full = ModelConfig("a", cfg.num_layers, cfg.query_heads, cfg.query_heads, cfg.head_dim)
    assert bytes_per_token_layer(full) == bytes_per_token_layer(full.mha_equivalent())
    one = ModelConfig("b", cfg.num_layers, cfg.query_heads, 1, cfg.head_dim)
    assert infer_architecture(one) in (ArchitectureKind.MQA, ArchitectureKind.MHA)
    assert bytes_per_token_layer(one) == 2 * cfg.head_dim * 2
