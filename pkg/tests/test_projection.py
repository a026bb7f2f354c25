import json
import math
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from kvtier.projection import (
    Calibration, Component, ablation, fit_calibration, format_report, project_capacity, project_cost,
    project_report, project_throughput, project_ttft, sizing_fallback_batch, without,
)
from kvtier.sizing import DEEPSEEK_V3 as DSV3, DEFAULT_BUDGET, LLAMA3_70B as LLAMA, max_batch_size
from kvtier.tiers import DEFAULT_TIERS

GB = 10**9
TB = 1000 * GB

# Published tier rows: (capacity lower bound in bytes, exact?, TTFT P99 s, throughput tok/s/GPU)
TIER_ROWS = [
    (40 * GB, True, 4.2, 1450),
    (200 * GB, True, 2.8, 2100),
    (712 * GB, True, 1.8, 2850),
    (4.7 * TB, True, 1.5, 3200),
    (38 * TB, False, 1.1, 3950),
    (38 * TB, False, 1.1, 4150),
]
OURS = dict(ttft_p50_s=0.4, ttft_p99_s=1.1, tbt_p99_s=0.032, throughput=4150, cost_per_mtok=0.43)
SIZING_ABLATION = {"DSV3": -85.6, "L3-70B": -73.8, "Agentic": -68.4}


@pytest.fixture(scope="module")
def calib():
    return Calibration.load()


@pytest.fixture(scope="module")
def report(calib):
    return project_report(calib)


def test_capacity_column(report):
    caps = [r.capacity_bytes for r in report.tier_rows]
    for cap, (expected, exact, _, _) in zip(caps, TIER_ROWS):
        if exact:
            assert cap == expected
        else:
            assert cap >= expected
    assert caps[4] == 38_000 * GB
    assert math.isinf(caps[5])


def test_throughput_column(report):
    for row, (_, _, _, tput) in zip(report.tier_rows, TIER_ROWS):
        assert row.throughput == pytest.approx(tput, rel=0.05)


def test_ttft_column(report):
    for row, (_, _, ttft, _) in zip(report.tier_rows, TIER_ROWS):
        assert row.ttft_p99_s == pytest.approx(ttft, rel=0.10)


def test_ours_row(report):
    ours = report.systems[-1]
    for key, expected in OURS.items():
        assert getattr(ours, key) == pytest.approx(expected, rel=0.10), key


def test_sizing_ablation(report):
    for scenario, expected in SIZING_ABLATION.items():
        assert report.ablations["sizing"][scenario] == pytest.approx(expected, abs=2.0)


def test_sizing_fallback_batches():
    assert sizing_fallback_batch(DSV3) == 14
    assert max_batch_size(DSV3, DEFAULT_BUDGET) == 104
    assert max_batch_size(LLAMA, DEFAULT_BUDGET) == 22


def test_refit_reproduces_frozen_file(calib):
    from importlib import resources
    frozen = resources.files("kvtier").joinpath("data/calibration.json").read_text()
    assert fit_calibration(calib.targets).dumps() == frozen


def test_dump_round_trip(calib):
    again = Calibration.from_json(json.loads(calib.dumps()))
    assert again.dumps() == calib.dumps()


def test_unsupported_version(calib):
    doc = calib.to_json()
    doc["version"] = 99
    with pytest.raises(ValueError, match="99"):
        Calibration.from_json(doc)


def test_throughput_monotone_in_tiers(report):
    tputs = [r.throughput for r in report.tier_rows]
    assert tputs == sorted(tputs)


def test_bayesian_ablation_ordering(report):
    row = report.ablations["bayesian"]
    assert abs(row["Agentic"]) > abs(row["DSV3"])


def test_ablation_zero_without_fallback(calib):
    inp = calib.full_system()
    assert inp.lru_hit_fractions is None and inp.fallback_batch_size is None
    assert ablation(inp, Component.BAYESIAN) == 0.0
    assert ablation(inp, Component.SIZING) == 0.0
    assert without(inp, Component.DEDUP) is inp


def test_ablations_never_help(calib):
    for sc in calib.targets.scenarios:
        inp = calib.scenario_inputs(sc.name)
        for comp in Component:
            assert ablation(inp, comp) <= 1e-9, (sc.name, comp)


def test_all_tier0_limit(calib):
    inp = calib.inputs_for_row(0)
    full_hits = replace(inp, hit_fractions=(1.0, 0, 0, 0, 0, 0))
    # with every access served from Tier 0 there is no stall left to remove
    more = replace(full_hits, tiers=DEFAULT_TIERS)
    assert project_throughput(full_hits) == pytest.approx(project_throughput(more))
    assert project_throughput(full_hits) > project_throughput(inp)


def test_cost_gpu_term_halves(calib):
    inp = replace(calib.inputs_for_row(0), cost_calibration=1.0)
    c1 = project_cost(inp, 1000.0)
    c2 = project_cost(inp, 2000.0)
    assert c2 == pytest.approx(c1 / 2)
    with pytest.raises(ValueError):
        project_cost(inp, 0.0)


@given(st.floats(100.0, 10_000.0), st.floats(1.01, 5.0))
def test_cost_decreases_with_throughput(tput, factor):
    inp = Calibration.load().full_system()
    assert project_cost(inp, tput * factor) < project_cost(inp, tput)


def test_ttft_p50_below_p99(report, calib):
    p50, p99 = project_ttft(calib.full_system())
    assert p50 < p99


def test_capacity_empty_and_unbounded():
    assert project_capacity(DEFAULT_TIERS[:1]) == 40 * GB
    assert math.isinf(project_capacity(DEFAULT_TIERS))


@pytest.mark.parametrize("fmt", ["table", "csv", "json"])
def test_format_report(report, fmt):
    text = format_report(report, fmt)
    assert text.endswith("\n")
    assert "GPU-only" in text
    if fmt == "json":
        doc = json.loads(text)
        assert doc["tier_rows"][5]["capacity_bytes"] is None
        assert set(doc["ablations"]) == {c.value for c in Component}


def test_format_unknown(report):
    with pytest.raises(ValueError):
        format_report(report, "yaml")


def test_bad_inputs(calib):
    inp = calib.inputs_for_row(0)
    with pytest.raises(ValueError):
        replace(inp, hit_fractions=(0.5, 0.5, 0, 0, 0, 0))  # Tier 1 disabled in this row
    with pytest.raises(ValueError):
        replace(inp, batch_size=0)
    with pytest.raises(KeyError):
        calib.scenario_inputs("nope")
