import numpy as np
import pytest
from hypothesis import given, strategies as st

from kvtier.core import BlockType, TransitionType, reuse_keys
from kvtier.predictor import PredictorParams, PredictorState

B, T = BlockType.TOOL_CONTEXT, TransitionType.SAME_TOOL_REPEAT


def test_observe_examples():
    s = PredictorState()
    assert s.posterior_mean(B, T) == 0.5 and s.predict(B, T) == 0.5
    s.observe(B, T, True)
    assert (s.cells[(B, T)].alpha, s.cells[(B, T)].beta) == (2, 1)
    assert s.posterior_mean(B, T) == pytest.approx(2 / 3)
    for r in (True, True, False):
        s.observe(B, T, r)
    assert (s.cells[(B, T)].alpha, s.cells[(B, T)].beta) == (4, 2)
    assert s.posterior_mean(B, T) == pytest.approx(0.6667, abs=1e-4)
    assert len(s.cells) == 16


def test_posterior_arithmetic():
    s = PredictorState()
    s.cells[(B, T)].alpha, s.cells[(B, T)].beta = 98, 4
    assert s.posterior_mean(B, T) == pytest.approx(0.9608, abs=1e-4)


def test_confidence():
    s = PredictorState(PredictorParams(confidence_halfpoint=20))
    assert s.confidence(B, T) == 0
    for _ in range(20):
        s.observe(B, T, True)
    assert s.confidence(B, T) == 0.5
    for _ in range(40):
        s.observe(B, T, False)
    assert s.confidence(B, T) == 0.75


def test_blend_arithmetic():
    # c = 0.5, posterior 0.8, window 0.4
    s = PredictorState(PredictorParams(alpha0=1, beta0=1, window_size=5, confidence_halfpoint=10))
    for r in [True] * 7 + [False] * 3:
        s.observe(B, T, r)
    s.cells[(B, T)].alpha, s.cells[(B, T)].beta = 8, 2
    assert s.window_frequency(B, T) == pytest.approx(0.4)
    assert s.predict(B, T) == pytest.approx(0.6)


def test_predict_tends_to_one():
    # All reuses: predict = 1 - n/((n+k0)(n+2)), which dips until n = sqrt(2*k0) and rises after.
    s = PredictorState()
    k0 = s.params.confidence_halfpoint
    prev = None
    for n in range(1, 301):
        s.observe(B, T, True)
        cur = s.predict(B, T)
        assert cur == pytest.approx(1 - n / ((n + k0) * (n + 2)))
        if n >= (2 * k0) ** 0.5 + 1:
            assert cur >= prev
        prev = cur
    assert prev > 0.99


@pytest.mark.parametrize("p", [0.1, 0.5, 0.97])
def test_posterior_consistency(p):
    rng = np.random.default_rng(7)
    s = PredictorState()
    for r in rng.random(2000) < p:
        s.observe(B, T, bool(r))
    assert abs(s.posterior_mean(B, T) - p) < 0.03


@given(st.integers(25, 75), st.randoms())
def test_prior_insensitivity(reuses, rnd):
    # The spread across priors after 100 observations stays under 0.02 for moderate reuse rates.
    stream = [True] * reuses + [False] * (100 - reuses)
    rnd.shuffle(stream)
    means = []
    for a in (1, 2, 5):
        s = PredictorState(PredictorParams(alpha0=a, beta0=a))
        for r in stream:
            s.observe(B, T, bool(r))
        means.append(s.posterior_mean(B, T))
    assert max(means) - min(means) < 0.02


def test_drift_adaptation():
    rng = np.random.default_rng(11)
    W = 1000
    s = PredictorState(PredictorParams(window_size=W))
    for r in rng.random(W) < 0.9:
        s.observe(B, T, bool(r))
    flipped = rng.random(W) < 0.1
    for i, r in enumerate(flipped):
        s.observe(B, T, bool(r))
        if s.predict(B, T) < 0.5:
            break
    assert i < W


@given(st.lists(st.tuples(st.sampled_from(reuse_keys()), st.booleans()), max_size=200), st.randoms())
def test_exchangeable(obs, rnd):
    a, b = PredictorState(), PredictorState()
    for (bt, tt), r in obs:
        a.observe(bt, tt, r)
    shuffled = list(obs)
    rnd.shuffle(shuffled)
    for (bt, tt), r in shuffled:
        b.observe(bt, tt, r)
    for k in reuse_keys():
        ca, cb = a.cells[k], b.cells[k]
        assert (ca.alpha, ca.beta, ca.observation_count) == (cb.alpha, cb.beta, cb.observation_count)
        assert 0 < a.posterior_mean(*k) < 1
        assert 0 <= a.predict(*k) <= 1
        assert ca.observation_count == (ca.alpha - 1) + (ca.beta - 1)


@given(st.lists(st.tuples(st.sampled_from(reuse_keys()), st.booleans()), max_size=100))
def test_dump_round_trip(obs):
    s = PredictorState(PredictorParams(window_size=7))
    for (bt, tt), r in obs:
        s.observe(bt, tt, r)
    back = PredictorState.loads(s.dumps())
    assert back.dumps() == s.dumps()
    assert all(back.predict(*k) == s.predict(*k) for k in reuse_keys())


def test_params_validation():
    for kwargs in (dict(alpha0=0), dict(window_size=0), dict(confidence_halfpoint=-1)):
        with pytest.raises(ValueError):
            PredictorParams(**kwargs)
