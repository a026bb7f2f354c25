import json
from collections import defaultdict

import pytest
from hypothesis import given, settings, strategies as st

from kvtier.core import AccessEvent, BlockType, EventKind, TransitionType
from kvtier.traces import (
    FAMILIES, ParseError, WorkloadSpec, adapt_conversations, dumps_trace, emit, extract_reuse_labels,
    generate, parse, parse_lines, session_tool_calls,
)


def gen(family, n=200, seed=0):
    return generate(WorkloadSpec(family, n, seed))


def distinct_tokens_per_request(trace, block_type):
    seen = set()
    tokens = 0
    for e in trace.block_accesses():
        if e.block_type == block_type and e.block_id not in seen:
            seen.add(e.block_id)
            tokens += e.token_end - e.token_start
    requests = sum(1 for e in trace if e.kind == EventKind.REQUEST_START)
    return tokens / requests


def test_empty():
    assert len(gen("lmsys_like", 0)) == 0
    assert parse_lines([]).events == []


@pytest.mark.parametrize("family", FAMILIES)
def test_deterministic_and_round_trip(family, tmp_path):
    a, b = gen(family, 50, 3), gen(family, 50, 3)
    text = dumps_trace(a)
    assert text == dumps_trace(b)
    assert text != dumps_trace(gen(family, 50, 4))
    path = tmp_path / "t.jsonl"
    emit(a, path)
    back = parse(path)
    assert back.events == a.events and back.header == a.header
    assert dumps_trace(back) == text
    times = defaultdict(list)
    for e in a:
        times[e.session_id].append(e.time)
    assert all(t == sorted(t) for t in times.values())
    assert [e.time for e in a] == sorted(e.time for e in a)


def test_agentic_tool_calls_in_range():
    counts = session_tool_calls(gen("agentic", 300, 5))
    assert len(counts) == 300
    assert all(5 <= c <= 15 for c in counts.values())


def test_tool_call_followed_by_tool_context():
    trace = gen("agentic", 100, 1)
    pending = {}
    for e in trace:
        if e.kind == EventKind.TOOL_CALL:
            pending[e.session_id] = e.tool_name
        elif e.kind == EventKind.BLOCK_ACCESS and e.session_id in pending:
            assert e.block_type == BlockType.TOOL_CONTEXT
            del pending[e.session_id]
    assert not pending


def test_family_statistics():
    lm = gen("lmsys_like", 1000, 0)
    assert distinct_tokens_per_request(lm, BlockType.USER_CONTEXT) == pytest.approx(1200, rel=0.10)
    with_prompt = {e.session_id for e in lm.block_accesses() if e.block_type == BlockType.SYSTEM_PROMPT}
    sessions = {e.session_id for e in lm}
    assert len(with_prompt) / len(sessions) >= 0.70
    sg = gen("sharegpt_like", 1000, 0)
    assert distinct_tokens_per_request(sg, BlockType.USER_CONTEXT) == pytest.approx(500, rel=0.10)
    assert distinct_tokens_per_request(sg, BlockType.INTERMEDIATE_REASONING) == pytest.approx(300, rel=0.10)


def test_parse_errors():
    good = {"session_id": "s", "time_ns": 0, "kind": "block_access", "block_id": 1,
            "block_type": "user_context", "transition_type": "reasoning_step", "position": 0, "size_bytes": 4}
    bad = dict(good)
    del bad["block_type"]
    with pytest.raises(ParseError) as err:
        parse_lines([json.dumps(good), "", json.dumps(bad)])
    assert err.value.line == 3 and "block_type" in err.value.reason
    with pytest.raises(ParseError):
        parse_lines(["{not json"])
    with pytest.raises(ParseError):
        parse_lines([json.dumps(dict(good, block_type="bogus"))])
    with pytest.raises(ParseError):
        parse_lines([json.dumps({"session_id": "s", "time_ns": 0, "kind": "tool_call"})])
    ok = parse_lines([json.dumps(dict(good, extra="ignored"))])
    assert ok.events[0].block_id == 1


def test_reuse_labels_examples():
    ev = lambda bid, s: AccessEvent(0, s, EventKind.BLOCK_ACCESS, bid, BlockType.USER_CONTEXT,
                                    TransitionType.REASONING_STEP, size_bytes=1)
    labels = extract_reuse_labels([ev(1, "a"), ev(2, "b"), ev(1, "b"), ev(2, "a")])
    assert [r for _, _, r in labels] == [False, False, True, True]


@settings(max_examples=40)
@given(st.lists(st.tuples(st.integers(0, 9), st.sampled_from("abc")), max_size=80))
def test_reuse_labels_brute_force(accesses):
    events = [AccessEvent(i, s, EventKind.BLOCK_ACCESS, b, BlockType.USER_CONTEXT, TransitionType.REASONING_STEP,
                          size_bytes=1) for i, (b, s) in enumerate(accesses)]
    labels = extract_reuse_labels(events)
    assert [r for _, _, r in labels] == [b in [x for x, _ in accesses[:i]] for i, (b, _) in enumerate(accesses)]


def test_adapter():
    convs = [{"id": "c1", "conversations": [
        {"from": "system", "value": "be helpful"}, {"from": "human", "value": "hi there"},
        {"from": "gpt", "value": "hello"}, {"from": "human", "value": "bye"}]}]
    trace = adapt_conversations(convs)
    types = {e.block_type for e in trace.block_accesses()}
    assert types == {BlockType.SYSTEM_PROMPT, BlockType.USER_CONTEXT, BlockType.INTERMEDIATE_REASONING}
    assert sum(1 for e in trace if e.kind == EventKind.REQUEST_START) == 2
    assert parse_lines(dumps_trace(trace).splitlines()).events == trace.events


def test_workload_spec_validation():
    for kwargs in (dict(family="nope"), dict(num_sessions=-1), dict(seed=-1), dict(model="GPT")):
        base = dict(family="agentic", num_sessions=1, seed=0)
        base.update(kwargs)
        with pytest.raises(ValueError):
            WorkloadSpec(**base)
