"""Trace format, parsing, and seeded synthetic workload generators.

Traces are JSON lines, one AccessEvent per line, optionally preceded by a
``{"trace_header": {...}}`` line. Emission is canonical (fixed key order,
compact separators, absent fields omitted) so parse then emit reproduces a
generated file byte for byte.

Three synthetic families are provided:

* ``sharegpt_like``: multi-turn chat, short prompts, moderate prompt sharing,
  generated replies carried into later turns.
* ``lmsys_like``: longer prompts, most sessions start from one of a few
  popular system prompts, replies are not carried over.
* ``agentic``: tool-using sessions of 5 to 15 calls drawn from a skewed
  Markov chain, with shared per-tool context blocks and single-use thoughts.
"""

from __future__ import annotations

import hashlib
import heapq
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, TextIO, Union

import numpy as np

from .core import NS_PER_MS, NS_PER_S, AccessEvent, BlockType, EventKind, TransitionType, block_tokens_for_arch
from .sizing import PRESETS, ModelConfig, infer_architecture, sequence_kv_bytes

TRACE_FORMAT = "kvtier-trace"
TRACE_VERSION = 1
MAPPING_VERSION = 1
FAMILIES = ("sharegpt_like", "lmsys_like", "agentic")


class ParseError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


@dataclass
class Trace:
    events: list[AccessEvent]
    header: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[AccessEvent]:
        return iter(self.events)

    def block_accesses(self) -> Iterator[AccessEvent]:
        return (e for e in self.events if e.kind == EventKind.BLOCK_ACCESS)


# -- canonical records -------------------------------------------------------

_OPTIONAL_BLOCK_FIELDS = ("content_seed", "token_start", "token_end")


def to_record(e: AccessEvent) -> dict:
    rec = {"session_id": e.session_id, "time_ns": e.time, "kind": e.kind.value}
    if e.kind == EventKind.BLOCK_ACCESS:
        rec["block_id"] = e.block_id
        rec["block_type"] = e.block_type.value
        rec["transition_type"] = e.transition_type.value
        rec["position"] = e.position
        rec["size_bytes"] = e.size_bytes
        for name in _OPTIONAL_BLOCK_FIELDS:
            value = getattr(e, name)
            if value is not None:
                rec[name] = value
    else:
        if e.position:
            rec["position"] = e.position
        if e.tool_name is not None:
            rec["tool_name"] = e.tool_name
    return rec


def dumps_event(e: AccessEvent) -> str:
    return json.dumps(to_record(e), separators=(",", ":"))


def _require(rec: dict, name: str, line: int, kinds: tuple[type, ...]):
    if name not in rec or rec[name] is None:
        raise ParseError(line, f"missing field '{name}'")
    value = rec[name]
    if not isinstance(value, kinds) or isinstance(value, bool):
        raise ParseError(line, f"field '{name}' has wrong type {type(value).__name__}")
    return value


def _optional_int(rec: dict, name: str, line: int) -> Optional[int]:
    value = rec.get(name)
    if value is None:
        return None
    if not isinstance(value, int) or isinstance(value, bool):
        raise ParseError(line, f"field '{name}' must be an integer")
    return value


def from_record(rec: dict, line: int = 0) -> AccessEvent:
    if not isinstance(rec, dict):
        raise ParseError(line, "record is not a JSON object")
    session = _require(rec, "session_id", line, (str,))
    time_ns = _require(rec, "time_ns", line, (int,))
    kind_raw = _require(rec, "kind", line, (str,))
    try:
        kind = EventKind(kind_raw)
    except ValueError:
        raise ParseError(line, f"unknown kind '{kind_raw}'") from None
    kwargs = dict(time=time_ns, session_id=session, kind=kind, position=_optional_int(rec, "position", line) or 0)
    if kind == EventKind.BLOCK_ACCESS:
        kwargs["block_id"] = _require(rec, "block_id", line, (int,))
        bt = _require(rec, "block_type", line, (str,))
        tt = _require(rec, "transition_type", line, (str,))
        try:
            kwargs["block_type"] = BlockType(bt)
        except ValueError:
            raise ParseError(line, f"undefined block_type '{bt}'") from None
        try:
            kwargs["transition_type"] = TransitionType(tt)
        except ValueError:
            raise ParseError(line, f"undefined transition_type '{tt}'") from None
        kwargs["size_bytes"] = _require(rec, "size_bytes", line, (int,))
        for name in _OPTIONAL_BLOCK_FIELDS:
            kwargs[name] = _optional_int(rec, name, line)
    elif kind == EventKind.TOOL_CALL:
        kwargs["tool_name"] = _require(rec, "tool_name", line, (str,))
    try:
        return AccessEvent(**kwargs)
    except ValueError as exc:
        raise ParseError(line, str(exc)) from None


def parse_lines(lines: Iterable[str]) -> Trace:
    events = []
    header: dict = {}
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, f"invalid JSON ({exc.msg})") from None
        if isinstance(rec, dict) and "trace_header" in rec:
            if events or header:
                raise ParseError(lineno, "trace_header must be the first record")
            header = rec["trace_header"]
            if not isinstance(header, dict):
                raise ParseError(lineno, "trace_header must be an object")
            continue
        events.append(from_record(rec, lineno))
    return Trace(events, header)


def parse(path: Union[str, Path]) -> Trace:
    with open(path, encoding="utf-8") as fh:
        return parse_lines(fh)


def write_trace(trace: Trace, out: TextIO) -> None:
    if trace.header:
        out.write(json.dumps({"trace_header": trace.header}, separators=(",", ":"), sort_keys=True))
        out.write("\n")
    for e in trace.events:
        out.write(dumps_event(e))
        out.write("\n")


def emit(trace: Trace, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_trace(trace, fh)


def dumps_trace(trace: Trace) -> str:
    buf = io.StringIO()
    write_trace(trace, buf)
    return buf.getvalue()


def extract_reuse_labels(events: Iterable[AccessEvent]) -> list[tuple[BlockType, TransitionType, bool]]:
    """(block type, transition type, seen before) for each block access, in stream order."""
    seen: set[int] = set()
    labels = []
    for e in events:
        if e.kind != EventKind.BLOCK_ACCESS:
            continue
        labels.append((e.block_type, e.transition_type, e.block_id in seen))
        seen.add(e.block_id)
    return labels


# -- workload generation -------------------------------------------------------


@dataclass(frozen=True)
class FamilyParams:
    """Generator knobs. Token lengths are lognormal with the given means."""

    mean_input_tokens: float
    mean_output_tokens: float
    length_sigma: float = 0.6
    shared_prompt_fraction: float = 0.0
    prompt_pool_size: int = 8
    prompt_zipf_s: float = 1.0
    mean_prompt_tokens: float = 800.0
    mean_turns: float = 2.0
    max_turns: int = 8
    carry_outputs: bool = True
    history_turns: int = 2  # earlier turns re-read per request
    session_rate_per_s: float = 2.0
    think_time_s: float = 15.0
    prefill_ns_per_token: int = 20_000
    decode_ns_per_token: int = 30 * NS_PER_MS
    # agentic only
    tool_calls_min: int = 5
    tool_calls_max: int = 15
    num_tools: int = 8
    tool_concentration: float = 0.3  # Dirichlet concentration of transition rows; lower is more skewed
    mean_tool_context_tokens: float = 384.0
    mean_tool_output_tokens: float = 256.0
    mean_thought_tokens: float = 384.0
    history_steps: int = 2

    def __post_init__(self):
        if self.mean_input_tokens <= 0 or self.mean_output_tokens <= 0:
            raise ValueError("mean token lengths must be positive")
        if not 0.0 <= self.shared_prompt_fraction <= 1.0:
            raise ValueError("shared_prompt_fraction must lie in [0, 1]")
        if self.prompt_pool_size <= 0 or self.num_tools <= 0:
            raise ValueError("pool sizes must be positive")
        if not 1 <= self.tool_calls_min <= self.tool_calls_max:
            raise ValueError("need 1 <= tool_calls_min <= tool_calls_max")
        if self.mean_turns < 1 or self.max_turns < 1:
            raise ValueError("sessions need at least one turn")
        if self.session_rate_per_s <= 0 or self.length_sigma < 0:
            raise ValueError("session rate must be positive and sigma non-negative")


FAMILY_DEFAULTS: dict[str, FamilyParams] = {
    "sharegpt_like": FamilyParams(
        mean_input_tokens=500, mean_output_tokens=300, shared_prompt_fraction=0.3,
        prompt_pool_size=64, mean_prompt_tokens=400, mean_turns=3.0, carry_outputs=True,
    ),
    "lmsys_like": FamilyParams(
        mean_input_tokens=1200, mean_output_tokens=250, shared_prompt_fraction=0.8,
        prompt_pool_size=32, mean_prompt_tokens=1500, mean_turns=2.0, carry_outputs=False,
    ),
    "agentic": FamilyParams(
        mean_input_tokens=300, mean_output_tokens=200, shared_prompt_fraction=0.9,
        prompt_pool_size=4, mean_prompt_tokens=1000, mean_turns=1.0, max_turns=1,
        num_tools=24, mean_tool_context_tokens=384, mean_tool_output_tokens=128, mean_thought_tokens=128,
        history_steps=1,
    ),
}


@dataclass(frozen=True)
class WorkloadSpec:
    family: str
    num_sessions: int
    seed: int
    params: Optional[FamilyParams] = None
    model: str = "Llama-3-70B"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.num_sessions < 0:
            raise ValueError("num_sessions must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.model not in PRESETS:
            raise ValueError(f"unknown model {self.model!r}")

    @property
    def resolved_params(self) -> FamilyParams:
        return self.params if self.params is not None else FAMILY_DEFAULTS[self.family]

    @property
    def model_config(self) -> ModelConfig:
        return PRESETS[self.model]


def stable_id(*parts) -> int:
    """63-bit content-derived identifier; identical parts give identical ids."""
    digest = hashlib.blake2b("|".join(map(str, parts)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def _lognormal(rng: np.random.Generator, mean: float, sigma: float) -> int:
    mu = math.log(mean) - sigma * sigma / 2.0
    return max(1, int(round(rng.lognormal(mu, sigma))))


@dataclass
class _Block:
    block_id: int
    block_type: BlockType
    start: int
    end: int
    size: int


class _Sizer:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.block_tokens = block_tokens_for_arch(infer_architecture(cfg))
        self._cache: dict[int, int] = {}

    def size(self, tokens: int) -> int:
        s = self._cache.get(tokens)
        if s is None:
            s = self._cache[tokens] = sequence_kv_bytes(self.cfg, tokens)
        return s

    def after(self, pos: int, tokens: int) -> int:
        """Start of the next segment: generated segments begin on a fresh block."""
        bt = self.block_tokens
        return -(-(pos + tokens) // bt) * bt

    def blocks(self, kind: BlockType, start: int, tokens: int, id_parts: tuple) -> list[_Block]:
        out = []
        bt = self.block_tokens
        pos = start
        end = start + tokens
        i = 0
        while pos < end:
            stop = min(end, (pos // bt + 1) * bt)
            out.append(_Block(stable_id(*id_parts, i), kind, pos, stop, self.size(stop - pos)))
            pos = stop
            i += 1
        return out


class _SessionWriter:
    """Accumulates one session's events with strictly increasing times."""

    def __init__(self, session_id: str, t0: int):
        self.session_id = session_id
        self.t = t0
        self.events: list[AccessEvent] = []

    def mark(self, kind: EventKind, tool: Optional[str] = None, position: int = 0) -> None:
        self.events.append(AccessEvent(self.t, self.session_id, kind, tool_name=tool, position=position))
        self.t += 1

    def access(self, blk: _Block, transition: TransitionType, gap_ns: int, position: Optional[int] = None) -> None:
        self.events.append(
            AccessEvent(
                self.t, self.session_id, EventKind.BLOCK_ACCESS,
                block_id=blk.block_id, block_type=blk.block_type, transition_type=transition,
                position=blk.start if position is None else position, size_bytes=blk.size,
                content_seed=blk.block_id, token_start=blk.start, token_end=blk.end,
            )
        )
        self.t += max(1, gap_ns)


def _zipf_weights(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


class _FamilyContext:
    """Trace-wide shared state: prompt pool, tool alphabet and chain."""

    def __init__(self, spec: WorkloadSpec):
        p = spec.resolved_params
        self.spec = spec
        self.params = p
        self.sizer = _Sizer(spec.model_config)
        rng = np.random.default_rng([spec.seed, 0x5EED])
        self.prompt_weights = _zipf_weights(p.prompt_pool_size, p.prompt_zipf_s)
        self.prompt_tokens = [_lognormal(rng, p.mean_prompt_tokens, 0.25) for _ in range(p.prompt_pool_size)]
        self.prompt_blocks = [
            self.sizer.blocks(BlockType.SYSTEM_PROMPT, 0, n, (spec.family, spec.seed, "prompt", i))
            for i, n in enumerate(self.prompt_tokens)
        ]
        self.tools = [f"tool_{i:02d}" for i in range(p.num_tools)]
        alpha = np.full(p.num_tools, p.tool_concentration)
        self.tool_matrix = rng.dirichlet(alpha, size=p.num_tools)
        self.tool_start = rng.dirichlet(alpha)
        self.tool_context_tokens = [_lognormal(rng, p.mean_tool_context_tokens, 0.3) for _ in self.tools]


def _sample_prompt(ctx: _FamilyContext, rng: np.random.Generator) -> Optional[list[_Block]]:
    if rng.random() >= ctx.params.shared_prompt_fraction:
        return None
    return ctx.prompt_blocks[int(rng.choice(len(ctx.prompt_blocks), p=ctx.prompt_weights))]


def _chat_session(ctx: _FamilyContext, idx: int, t0: int) -> list[AccessEvent]:
    p = ctx.params
    spec = ctx.spec
    rng = np.random.default_rng([spec.seed, idx, 1])
    sid = f"s{idx:06d}"
    w = _SessionWriter(sid, t0)
    prompt = _sample_prompt(ctx, rng) or []
    pos = ctx.sizer.after(prompt[-1].end, 0) if prompt else 0
    turns = min(p.max_turns, int(rng.geometric(1.0 / p.mean_turns)))
    history: list[list[_Block]] = []
    prefill_gap = p.prefill_ns_per_token * ctx.sizer.block_tokens
    for turn in range(turns):
        tt = TransitionType.AGENT_HANDOFF if turn == 0 else TransitionType.REASONING_STEP
        w.mark(EventKind.REQUEST_START, position=pos)
        for blk in prompt:
            w.access(blk, tt, prefill_gap)
        for old in history[-p.history_turns:] if p.history_turns else []:
            for blk in old:
                w.access(blk, tt, prefill_gap)
        n_in = _lognormal(rng, p.mean_input_tokens, p.length_sigma)
        inputs = ctx.sizer.blocks(BlockType.USER_CONTEXT, pos, n_in, (spec.family, spec.seed, sid, turn, "in"))
        pos = ctx.sizer.after(pos, n_in)
        for blk in inputs:
            w.access(blk, tt, prefill_gap)
        n_out = _lognormal(rng, p.mean_output_tokens, p.length_sigma)
        outputs = ctx.sizer.blocks(
            BlockType.INTERMEDIATE_REASONING, pos, n_out, (spec.family, spec.seed, sid, turn, "out")
        )
        pos = ctx.sizer.after(pos, n_out)
        for blk in outputs:
            w.access(blk, TransitionType.REASONING_STEP, p.decode_ns_per_token * (blk.end - blk.start))
        w.mark(EventKind.REQUEST_END, position=pos)
        history.append(inputs + (outputs if p.carry_outputs else []))
        w.t += int(rng.exponential(p.think_time_s) * NS_PER_S)
    return w.events


def _agentic_session(ctx: _FamilyContext, idx: int, t0: int) -> list[AccessEvent]:
    p = ctx.params
    spec = ctx.spec
    rng = np.random.default_rng([spec.seed, idx, 2])
    sid = f"s{idx:06d}"
    w = _SessionWriter(sid, t0)
    prefill_gap = p.prefill_ns_per_token * ctx.sizer.block_tokens
    prompt = _sample_prompt(ctx, rng) or []
    pos = ctx.sizer.after(prompt[-1].end, 0) if prompt else 0
    w.mark(EventKind.REQUEST_START, position=pos)
    for blk in prompt:
        w.access(blk, TransitionType.AGENT_HANDOFF, prefill_gap)
    n_task = _lognormal(rng, p.mean_input_tokens, p.length_sigma)
    task = ctx.sizer.blocks(BlockType.USER_CONTEXT, pos, n_task, (spec.family, spec.seed, sid, "task"))
    pos = ctx.sizer.after(pos, n_task)
    for blk in task:
        w.access(blk, TransitionType.AGENT_HANDOFF, prefill_gap)

    n_calls = int(rng.integers(p.tool_calls_min, p.tool_calls_max + 1))
    prev_tool: Optional[int] = None
    outputs: list[list[_Block]] = []
    for step in range(n_calls):
        probs = ctx.tool_start if prev_tool is None else ctx.tool_matrix[prev_tool]
        tool = int(rng.choice(len(ctx.tools), p=probs))
        if prev_tool is None:
            tt = TransitionType.AGENT_HANDOFF
        elif tool == prev_tool:
            tt = TransitionType.SAME_TOOL_REPEAT
        else:
            tt = TransitionType.TOOL_SWITCH
        name = ctx.tools[tool]
        w.mark(EventKind.TOOL_CALL, tool=name, position=pos)
        # Tool schemas sit at a fixed offset so the same tool's blocks are shared across sessions.
        for blk in ctx.sizer.blocks(BlockType.TOOL_CONTEXT, 0, ctx.tool_context_tokens[tool],
                                    (spec.family, spec.seed, "tool", name)):
            w.access(blk, tt, prefill_gap, position=pos)
        for old in outputs[-p.history_steps:] if p.history_steps else []:
            for blk in old:
                w.access(blk, TransitionType.REASONING_STEP, prefill_gap)
        n_out = _lognormal(rng, p.mean_tool_output_tokens, p.length_sigma)
        out = ctx.sizer.blocks(BlockType.USER_CONTEXT, pos, n_out, (spec.family, spec.seed, sid, step, "out"))
        pos = ctx.sizer.after(pos, n_out)
        for blk in out:
            w.access(blk, tt, prefill_gap)
        n_thought = _lognormal(rng, p.mean_thought_tokens, p.length_sigma)
        thought = ctx.sizer.blocks(
            BlockType.INTERMEDIATE_REASONING, pos, n_thought, (spec.family, spec.seed, sid, step, "thought")
        )
        pos = ctx.sizer.after(pos, n_thought)
        for blk in thought:
            w.access(blk, TransitionType.REASONING_STEP, p.decode_ns_per_token * (blk.end - blk.start) // 8)
        outputs.append(out)
        prev_tool = tool
        w.t += int(rng.exponential(1.0) * NS_PER_S)
    # Final answer re-reads the system prompt and task.
    for blk in prompt + task:
        w.access(blk, TransitionType.REASONING_STEP, prefill_gap)
    w.mark(EventKind.REQUEST_END, position=pos)
    return w.events


def header_for(spec: WorkloadSpec) -> dict:
    params = asdict(spec.resolved_params)
    return {
        "format": TRACE_FORMAT,
        "version": TRACE_VERSION,
        "mapping_version": MAPPING_VERSION,
        "family": spec.family,
        "num_sessions": spec.num_sessions,
        "seed": spec.seed,
        "model": spec.model,
        "params": params,
    }


def generate(spec: WorkloadSpec) -> Trace:
    """Generate a full trace; identical specs give identical traces."""
    if spec.num_sessions == 0:
        return Trace([], header_for(spec))
    ctx = _FamilyContext(spec)
    arrivals_rng = np.random.default_rng([spec.seed, 0xA11])
    gaps = arrivals_rng.exponential(1.0 / ctx.params.session_rate_per_s, size=spec.num_sessions)
    starts = (np.cumsum(gaps) * NS_PER_S).astype(np.int64)
    build = _agentic_session if spec.family == "agentic" else _chat_session
    sessions = [build(ctx, i, int(starts[i])) for i in range(spec.num_sessions)]
    # Deterministic merge by (time, session_id, per-session sequence).
    merged = heapq.merge(
        *[[(e.time, e.session_id, k, e) for k, e in enumerate(evs)] for evs in sessions],
    )
    return Trace([item[3] for item in merged], header_for(spec))


def session_tool_calls(trace: Trace) -> dict[str, int]:
    counts: dict[str, int] = {}
    for e in trace.events:
        if e.kind == EventKind.TOOL_CALL:
            counts[e.session_id] = counts.get(e.session_id, 0) + 1
    return counts


# -- thin adapter for ShareGPT-style conversation dumps --------------------------


def adapt_conversations(
    conversations: Sequence[dict],
    model: str = "Llama-3-70B",
    tokens_per_word: float = 1.3,
    turn_gap_ns: int = 10 * NS_PER_S,
) -> Trace:
    """Map ``{"id", "conversations": [{"from", "value"}]}`` records onto a trace.

    Token counts are word counts scaled by ``tokens_per_word`` (no tokenizer).
    System messages become system_prompt blocks keyed by their text, human
    turns user_context, and model turns intermediate_reasoning. Each request
    re-reads everything before it.
    """
    sizer = _Sizer(PRESETS[model])
    events: list[AccessEvent] = []
    t = 0
    for conv in conversations:
        sid = str(conv.get("id", len(events)))
        w = _SessionWriter(sid, t)
        context: list[_Block] = []
        pos = 0
        turn = 0
        for msg in conv.get("conversations", []):
            role = msg.get("from", "human")
            text = msg.get("value", "")
            n = max(1, int(round(len(text.split()) * tokens_per_word)))
            if role == "system":
                blocks = sizer.blocks(BlockType.SYSTEM_PROMPT, pos, n, ("system", text))
            elif role in ("gpt", "assistant", "model"):
                blocks = sizer.blocks(BlockType.INTERMEDIATE_REASONING, pos, n, (sid, pos, "out"))
            else:
                blocks = sizer.blocks(BlockType.USER_CONTEXT, pos, n, (sid, pos, "in"))
            pos += n
            if role in ("human", "user"):
                tt = TransitionType.AGENT_HANDOFF if turn == 0 else TransitionType.REASONING_STEP
                w.mark(EventKind.REQUEST_START, position=pos - n)
                for blk in context + blocks:
                    w.access(blk, tt, 1)
                w.mark(EventKind.REQUEST_END, position=pos)
                turn += 1
                w.t += turn_gap_ns
            elif role not in ("system",):
                for blk in blocks:
                    w.access(blk, TransitionType.REASONING_STEP, 1)
            context += blocks
        events.extend(w.events)
        t = w.t + turn_gap_ns
    events.sort(key=lambda e: (e.time, e.session_id))
    return Trace(events, {"format": TRACE_FORMAT, "version": TRACE_VERSION,
                          "mapping_version": MAPPING_VERSION, "source": "conversations", "model": model})
