"""kvtier command line: size, gen-trace, replay, project, dedup-report, report.

Exit codes: 0 success, 1 usage error, 2 config or trace validation error,
3 internal invariant violation. Diagnostics go to stderr; data goes to
stdout or the named output files.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
from dataclasses import replace
from typing import Optional, Sequence

from . import config as cfgmod
from .dedup import format_dedup_rows, session_checkpoints
from .metrics import write_prometheus
from .projection import Calibration, format_report, project_report
from .replay import SCHEMA_VERSION, PolicyKind, ReplayEngine, ReplayMetrics, order_events, validate_trace
from .sizing import PRESETS, fleet_report, format_fleet_report, sequence_kv_bytes
from .tiers import TierError
from .traces import FAMILIES, ParseError, WorkloadSpec, emit, generate, parse, write_trace

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _opt(p: argparse.ArgumentParser, *names, default=None, shown=None, help: str, **kw):
    """Add an option whose help always states its default."""
    if shown is None:
        shown = "none" if default is None else default
    p.add_argument(*names, default=default, help=f"{help} (default: {shown})", **kw)


def _config_opt(p):
    _opt(p, "--config", default="defaults", help="TOML config file, or 'defaults' for the shipped one")


def _format_opt(p, choices=("text", "csv", "json")):
    _opt(p, "--format", default=None, shown=f"[output] format, {choices[0]}" if choices[0] == "text" else choices[0],
         choices=choices, help="output format")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kvtier", description="Tiered KV-cache sizing, trace replay and projection.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("size", help="per-token KV bytes and max batch size per model")
    _config_opt(p)
    _format_opt(p)
    _opt(p, "--models", default=None, shown="[sizing] models", nargs="+", help="preset or config-defined model names")

    p = sub.add_parser("gen-trace", help="generate a synthetic JSONL trace")
    _config_opt(p)
    _opt(p, "--family", default=None, shown="[workload] family, lmsys_like", choices=FAMILIES,
         help="workload family")
    _opt(p, "--sessions", type=int, default=None, shown="[workload] num_sessions, 1000", help="number of sessions")
    _opt(p, "--seed", type=int, default=None, shown="[run] seed, 0", help="generator seed")
    _opt(p, "--model", default=None, shown="[workload] model, Llama-3-70B", choices=sorted(PRESETS),
         help="model whose KV sizes the trace carries")
    _opt(p, "--out", default="-", shown="stdout", help="output path")

    p = sub.add_parser("replay", help="replay a trace under one eviction policy")
    _config_opt(p)
    _opt(p, "--trace", required=True, shown="required", help="JSONL trace path")
    _opt(p, "--policy", default=None, shown="[run] policy, bayesian", choices=[k.value for k in PolicyKind],
         help="cache management policy")
    _opt(p, "--seed", type=int, default=None, shown="[run] seed, 0", help="replay seed")
    _opt(p, "--metrics-out", default=None, shown="[output] metrics_out, none",
         help="write metrics JSON here and Prometheus text next to it with a .prom suffix")
    _opt(p, "--prefetch", default=None, shown="[prefetch] enabled, off", choices=("on", "off"),
         help="position-window prefetch")
    _opt(p, "--prefetch-wmin", type=int, default=None, shown="[prefetch] w_min, 2", help="window at layer 0")
    _opt(p, "--prefetch-wmax", type=int, default=None, shown="[prefetch] w_max, 8", help="window at the last layer")
    _opt(p, "--predictor-dump", default=None, help="write the final predictor state as JSON")
    _opt(p, "--importance-dump", default=None, help="write the final head-importance matrix as CSV")
    _opt(p, "--agentic-dump", default=None, help="write the learned tool transition chain as JSON")
    _opt(p, "--debug", action="store_true", default=False, help="check tier invariants after every event")
    _format_opt(p)

    p = sub.add_parser("project", help="analytical TTFT / throughput / cost projections")
    _config_opt(p)
    _opt(p, "--calibration", default=None, shown="[projection] calibration, the shipped file",
         help="calibration JSON")
    _format_opt(p, choices=("table", "csv", "json"))

    p = sub.add_parser("dedup-report", help="checkpoint sizes with and without deduplication")
    _config_opt(p)
    _opt(p, "--trace", required=True, shown="required", help="JSONL trace path")
    _opt(p, "--models", default=None, shown="Llama-3-70B DeepSeek-V3 Mixtral-8x22B", nargs="+",
         help="models to size the checkpoints for")
    _format_opt(p)

    p = sub.add_parser("report", help="merge replay metrics files into a per-policy comparison")
    p.add_argument("metrics", nargs="+", help="metrics JSON files written by replay (default: required)")
    _format_opt(p)
    return parser


# -- subcommands ------------------------------------------------------------------


def _emit(text: str) -> None:
    sys.stdout.write(text)


def _fmt(args, cfg) -> str:
    return args.format or cfg.output.format


def cmd_size(args, cfg) -> int:
    if args.models:
        cfg = replace(cfg, sizing=replace(cfg.sizing, models=tuple(args.models)))
        reg = cfg.model_registry()
        unknown = [m for m in args.models if m not in reg]
        if unknown:
            raise cfgmod.ConfigError(f"unknown model {unknown[0]!r}; known: {sorted(reg)}")
    rows = fleet_report(cfg.sizing_models(), cfg.budget())
    _emit(format_fleet_report(rows, _fmt(args, cfg)))
    return EXIT_OK


def cmd_gen_trace(args, cfg) -> int:
    w = cfg.workload
    spec = WorkloadSpec(
        family=args.family or w.family,
        num_sessions=w.num_sessions if args.sessions is None else args.sessions,
        seed=cfg.run.seed if args.seed is None else args.seed,
        model=args.model or w.model,
    )
    trace = generate(spec)
    if args.out == "-":
        write_trace(trace, sys.stdout)
    else:
        emit(trace, args.out)
    return EXIT_OK


def _replay_config(args, cfg):
    rc = cfg.replay_config()
    pf = rc.prefetch
    if args.prefetch is not None:
        pf = replace(pf, enabled=args.prefetch == "on")
    if args.prefetch_wmin is not None or args.prefetch_wmax is not None:
        try:
            pf = replace(pf, w_min=args.prefetch_wmin if args.prefetch_wmin is not None else pf.w_min,
                         w_max=args.prefetch_wmax if args.prefetch_wmax is not None else pf.w_max)
        except ValueError as exc:
            raise cfgmod.ConfigError(f"--prefetch-wmin/--prefetch-wmax: {exc}") from None
    return replace(rc, prefetch=pf, debug=rc.debug or args.debug)


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _prom_path(metrics_path: str) -> str:
    root, ext = os.path.splitext(metrics_path)
    return (root if ext == ".json" else metrics_path) + ".prom"


def _metrics_text(m: ReplayMetrics) -> str:
    lines = [f"policy {m.policy}  seed {m.seed}  accesses {m.total_accesses}  "
             f"tier0+1 hit rate {100 * m.hit_rate_t01:.2f}%"]
    lines.append("tier  hits        promotions  demotions   used_bytes")
    for k in range(len(m.hits_by_tier)):
        lines.append(f"T{k}    {m.hits_by_tier[k]:<10}  {m.promotions_by_tier[k]:<10}  "
                     f"{m.demotions_by_tier[k]:<10}  {m.used_bytes_by_tier[k]}")
    lines.append(f"miss  {m.misses}")
    return "\n".join(lines) + "\n"


def cmd_replay(args, cfg) -> int:
    rc = _replay_config(args, cfg)
    trace = parse(args.trace)
    events = order_events(trace.events)
    validate_trace(events, rc)
    policy = PolicyKind(args.policy or cfg.run.policy)
    seed = cfg.run.seed if args.seed is None else args.seed
    engine = ReplayEngine(rc, policy, seed)
    m = engine.run(events)
    metrics_out = args.metrics_out or cfg.output.metrics_out
    if metrics_out:
        _write(metrics_out, m.dumps())
        write_prometheus(_prom_path(metrics_out), [m])
    if args.predictor_dump:
        _write(args.predictor_dump, engine.predictor.dumps())
    if args.importance_dump:
        _write(args.importance_dump, engine.matrix.to_csv())
    if args.agentic_dump:
        _write(args.agentic_dump, engine.chain.dumps())
    fmt = _fmt(args, cfg)
    if fmt == "json":
        _emit(m.dumps())
    elif fmt == "csv":
        _emit("tier,hits,promotions,demotions,used_bytes\n" + "".join(
            f"{k},{m.hits_by_tier[k]},{m.promotions_by_tier[k]},{m.demotions_by_tier[k]},{m.used_bytes_by_tier[k]}\n"
            for k in range(len(m.hits_by_tier))) + f"miss,{m.misses},,,\n")
    else:
        _emit(_metrics_text(m))
    return EXIT_OK


def cmd_project(args, cfg) -> int:
    path = args.calibration or cfg.projection.calibration or None
    try:
        calib = Calibration.load(path)
    except OSError as exc:
        raise cfgmod.ConfigError(f"{path}: {exc.strerror}") from None
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise cfgmod.ConfigError(f"{path}: malformed calibration ({exc})") from None
    fmt = args.format or "table"
    _emit(format_report(project_report(calib), fmt))
    return EXIT_OK


DEDUP_MODELS = ("Llama-3-70B", "DeepSeek-V3", "Mixtral-8x22B")


def cmd_dedup_report(args, cfg) -> int:
    trace = parse(args.trace)
    reg = cfg.model_registry()
    names = args.models or list(DEDUP_MODELS)
    unknown = [n for n in names if n not in reg]
    if unknown:
        raise cfgmod.ConfigError(f"unknown model {unknown[0]!r}; known: {sorted(reg)}")
    trace_model = PRESETS.get(trace.header.get("model", ""), PRESETS["Llama-3-70B"])
    per_token = sequence_kv_bytes(trace_model, 1)
    rows = [session_checkpoints(trace.events, reg[n], per_token) for n in names]
    _emit(format_dedup_rows(rows, _fmt(args, cfg)))
    return EXIT_OK


def load_metrics_files(paths: Sequence[str]) -> list[ReplayMetrics]:
    docs = []
    for path in paths:
        try:
            with open(path, encoding="utf-8") as fh:
                docs.append((path, json.load(fh)))
        except OSError as exc:
            raise cfgmod.ConfigError(f"{path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise cfgmod.ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
    versions = {}
    for path, doc in docs:
        versions.setdefault(doc.get("schema_version") if isinstance(doc, dict) else None, path)
    if len(versions) > 1:
        (va, pa), (vb, pb) = sorted(versions.items(), key=lambda kv: str(kv[0]))[:2]
        raise cfgmod.ConfigError(f"schema_version mismatch: {pa} has {va}, {pb} has {vb}")
    out = []
    for path, doc in docs:
        try:
            out.append(ReplayMetrics.from_json(doc))
        except (KeyError, TypeError, ValueError) as exc:
            raise cfgmod.ConfigError(f"{path}: {exc}") from None
    return out


def format_metrics_report(runs: Sequence[ReplayMetrics], fmt: str = "text") -> str:
    order = [k.value for k in PolicyKind]
    by_policy: dict[str, list[ReplayMetrics]] = {}
    for m in runs:
        by_policy.setdefault(m.policy, []).append(m)
    rows = []
    for policy in sorted(by_policy, key=lambda p: order.index(p) if p in order else len(order)):
        ms = sorted(by_policy[policy], key=lambda m: m.seed)
        rates = [m.hit_rate_t01 for m in ms]
        sd = statistics.stdev(rates) if len(rates) > 1 else 0.0
        rows.append((policy, [m.seed for m in ms], statistics.fmean(rates), sd, rates))
    if fmt == "json":
        return json.dumps({"schema_version": SCHEMA_VERSION, "policies": [
            {"policy": p, "runs": len(s), "seeds": s, "mean_hit_rate_t01": mean, "stdev": sd, "rates": rates}
            for p, s, mean, sd, rates in rows]}, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        return "policy,runs,mean_hit_rate_t01,stdev\n" + "".join(
            f"{p},{len(s)},{mean:.6f},{sd:.6f}\n" for p, s, mean, sd, _ in rows)
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    lines = ["Policy      Runs  Tier 0+1 hit"]
    for p, s, mean, sd, _ in rows:
        lines.append(f"{p:<10}  {len(s):>4}  {100 * mean:5.1f} +/- {100 * sd:.1f}%")
    return "\n".join(lines) + "\n"


def cmd_report(args, cfg) -> int:
    runs = load_metrics_files(args.metrics)
    _emit(format_metrics_report(runs, args.format or "text"))
    return EXIT_OK


COMMANDS = {
    "size": cmd_size,
    "gen-trace": cmd_gen_trace,
    "replay": cmd_replay,
    "project": cmd_project,
    "dedup-report": cmd_dedup_report,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        cfg = cfgmod.load(getattr(args, "config", "defaults"))
        return COMMANDS[args.command](args, cfg)
    except (cfgmod.ConfigError, ParseError) as exc:
        print(f"kvtier {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (AssertionError, TierError) as exc:
        print(f"kvtier {args.command}: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except ValueError as exc:
        print(f"kvtier {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
