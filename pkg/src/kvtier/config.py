"""Run configuration: one TOML document, environment overrides, strict validation.

Each section maps onto one parameter dataclass. Keys that no section knows
are rejected with their location. An environment variable
``KVTIER_<SECTION>_<KEY>`` overrides the file; its value is parsed as a TOML
value when it can be and kept as a string otherwise.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from typing import Any, Mapping, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .eviction import EvictionParams
from .predictor import PredictorParams
from .prefetch import PrefetchParams
from .replay import AgenticParams, ReplayConfig
from .sizing import DEFAULT_BUDGET, PRESETS, ModelConfig, SizingBudget
from .tiers import ValueScoreParams
from .traces import FAMILIES, WorkloadSpec

ENV_PREFIX = "KVTIER_"
POLICIES = ("lru", "ema", "bayesian")


class ConfigError(ValueError):
    """Invalid configuration; the message names where the bad value came from."""


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    policy: str = "bayesian"


@dataclass(frozen=True)
class SizingSection:
    models: tuple[str, ...] = tuple(PRESETS)
    m_target_bytes: int = int(DEFAULT_BUDGET.m_target_bytes)
    n_max: int = DEFAULT_BUDGET.n_max


@dataclass(frozen=True)
class ReplaySection:
    model: str = "Llama-3-70B"
    capacity_scale: float = 0.05
    label_horizon_events: int = 20_000
    age_half_life_s: float = 30.0  # 0 ranks victims by predicted reuse alone
    admit_max_tier: int = 1
    debug: bool = False


@dataclass(frozen=True)
class WorkloadSection:
    family: str = "lmsys_like"
    num_sessions: int = 1000
    model: str = "Llama-3-70B"


@dataclass(frozen=True)
class ProjectionSection:
    calibration: str = ""  # empty selects the shipped calibration


@dataclass(frozen=True)
class OutputSection:
    metrics_out: str = ""
    format: str = "text"


# section name -> dataclass type; order is the order of the defaults document
SECTIONS: dict[str, type] = {
    "run": RunSection,
    "sizing": SizingSection,
    "workload": WorkloadSection,
    "replay": ReplaySection,
    "value": ValueScoreParams,
    "predictor": PredictorParams,
    "eviction": EvictionParams,
    "prefetch": PrefetchParams,
    "agentic": AgenticParams,
    "projection": ProjectionSection,
    "output": OutputSection,
}

_SECTION_DEFAULTS: dict[str, Any] = {
    name: (PrefetchParams(enabled=False) if cls is PrefetchParams else cls()) for name, cls in SECTIONS.items()
}


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    sizing: SizingSection = field(default_factory=SizingSection)
    workload: WorkloadSection = field(default_factory=WorkloadSection)
    replay: ReplaySection = field(default_factory=ReplaySection)
    value: ValueScoreParams = field(default_factory=ValueScoreParams)
    predictor: PredictorParams = field(default_factory=PredictorParams)
    eviction: EvictionParams = field(default_factory=EvictionParams)
    prefetch: PrefetchParams = field(default_factory=lambda: PrefetchParams(enabled=False))
    agentic: AgenticParams = field(default_factory=AgenticParams)
    projection: ProjectionSection = field(default_factory=ProjectionSection)
    output: OutputSection = field(default_factory=OutputSection)
    models: Mapping[str, ModelConfig] = field(default_factory=dict)  # extra model definitions

    def model_registry(self) -> dict[str, ModelConfig]:
        reg = dict(PRESETS)
        reg.update(self.models)
        return reg

    def sizing_models(self) -> list[ModelConfig]:
        reg = self.model_registry()
        return [reg[name] for name in self.sizing.models]

    def budget(self) -> SizingBudget:
        return SizingBudget(m_target_bytes=self.sizing.m_target_bytes, n_max=self.sizing.n_max)

    def replay_config(self) -> ReplayConfig:
        r = self.replay
        return ReplayConfig(
            capacity_scale=r.capacity_scale,
            value=self.value,
            predictor=self.predictor,
            eviction=self.eviction,
            prefetch=self.prefetch,
            agentic=self.agentic,
            model=r.model,
            label_horizon_events=r.label_horizon_events,
            age_half_life_s=r.age_half_life_s or None,
            admit_max_tier=r.admit_max_tier,
            debug=r.debug,
        )

    def workload_spec(self, seed: Optional[int] = None) -> WorkloadSpec:
        w = self.workload
        return WorkloadSpec(w.family, w.num_sessions, self.run.seed if seed is None else seed, model=w.model)


def _coerce(value: Any, default: Any, where: str) -> Any:
    """Match ``value`` to the type of the default it replaces."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected an array, got {value!r}")
        if default:
            return tuple(_coerce(v, default[0], f"{where}[{i}]") for i, v in enumerate(value))
        return tuple(value)
    raise ConfigError(f"{where}: unsupported setting")


def _parse_env_value(raw: str) -> Any:
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def _env_overrides(environ: Mapping[str, str]) -> dict[str, dict[str, tuple[Any, str]]]:
    out: dict[str, dict[str, tuple[Any, str]]] = {}
    for var in sorted(environ):
        if not var.startswith(ENV_PREFIX):
            continue
        rest = var[len(ENV_PREFIX):].lower()
        section = next((s for s in SECTIONS if rest.startswith(s + "_")), None)
        if section is None:
            raise ConfigError(f"environment {var}: unknown section")
        key = rest[len(section) + 1:]
        out.setdefault(section, {})[key] = (_parse_env_value(environ[var]), f"environment {var}")
    return out


def _build_section(name: str, values: dict[str, tuple[Any, str]]):
    default = _SECTION_DEFAULTS[name]
    known = {f.name for f in fields(default)}
    kwargs = {}
    for key, (value, where) in values.items():
        if key not in known:
            raise ConfigError(f"{where}: unknown key {name}.{key}")
        kwargs[key] = _coerce(value, getattr(default, key), where)
    try:
        section = replace(default, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from None
    return section


def _build_models(doc: Mapping[str, Any], origin: str) -> dict[str, ModelConfig]:
    models = {}
    known = {f.name for f in fields(ModelConfig)} - {"name"}
    for name, table in doc.items():
        where = f"{origin}: [models.{name}]"
        if not isinstance(table, dict):
            raise ConfigError(f"{where}: expected a table")
        unknown = sorted(set(table) - known)
        if unknown:
            raise ConfigError(f"{where}: unknown key models.{name}.{unknown[0]}")
        try:
            models[name] = ModelConfig(name=name, **table)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    return models


def _validate(cfg: RunConfig) -> None:
    reg = cfg.model_registry()
    for name in cfg.sizing.models:
        if name not in reg:
            raise ConfigError(f"[sizing]: unknown model {name!r}")
    for sec in ("replay", "workload"):
        model = getattr(cfg, sec).model
        if model not in PRESETS:
            raise ConfigError(f"[{sec}]: model {model!r} must be one of {sorted(PRESETS)}")
    if cfg.workload.family not in FAMILIES:
        raise ConfigError(f"[workload]: unknown family {cfg.workload.family!r}; expected one of {FAMILIES}")
    if cfg.workload.num_sessions < 0:
        raise ConfigError("[workload]: num_sessions must be non-negative")
    if cfg.run.seed < 0:
        raise ConfigError("[run]: seed must be non-negative")
    if cfg.run.policy not in POLICIES:
        raise ConfigError(f"[run]: policy must be one of {POLICIES}")
    if cfg.output.format not in ("text", "csv", "json"):
        raise ConfigError("[output]: format must be text, csv or json")
    if cfg.replay.age_half_life_s < 0:
        raise ConfigError("[replay]: age_half_life_s must be non-negative")
    try:
        cfg.budget()
        cfg.replay_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def from_mapping(doc: Mapping[str, Any], origin: str = "<config>",
                 environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Validate a parsed document plus environment overrides into a RunConfig."""
    values: dict[str, dict[str, tuple[Any, str]]] = {}
    models: dict[str, ModelConfig] = {}
    for section, table in doc.items():
        if section == "models":
            if not isinstance(table, dict):
                raise ConfigError(f"{origin}: [models] must be a table")
            models = _build_models(table, origin)
            continue
        if section not in SECTIONS:
            raise ConfigError(f"{origin}: unknown section [{section}]")
        if not isinstance(table, dict):
            raise ConfigError(f"{origin}: [{section}] must be a table")
        values[section] = {k: (v, f"{origin}: {section}.{k}") for k, v in table.items()}
    for section, table in _env_overrides(os.environ if environ is None else environ).items():
        values.setdefault(section, {}).update(table)
    built = {name: _build_section(name, values.get(name, {})) for name in SECTIONS}
    cfg = RunConfig(models=models, **built)
    _validate(cfg)
    return cfg


def defaults_text() -> str:
    return resources.files("kvtier").joinpath("data/defaults.toml").read_text()


def load(path: Optional[str] = None, environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Load ``path`` (``None`` or ``"defaults"`` selects the shipped defaults)."""
    if path is None or path == "defaults":
        text, origin = defaults_text(), "defaults.toml"
    else:
        try:
            with open(path, "rb") as fh:
                text = fh.read().decode()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        origin = path
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    return from_mapping(doc, origin, environ)


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(type(v))


def render_defaults() -> str:
    """The defaults document as code sees it; the shipped file must match."""
    lines = []
    for name in SECTIONS:
        lines.append(f"[{name}]")
        for f in fields(_SECTION_DEFAULTS[name]):
            lines.append(f"{f.name} = {_toml_value(getattr(_SECTION_DEFAULTS[name], f.name))}")
        lines.append("")
    return "\n".join(lines)

