import pytest

from kvtier import config as cfgmod
from kvtier.config import ConfigError, RunConfig, defaults_text, from_mapping, load, render_defaults

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib


def test_shipped_defaults_match_code():
    assert tomllib.loads(defaults_text()) == tomllib.loads(render_defaults())


def test_defaults_load_to_dataclass_defaults():
    assert load("defaults", environ={}) == RunConfig()
    assert load(None, environ={}) == RunConfig()


def test_unknown_key_names_location(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[predictor]\nk_zero = 3\n")
    with pytest.raises(ConfigError, match=r"c\.toml: predictor\.k_zero.*unknown key"):
        load(str(path), environ={})


def test_unknown_section(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[nope]\nx = 1\n")
    with pytest.raises(ConfigError, match=r"unknown section \[nope\]"):
        load(str(path), environ={})


def test_missing_file():
    with pytest.raises(ConfigError, match="does-not-exist"):
        load("/does-not-exist.toml", environ={})


def test_bad_toml(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[run\n")
    with pytest.raises(ConfigError, match="c.toml"):
        load(str(path), environ={})


def test_env_override_wins():
    cfg = from_mapping({"run": {"seed": 3}}, environ={"KVTIER_RUN_SEED": "7", "KVTIER_REPLAY_DEBUG": "true",
                                                     "KVTIER_WORKLOAD_FAMILY": "agentic"})
    assert cfg.run.seed == 7
    assert cfg.replay.debug is True
    assert cfg.workload.family == "agentic"


def test_env_unknown_key_and_section():
    with pytest.raises(ConfigError, match="environment KVTIER_RUN_SEEDS"):
        from_mapping({}, environ={"KVTIER_RUN_SEEDS": "1"})
    with pytest.raises(ConfigError, match="unknown section"):
        from_mapping({}, environ={"KVTIER_BOGUS_X": "1"})


def test_env_ignores_other_variables():
    assert from_mapping({}, environ={"HOME": "/root", "KVTIERX": "1"}) == RunConfig()


@pytest.mark.parametrize("doc, match", [
    ({"run": {"seed": "zero"}}, "expected an integer"),
    ({"run": {"seed": True}}, "expected an integer"),
    ({"replay": {"debug": 1}}, "expected a boolean"),
    ({"replay": {"capacity_scale": "big"}}, "expected a number"),
    ({"workload": {"family": 3}}, "expected a string"),
    ({"sizing": {"models": "DeepSeek-V3"}}, "expected an array"),
])
def test_type_errors(doc, match):
    with pytest.raises(ConfigError, match=match):
        from_mapping(doc, environ={})


def test_integral_float_accepted():
    assert from_mapping({"run": {"seed": 4.0}}, environ={}).run.seed == 4


@pytest.mark.parametrize("doc", [
    {"run": {"policy": "fifo"}},
    {"run": {"seed": -1}},
    {"workload": {"family": "nope"}},
    {"workload": {"num_sessions": -1}},
    {"sizing": {"models": ["nope"]}},
    {"replay": {"model": "nope"}},
    {"output": {"format": "xml"}},
    {"predictor": {"alpha0": -1.0}},
])
def test_semantic_errors(doc):
    with pytest.raises(ConfigError):
        from_mapping(doc, environ={})


def test_models_table():
    doc = {"models": {"tiny": {"num_layers": 2, "query_heads": 4, "kv_heads": 2, "head_dim": 64}},
           "sizing": {"models": ["tiny", "DeepSeek-V3"]}}
    cfg = from_mapping(doc, environ={})
    assert [m.name for m in cfg.sizing_models()] == ["tiny", "DeepSeek-V3"]


def test_models_table_unknown_key():
    doc = {"models": {"tiny": {"num_layers": 2, "query_heads": 4, "kv_heads": 2, "head_dim": 64, "x": 1}}}
    with pytest.raises(ConfigError, match=r"\[models\.tiny\].*models\.tiny\.x"):
        from_mapping(doc, environ={})


def test_replay_config_passthrough():
    cfg = from_mapping({"replay": {"capacity_scale": 0.5, "age_half_life_s": 0}}, environ={})
    rc = cfg.replay_config()
    assert rc.capacity_scale == 0.5
    assert rc.age_half_life_s is None
    assert rc.prefetch.enabled is False


def test_every_section_rendered():
    text = render_defaults()
    for name in cfgmod.SECTIONS:
        assert f"[{name}]" in text
