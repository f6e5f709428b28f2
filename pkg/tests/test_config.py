"""Configuration loading: defaults, layering, strict schema, section files."""
import pytest

from viaopc.config import ConfigError, load_config, load_section
from viaopc.datagen import GenRules
from viaopc.ilt import IltConfig
from viaopc.litho import LithoModel


def test_defaults_match_component_defaults():
    cfg = load_config()
    assert cfg.seed == 0
    assert cfg.rules.to_dict() == GenRules().to_dict()
    assert cfg.litho.to_dict() == LithoModel().to_dict()
    assert cfg.ilt.to_dict() == IltConfig().to_dict()
    assert cfg.dbscan.eps == 400.0
    assert cfg.split.max_vias == 5
    assert cfg.split.window == 1024
    assert cfg.paths["figures"] == "figures"
    assert cfg.trainer["lambda0"] == 100.0


def test_file_overrides_defaults(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text("seed: 7\nilt:\n  steps: 5\nsplit:\n  eps: 300.0\n", encoding="utf-8")
    cfg = load_config(p)
    assert cfg.seed == 7
    assert cfg.ilt.steps == 5
    assert cfg.dbscan.eps == 300.0
    # untouched sections keep their defaults
    assert cfg.ilt.step_size == IltConfig().step_size
    assert cfg.split.window == 1024


def test_overrides_beat_file(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text("ilt:\n  steps: 5\n  step_size: 2.0\n", encoding="utf-8")
    cfg = load_config(p, {"ilt": {"steps": 9}})
    assert cfg.ilt.steps == 9
    assert cfg.ilt.step_size == 2.0


def test_unknown_top_level_key_rejected(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text("bogus: 1\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="bogus"):
        load_config(p)


def test_unknown_nested_key_has_crumb_path(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text("ilt:\n  stepz: 5\n", encoding="utf-8")
    with pytest.raises(ConfigError, match=r"ilt\.stepz"):
        load_config(p)


def test_bad_value_wrapped_in_config_error(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text("ilt:\n  steps: -3\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(p)


def test_non_mapping_root_rejected(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(p)


def test_section_file_bare_body(tmp_path):
    p = tmp_path / "ilt.yaml"
    p.write_text("steps: 3\nmask_steepness: 2.0\n", encoding="utf-8")
    body = load_section(p, "ilt")
    assert body["steps"] == 3
    assert body["mask_steepness"] == 2.0
    # merged over section defaults
    assert body["resist_steepness"] == IltConfig().resist_steepness


def test_section_file_named_wrapper(tmp_path):
    p = tmp_path / "model.yaml"
    p.write_text("litho:\n  resist_threshold: 0.3\n", encoding="utf-8")
    body = load_section(p, "litho")
    assert body["resist_threshold"] == 0.3


def test_section_file_unknown_key_rejected(tmp_path):
    p = tmp_path / "ilt.yaml"
    p.write_text("stepz: 3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="stepz"):
        load_section(p, "ilt")


def test_yaml_roundtrip(tmp_path):
    cfg = load_config(None, {"seed": 11, "litho": {"resist_threshold": 0.3}})
    p = tmp_path / "resolved.yaml"
    p.write_text(cfg.to_yaml(), encoding="utf-8")
    again = load_config(p)
    assert again.to_dict() == cfg.to_dict()
