"""Config schema parsing, overrides, and snapshot round-trips."""

import pytest

from diffdrive.config import (
    SCHEMA,
    apply_overrides,
    default_config,
    format_snapshot,
    load_config,
    parse_config_text,
    write_snapshot,
)
from diffdrive.errors import ConfigError


def test_defaults_cover_every_key():
    cfg = default_config()
    assert set(cfg) == set(SCHEMA)
    assert cfg["train.batch_size"] == 64
    assert cfg["schedule.steps"] == 100
    assert cfg["model.horizon"] == 8
    assert cfg["model.top_k"] == 2
    assert cfg["model.n_experts"] == 8
    assert cfg["model.p_drop"] == 0.3


def test_parse_assignments_comments_and_blanks():
    text = """
# a comment line
run.seed = 7

train.lr = 2e-4   # trailing comment
eval.latency = true
model.preset = medium
"""
    cfg = parse_config_text(text)
    assert cfg["run.seed"] == 7
    assert cfg["train.lr"] == pytest.approx(2e-4)
    assert cfg["eval.latency"] is True
    assert cfg["model.preset"] == "medium"
    assert cfg["train.steps"] == 2000  # untouched default


def test_parse_rejects_unknown_key_with_location():
    with pytest.raises(ConfigError) as err:
        parse_config_text("run.seeed = 3", source="bad.cfg")
    assert "bad.cfg:1" in str(err.value)
    assert "run.seeed" in str(err.value)


def test_parse_rejects_bad_syntax_and_types():
    with pytest.raises(ConfigError):
        parse_config_text("run.seed 3")
    with pytest.raises(ConfigError):
        parse_config_text("run.seed = soon")
    with pytest.raises(ConfigError):
        parse_config_text("eval.latency = maybe")
    with pytest.raises(ConfigError):
        parse_config_text("train.lr = fast")


def test_parse_rejects_duplicate_key():
    with pytest.raises(ConfigError) as err:
        parse_config_text("run.seed = 1\nrun.seed = 2")
    assert "duplicate" in str(err.value)


def test_apply_overrides_parses_strings_and_checks_types():
    cfg = default_config()
    out = apply_overrides(cfg, {"run.seed": "9", "train.lr": "1e-3",
                                "eval.latency": "true",
                                "data.scenario": "roundabout"})
    assert out["run.seed"] == 9
    assert out["train.lr"] == pytest.approx(1e-3)
    assert out["eval.latency"] is True
    assert cfg["run.seed"] == 0  # original untouched
    with pytest.raises(ConfigError):
        apply_overrides(cfg, {"nope.key": "1"})
    with pytest.raises(ConfigError):
        apply_overrides(cfg, {"run.seed": "one"})


def test_snapshot_round_trips_exactly(tmp_path):
    cfg = apply_overrides(default_config(), {
        "run.seed": "42", "train.lr": "3e-05", "eval.latency": "true",
        "schedule.beta_start": "0.0001", "model.preset": "large"})
    path = tmp_path / "config.snapshot"
    write_snapshot(cfg, path)
    again = load_config(path)
    assert again == cfg
    # deterministic output: keys sorted, one per line
    text = format_snapshot(cfg)
    keys = [ln.split(" = ")[0] for ln in text.strip().split("\n")]
    assert keys == sorted(keys)
    assert len(keys) == len(SCHEMA)


def test_load_config_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")
