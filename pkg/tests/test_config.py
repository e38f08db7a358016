import logging
from pathlib import Path

import pytest

from tae.config import EngineConfig, Settings, dump_config, load_config, parse_config
from tae.errors import ConfigError

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def test_defaults():
    cfg = EngineConfig()
    assert cfg.train.epochs == 30
    assert cfg.train.batch_size == 16
    assert cfg.train.learning_rate == 1e-4
    assert cfg.train.weight_decay == 1e-4
    assert cfg.train.input_size == 256
    assert cfg.train.mode == "TA+MC"
    w = cfg.train.loss_weights
    assert (w.lambda_loc, w.lambda_1, w.lambda_2, w.lambda_3) == (1.0, 1.0, 0.2, 0.1)
    assert (cfg.train.exposure.patch, cfg.train.exposure.target_E) == (16, 0.6)
    assert cfg.guidance.channels == 16
    assert cfg.metrics.precision_at_px == 20


def test_sub_seeds_inherit_global_seed():
    cfg = parse_config({"seed": 42, "synth": {"seed": 3}})
    assert cfg.train.seed == 42
    assert cfg.synth.seed == 3


def test_default_yaml_matches_schema_defaults():
    assert load_config(CONFIG_DIR / "default.yaml") == EngineConfig()


def test_synth_yaml_loads():
    cfg = load_config(CONFIG_DIR / "synth.yaml")
    assert cfg.seed == 7
    assert cfg.tracker.template_size is not None
    assert cfg.tracker.template_size > cfg.synth.target_size


@pytest.mark.parametrize(
    "data,key",
    [
        ({"train": {"epochs": 1, "learning_rat": 0.1}}, "train.learning_rat"),
        ({"bogus": 1}, "bogus"),
        ({"train": {"mode": "TA+XX"}}, "train.mode"),
        ({"train": {"loss_weights": {"lambda_1": -1}}}, "train.loss_weights.lambda_1"),
        ({"train": {"exposure": {"target_E": 1.5}}}, "train.exposure.target_E"),
    ],
)
def test_invalid_values_name_the_key(data, key):
    with pytest.raises(ConfigError) as info:
        parse_config(data)
    assert str(info.value).startswith(f"{key}:")


def test_zero_epochs_and_zero_lr_allowed():
    cfg = parse_config({"train": {"epochs": 0, "learning_rate": 0.0}})
    assert cfg.train.epochs == 0
    assert cfg.train.learning_rate == 0.0


def test_dump_and_reload(tmp_path):
    cfg = parse_config({"seed": 3, "train": {"mode": "TA", "hflip": True}, "paths": {"dataset_root": "data/x"}})
    path = tmp_path / "c.yaml"
    text = dump_config(cfg, path)
    assert "mode: TA" in text
    assert load_config(path) == cfg


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("", encoding="utf-8")
    assert load_config(path) == EngineConfig()
    assert load_config(None) == EngineConfig()


@pytest.mark.parametrize("text", ["- a\n- b\n", "train: [unclosed\n"])
def test_bad_yaml(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("TAE_LOG_LEVEL", "debug")
    monkeypatch.setenv("TAE_JOBS", "3")
    monkeypatch.setenv("TAE_LOG_FORMAT", "json")
    s = Settings(_env_file=None)
    assert s.log_level_number == logging.DEBUG
    assert s.jobs == 3
    assert s.log_format == "json"


def test_unknown_log_level_falls_back_to_info(monkeypatch):
    monkeypatch.setenv("TAE_LOG_LEVEL", "chatty")
    assert Settings(_env_file=None).log_level_number == logging.INFO
