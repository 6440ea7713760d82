"""Tests for the experiment configuration document."""
import pytest

from porestack.config import ExperimentConfig
from porestack.errors import ConfigError


def test_defaults_match_training_recipe():
    cfg = ExperimentConfig()
    tc = cfg.train_config()
    assert tc.lr == 5e-4
    assert tc.batch_size == 4
    assert tc.max_epochs == 100
    assert tc.patience == 20
    assert (tc.beta1, tc.beta2) == (0.9, 0.999)
    assert cfg.in_steps == 5 and cfg.out_steps == 5
    assert cfg.levels == 3
    assert cfg.features == 7


def test_round_trip_is_lossless(tmp_path):
    cfg = ExperimentConfig(seed=7, family="ufno", features=4, levels=2,
                           model={"modes": 4, "width": 12},
                           train={"max_epochs": 3},
                           synth={"height": 16, "width": 16, "steps": 8})
    path = cfg.save(tmp_path / "config.json")
    loaded = ExperimentConfig.load(path)
    assert loaded == cfg
    assert loaded.to_dict() == cfg.to_dict()


def test_builders_respect_overrides():
    cfg = ExperimentConfig(seed=3, device="cpu", family="tau", features=4,
                           in_steps=2, out_steps=2,
                           model={"blocks": 1, "hidden_spatial": 4},
                           synth={"steps": 8})
    spec = cfg.model_spec()
    assert spec.family == "tau"
    assert spec.in_channels == 4
    assert (spec.in_steps, spec.out_steps) == (2, 2)
    assert spec.blocks == 1
    tc = cfg.train_config()
    assert tc.seed == 3 and tc.device == "cpu"
    assert cfg.synth_config().seed == 3
    assert cfg.synth_config(seed=9).seed == 9
    assert cfg.synth_config().steps == 8


def test_validation_rejects_bad_values():
    with pytest.raises(ConfigError):
        ExperimentConfig(features=5)
    with pytest.raises(ConfigError):
        ExperimentConfig(levels=-1)
    with pytest.raises(ConfigError):
        ExperimentConfig(sim_count=3, train_count=3)
    with pytest.raises(ConfigError, match="unknown model"):
        ExperimentConfig(model={"widht": 1})
    with pytest.raises(ConfigError, match="unknown train"):
        ExperimentConfig(train={"momentum": 0.9})
    with pytest.raises(ConfigError, match="unknown synth"):
        ExperimentConfig(synth={"depth": 3})
    # nested values still go through the target dataclass's own checks
    with pytest.raises(ConfigError):
        ExperimentConfig(family="resnet")


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown config"):
        ExperimentConfig.from_dict({"seeds": 3})


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="no config"):
        ExperimentConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        ExperimentConfig.load(bad)


def test_data_path_defaults_under_root(tmp_path):
    cfg = ExperimentConfig(root=str(tmp_path / "exp"))
    assert cfg.data_path == tmp_path / "exp" / "data"
    cfg = ExperimentConfig(root=str(tmp_path), data_dir=str(tmp_path / "d"))
    assert cfg.data_path == tmp_path / "d"
