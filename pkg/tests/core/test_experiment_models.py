# tests/core/test_experiment_models.py
import math

import pytest

from pani_lab.config import CONFIGS_DIR
from pani_lab.core.exceptions import ConfigError
from pani_lab.core.experiment_models import (
    DatasetConfig,
    DatasetKind,
    ExperimentConfig,
    NoiseConfig,
    load_experiment_config,
)
from pani_lab.core.noise import ActionBox, NoiseFamily


def write_yaml(tmp_path, text):
    path = tmp_path / "experiment.yaml"
    path.write_text(text, encoding="utf-8")
    return path


def test_missing_path_gives_defaults():
    config = load_experiment_config(None)
    assert config == ExperimentConfig()
    assert config.namdp.gamma == 0.9
    assert config.sweep.n_cells == 60


def test_file_sections_override_defaults(tmp_path):
    path = write_yaml(tmp_path, "seed: 7\nnoise:\n  family: laplace\n  log_sigma: -2\nnamdp:\n  grid_points: 41\n")
    config = load_experiment_config(path)
    assert config.seed == 7
    assert config.noise.family is NoiseFamily.LAPLACE
    assert config.noise.resolved_sigma == pytest.approx(math.exp(-2))
    assert config.namdp.grid_points == 41


def test_unknown_key_is_named(tmp_path):
    path = write_yaml(tmp_path, "train:\n  stepz: 10\n")
    with pytest.raises(ConfigError, match="unknown key 'train.stepz'"):
        load_experiment_config(path)


def test_bad_value_names_its_location(tmp_path):
    path = write_yaml(tmp_path, "namdp:\n  gamma: 1.5\n")
    with pytest.raises(ConfigError, match="namdp.gamma"):
        load_experiment_config(path)


@pytest.mark.parametrize("text", ["- just\n- a list\n", "seed: [unclosed\n"])
def test_malformed_files_are_config_errors(tmp_path, text):
    with pytest.raises(ConfigError):
        load_experiment_config(write_yaml(tmp_path, text))


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_experiment_config(tmp_path / "absent.yaml")


def test_flags_override_file_values():
    config = ExperimentConfig().with_overrides("namdp", grid_points=11, gamma=None)
    assert config.namdp.grid_points == 11
    assert config.namdp.gamma == 0.9
    assert ExperimentConfig().with_overrides("namdp", gamma=None) == ExperimentConfig()


def test_invalid_flag_value_is_config_error():
    with pytest.raises(ConfigError, match="verify.seeds"):
        ExperimentConfig().with_overrides("verify", seeds=0)


def test_flag_scale_replaces_file_scale():
    config = ExperimentConfig(noise=NoiseConfig(log_sigma=-3.0))
    updated = config.with_noise(sigma=0.2)
    assert updated.noise.log_sigma is None
    assert updated.noise.resolved_sigma == 0.2
    assert config.with_noise(family=NoiseFamily.HYBRID).noise.log_sigma == -3.0


def test_both_scales_rejected():
    with pytest.raises(ConfigError, match="either sigma or log_sigma"):
        ExperimentConfig().with_noise(sigma=0.1, log_sigma=-1.0)


def test_disabled_noise_has_no_spec():
    noise = ExperimentConfig().with_noise(enabled=False).noise
    assert noise.to_spec(ActionBox.symmetric(1.0)) is None


def test_echo_keeps_requested_sections():
    echo = ExperimentConfig().echo("dataset")
    assert set(echo) == {"seed", "output_dir", "dataset"}
    assert echo["dataset"]["kind"] == "bandit1d"


@pytest.mark.parametrize("kind", list(DatasetKind))
def test_every_dataset_kind_generates(kind):
    dataset, simulator = DatasetConfig(kind=kind, points_per_ring=4, points_per_arm=4).generate(seed=0)
    assert len(dataset) > 0
    assert (simulator is not None) == (kind is DatasetKind.CHAIN)


@pytest.mark.parametrize("path", sorted(CONFIGS_DIR.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    config = load_experiment_config(path)
    assert isinstance(config, ExperimentConfig)


def test_shipped_configs_present():
    names = {p.name for p in CONFIGS_DIR.glob("*.yaml")}
    assert names == {
        "sweep_config_pani_lab.yaml",
        "training_config_pani_lab.yaml",
        "verification_config_pani_lab.yaml",
    }
