# tests/conftest.py
import numpy as np
import pytest

from pani_lab.core.dataset import gen_bandit1d, gen_chain_env
from pani_lab.learn.agents import TrainConfig


@pytest.fixture(autouse=True)
def isolated_output_dir(tmp_path, monkeypatch):
    """Keeps every default output directory inside the test's tmp_path."""
    out = tmp_path / "runs"
    monkeypatch.setenv("PANI_LAB_OUTPUT_DIR", str(out))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def bandit():
    return gen_bandit1d()


@pytest.fixture
def chain():
    """(simulator, dataset) for the default 5-state chain."""
    return gen_chain_env(seed=0)


@pytest.fixture
def small_train_config():
    """Tiny networks and few steps so training tests stay fast."""
    return TrainConfig(
        steps=20,
        batch=16,
        hidden_dim=8,
        hidden_layers=2,
        log_interval=5,
        eval_episodes=2,
    )
