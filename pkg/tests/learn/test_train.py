# tests/learn/test_train.py
import json

import numpy as np
import pytest

from pani_lab.common.utils import read_echo_csv
from pani_lab.core.dataset import Transition, TransitionDataset
from pani_lab.core.exceptions import DatasetFormatError, TrainingDivergenceError
from pani_lab.core.noise import ActionBox, NoiseFamily, NoiseSpec
from pani_lab.learn import agents
from pani_lab.learn.agents import Algorithm, Batch, act, init_agent
from pani_lab.learn.train import METRIC_COLUMNS, load_agent, save_agent, train, train_step


def with_noise(config, box, family=NoiseFamily.HYBRID, sigma=0.3):
    return config.model_copy(update={"noise": NoiseSpec(family=family, sigma=sigma, box=box)})


def test_training_is_deterministic(chain, small_train_config):
    _, data = chain
    config = with_noise(small_train_config, data.box)
    first = train(data, config)
    second = train(data, config)
    assert first.metrics.equals(second.metrics)
    for key, value in first.agent.actor.params.items():
        np.testing.assert_array_equal(value, second.agent.actor.params[key])


def test_metrics_rows_and_file(chain, small_train_config, tmp_path):
    simulator, data = chain
    path = tmp_path / "metrics.csv"
    result = train(data, with_noise(small_train_config, data.box), simulator=simulator,
                   metrics_path=path, digest="feed")
    assert result.metrics["step"].tolist() == [5, 10, 15, 20]
    assert result.metrics["eval_return"].notna().all()
    ood = result.metrics["ood_probability"].to_numpy(dtype=float)
    assert np.isfinite(ood).all()
    assert ((ood >= 0.0) & (ood <= 1.0)).all()
    assert path.read_text().startswith("# config_sha256: feed")
    frame = read_echo_csv(path)
    assert list(frame.columns) == METRIC_COLUMNS
    assert len(frame) == 4


@pytest.mark.parametrize("stochastic", [False, True])
def test_ood_metric_leaves_the_training_stream_alone(chain, small_train_config):
    _, data = chain
    config = with_noise(small_train_config, data.box)
    measured = train(data, config)
    skipped = train(data, config.model_copy(update={"ood_samples": 0}))
    assert skipped.metrics["ood_probability"].isna().all()
    for key, value in measured.agent.actor.params.items():
        np.testing.assert_array_equal(value, skipped.agent.actor.params[key])


def test_iqlan_trains(bandit, small_train_config, stochastic):
    config = small_train_config.model_copy(
        update={"algorithm": Algorithm.IQLAN, "stochastic_actor": stochastic, "actor_entropy_alpha": 0.1}
    )
    result = train(bandit, with_noise(config, bandit.box, NoiseFamily.GAUSSIAN))
    last = result.metrics.iloc[-1]
    assert np.isfinite(last[["critic_loss", "actor_loss", "value_loss"]].to_numpy(dtype=float)).all()


def test_training_without_noise(bandit, small_train_config):
    result = train(bandit, small_train_config)
    assert result.agent.step == small_train_config.steps


def test_overflowing_loss_stops_training(small_train_config):
    rows = [Transition(s=[0.0], a=[0.0], r=1e200, s2=[0.0], done=True)]
    data = TransitionDataset.from_transitions(rows, box=ActionBox.symmetric(1.0))
    with pytest.raises(TrainingDivergenceError) as info:
        train(data, small_train_config)
    assert info.value.step == 1
    assert info.value.loss_name == "critic_loss"


def test_saved_agent_acts_identically(chain, small_train_config, tmp_path):
    _, data = chain
    result = train(data, with_noise(small_train_config, data.box))
    path = save_agent(result.agent, tmp_path / "agent.npz", echo={"note": "x"})
    loaded = load_agent(path)
    states = data.states[:10]
    np.testing.assert_array_equal(act(loaded, states), act(result.agent, states))
    assert loaded.config == result.agent.config
    assert loaded.step == result.agent.step


def test_foreign_npz_is_rejected(tmp_path):
    path = tmp_path / "other.npz"
    np.savez(path, header=np.array(json.dumps({"format": "something-else"})))
    with pytest.raises(DatasetFormatError, match="not an agent file"):
        load_agent(path)


def snapshot(net):
    return {k: v.copy() for k, v in net.params.items()}


def changed(net, before):
    return any(not np.array_equal(v, before[k]) for k, v in net.params.items())


def test_td3an_actor_and_targets_wait_for_policy_delay(bandit, small_train_config, rng):
    config = with_noise(small_train_config.model_copy(update={"policy_delay": 3}), bandit.box)
    agent = init_agent(config, bandit.state_dim, bandit.box, rng)
    batch = Batch.from_dataset(bandit, np.array([0, 1, 0, 1]))
    for step in range(1, 7):
        actor, actor_target, q1_target = snapshot(agent.actor), snapshot(agent.actor_target), snapshot(agent.q1_target)
        q1 = snapshot(agent.q1)
        losses = train_step(agent, batch, config, rng)
        delayed = step % 3 == 0
        assert changed(agent.q1, q1)
        assert changed(agent.actor, actor) == delayed
        assert changed(agent.actor_target, actor_target) == delayed
        assert changed(agent.q1_target, q1_target) == delayed
        assert ("actor_loss" in losses) == delayed


def test_iqlan_updates_value_then_critics_then_actor(bandit, small_train_config, rng, monkeypatch):
    config = with_noise(small_train_config.model_copy(update={"algorithm": Algorithm.IQLAN}), bandit.box,
                        NoiseFamily.GAUSSIAN)
    agent = init_agent(config, bandit.state_dim, bandit.box, rng)
    calls = []
    for name in ("iqlan_value_update", "iqlan_critic_update", "iqlan_actor_update", "update_targets"):
        original = getattr(agents, name)

        def recorder(*args, _name=name, _original=original, **kwargs):
            calls.append(_name)
            return _original(*args, **kwargs)

        monkeypatch.setattr(agents, name, recorder)

    train_step(agent, Batch.from_dataset(bandit, np.array([0, 1])), config, rng)
    assert calls == ["iqlan_value_update", "iqlan_critic_update", "iqlan_actor_update", "update_targets"]
