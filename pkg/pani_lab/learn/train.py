# pani_lab/learn/train.py
import json
import math
from pathlib import Path

from loguru import logger
import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict
from tqdm import tqdm

from ..common.utils import append_csv_rows
from ..core.dataset import ChainSimulator, TransitionDataset
from ..core.exceptions import DatasetFormatError, TrainingDivergenceError
from ..core.noise import ActionBox
from . import agents
from .agents import Agent, Algorithm, Batch, TrainConfig, init_agent
from .diagnostics import agent_policy, evaluate_policy, ood_overestimation_probability
from .mlp import Mlp, adam_init

METRIC_COLUMNS = ["step", "critic_loss", "actor_loss", "value_loss", "eval_return", "ood_probability"]
AGENT_FORMAT = "pani-lab-agent"


class TrainResult(BaseModel):
    agent: Agent
    metrics: pd.DataFrame

    model_config = ConfigDict(arbitrary_types_allowed=True)


def spawn_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent streams for initialisation and for batches plus noise."""
    init_seq, run_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(run_seq)


def train_step(agent: Agent, batch: Batch, config: TrainConfig, rng: np.random.Generator) -> dict[str, float]:
    """
    One iteration. TD3-AN: critics every step; actor and Polyak only when the
    step count divides by policy_delay. IQL-AN: value, then critics, then actor,
    then Polyak on the critic targets.
    """
    agent.step += 1
    losses: dict[str, float] = {}
    if config.algorithm is Algorithm.TD3AN:
        losses["critic_loss"] = agents.td3an_critic_update(agent, batch, config, rng)
        if agent.step % config.policy_delay == 0:
            losses["actor_loss"] = agents.td3an_actor_update(agent, batch, config)
            agents.update_targets(agent, config.polyak)
    else:
        losses["value_loss"] = agents.iqlan_value_update(agent, batch, config)
        losses["critic_loss"] = agents.iqlan_critic_update(agent, batch, config, rng)
        losses["actor_loss"] = agents.iqlan_actor_update(agent, batch, config, rng)
        agents.update_targets(agent, config.polyak)
    for name, value in losses.items():
        if not math.isfinite(value):
            raise TrainingDivergenceError(agent.step, name, value)
    return losses


def train(
    dataset: TransitionDataset,
    config: TrainConfig,
    simulator: ChainSimulator | None = None,
    metrics_path: Path | None = None,
    digest: str = "",
    progress: bool = False,
) -> TrainResult:
    """
    Full training loop, deterministic given ``config.seed``. Metrics rows are
    appended to ``metrics_path`` every ``log_interval`` steps, so an interrupted
    run still leaves a readable CSV.
    """
    if len(dataset) == 0:
        raise DatasetFormatError("cannot train on an empty dataset")
    init_rng, run_rng = spawn_rngs(config.seed)
    agent = init_agent(config, dataset.state_dim, dataset.box, init_rng)
    logger.info(
        f"Training {config.algorithm} for {config.steps} steps "
        f"(noise={config.noise.family if config.noise else 'none'}, batch={config.batch})"
    )
    last: dict[str, float] = {}
    rows = []
    n = len(dataset)
    for _ in tqdm(range(config.steps), disable=not progress, desc=str(config.algorithm)):
        idx = run_rng.integers(0, n, size=config.batch)
        last.update(train_step(agent, Batch.from_dataset(dataset, idx), config, run_rng))
        if agent.step % config.log_interval == 0 or agent.step == config.steps:
            row = {column: math.nan for column in METRIC_COLUMNS}
            row.update(last)
            row["step"] = agent.step
            if simulator is not None:
                row["eval_return"] = evaluate_policy(
                    simulator, agent_policy(agent), config.eval_episodes
                ).mean_discounted
            if config.ood_samples > 0:
                # separate stream; run_rng draws are unchanged
                ood_rng = np.random.default_rng([config.seed, agent.step])
                row["ood_probability"] = ood_overestimation_probability(
                    agent, dataset, config.ood_samples, ood_rng
                ).probability
            rows.append(row)
            if metrics_path is not None:
                append_csv_rows(pd.DataFrame([row], columns=METRIC_COLUMNS), metrics_path, digest)
            logger.debug(f"step {agent.step}: " + ", ".join(f"{k}={v:.4g}" for k, v in last.items()))
    return TrainResult(agent=agent, metrics=pd.DataFrame(rows, columns=METRIC_COLUMNS))


# --- Persistence ---


def save_agent(agent: Agent, path: Path, echo: dict | None = None) -> Path:
    """``.npz`` with one array per ``network.param`` plus a JSON header entry."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nets = agent.networks()
    header = {
        "format": AGENT_FORMAT,
        "config": agent.config.model_dump(mode="json"),
        "state_dim": agent.state_dim,
        "box": agent.box.model_dump(mode="json"),
        "step": agent.step,
        "networks": {name: {"layer_dims": net.layer_dims, "layer_norm": net.layer_norm} for name, net in nets.items()},
        "echo": echo or {},
    }
    arrays = {f"{name}.{key}": value for name, net in nets.items() for key, value in net.params.items()}
    with open(path, "wb") as f:
        np.savez(f, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    logger.info(f"Saved agent ({len(arrays)} tensors) to {path}")
    return path


def load_agent(path: Path) -> Agent:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != AGENT_FORMAT:
            raise DatasetFormatError(f"{path} is not an agent file")
        nets: dict[str, Mlp] = {}
        for name, spec in header["networks"].items():
            prefix = f"{name}."
            params = {k[len(prefix):]: data[k].copy() for k in data.files if k.startswith(prefix)}
            nets[name] = Mlp(layer_dims=spec["layer_dims"], layer_norm=spec["layer_norm"], params=params)
    optimizers = {name: adam_init(nets[name].params) for name in ("actor", "q1", "q2", "value") if name in nets}
    return Agent(
        config=TrainConfig.model_validate(header["config"]),
        state_dim=header["state_dim"],
        box=ActionBox.model_validate(header["box"]),
        optimizers=optimizers,
        step=header["step"],
        **nets,
    )
