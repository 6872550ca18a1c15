# pani_lab/core/experiment_models.py
"""
Configuration models: code defaults, overridden by a YAML file with one
section per module, overridden in turn by explicit CLI flags.
"""
from enum import StrEnum
import math
from pathlib import Path
from typing import Any

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
import yaml

from ..learn.agents import Algorithm, TrainConfig
from .dataset import (
    ChainSimulator,
    StateKey,
    TransitionDataset,
    gen_bandit1d,
    gen_chain_env,
    gen_pinwheel,
    gen_rings,
)
from .exceptions import ConfigError
from .noise import ActionBox, NoiseFamily, NoiseSpec

DEFAULT_LOG_SIGMAS = [-1.0, -5.0, -10.0, -20.0]
DEFAULT_NOISE_SIGMA = 0.1


class DatasetKind(StrEnum):
    BANDIT1D = "bandit1d"
    RINGS = "rings"
    PINWHEEL = "pinwheel"
    CHAIN = "chain"


class DatasetConfig(BaseModel):
    kind: DatasetKind = DatasetKind.BANDIT1D
    # rings
    n_rings: int = Field(default=3, ge=1)
    points_per_ring: int = Field(default=128, ge=1)
    radii: list[float] = Field(default_factory=lambda: [0.3, 0.6, 0.9])
    ring_rewards: list[float] = Field(default_factory=lambda: [1.0, 0.5, 0.0])
    jitter: float = Field(default=0.02, ge=0.0)
    # pinwheel
    n_arms: int = Field(default=5, ge=2)
    points_per_arm: int = Field(default=128, ge=1)
    # chain
    n_states: int = Field(default=5, ge=3)
    band_center: float = 0.5
    band_width: float = Field(default=0.2, gt=0.0)
    goal_reward: float = 1.0
    chain_gamma: float = Field(default=0.99, gt=0.0, lt=1.0)
    samples_per_state: int = Field(default=20, ge=1)
    uniform_fraction: float = Field(default=0.5, ge=0.0, le=1.0)
    state_key_decimals: int | None = Field(default=None, ge=0)

    model_config = ConfigDict(extra="forbid")

    @property
    def state_key(self) -> StateKey:
        if self.state_key_decimals is None:
            return StateKey.exact()
        return StateKey.rounded(self.state_key_decimals)

    def generate(self, seed: int) -> tuple[TransitionDataset, ChainSimulator | None]:
        match self.kind:
            case DatasetKind.BANDIT1D:
                return gen_bandit1d(), None
            case DatasetKind.RINGS:
                dataset = gen_rings(
                    n_rings=self.n_rings,
                    points_per_ring=self.points_per_ring,
                    radii=tuple(self.radii),
                    ring_rewards=tuple(self.ring_rewards),
                    jitter=self.jitter,
                    seed=seed,
                )
                return dataset, None
            case DatasetKind.PINWHEEL:
                return gen_pinwheel(n_arms=self.n_arms, points_per_arm=self.points_per_arm, seed=seed), None
            case DatasetKind.CHAIN:
                simulator, dataset = gen_chain_env(
                    n_states=self.n_states,
                    band_center=self.band_center,
                    band_width=self.band_width,
                    goal_reward=self.goal_reward,
                    gamma=self.chain_gamma,
                    samples_per_state=self.samples_per_state,
                    uniform_fraction=self.uniform_fraction,
                    seed=seed,
                    state_key=self.state_key,
                )
                return dataset, simulator

    def simulator(self) -> ChainSimulator | None:
        if self.kind is not DatasetKind.CHAIN:
            return None
        return ChainSimulator(
            n_states=self.n_states,
            band_center=self.band_center,
            band_width=self.band_width,
            goal_reward=self.goal_reward,
            gamma=self.chain_gamma,
        )


class NoiseConfig(BaseModel):
    """Noise section; ``sigma`` and ``log_sigma`` are alternatives."""

    family: NoiseFamily = NoiseFamily.GAUSSIAN
    sigma: float | None = Field(default=None, gt=0.0)
    log_sigma: float | None = None
    quadrature_nodes: int = Field(default=64, gt=0)
    enabled: bool = True

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def _one_scale(self) -> "NoiseConfig":
        if self.sigma is not None and self.log_sigma is not None:
            raise ValueError("give either sigma or log_sigma, not both")
        return self

    @property
    def resolved_sigma(self) -> float:
        if self.log_sigma is not None:
            return math.exp(self.log_sigma)
        return self.sigma if self.sigma is not None else DEFAULT_NOISE_SIGMA

    def to_spec(self, box: ActionBox) -> NoiseSpec | None:
        if not self.enabled:
            return None
        return NoiseSpec(
            family=self.family, sigma=self.resolved_sigma, box=box, quadrature_nodes=self.quadrature_nodes
        )


class NamdpConfig(BaseModel):
    grid_points: int | None = Field(default=None, ge=2)
    gamma: float = Field(default=0.9, ge=0.0, lt=1.0)
    tol: float = Field(default=1e-10, gt=0.0)
    max_iter: int = Field(default=10_000, ge=1)
    mode_variances: list[float] = Field(default_factory=lambda: [0.5, 0.75, 1.0])

    model_config = ConfigDict(extra="forbid")


class SweepConfig(BaseModel):
    families: list[NoiseFamily] = Field(
        default_factory=lambda: [NoiseFamily.GAUSSIAN, NoiseFamily.LAPLACE, NoiseFamily.HYBRID]
    )
    log_sigmas: list[float] = Field(default_factory=lambda: list(DEFAULT_LOG_SIGMAS))
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    algorithm: Algorithm = Algorithm.TD3AN
    steps: int = Field(default=10_000, ge=1)
    eval_episodes: int = Field(default=10, ge=1)
    resume: bool = False
    max_workers: int | None = Field(default=None, ge=1)

    model_config = ConfigDict(extra="forbid")

    @property
    def n_cells(self) -> int:
        return len(self.families) * len(self.log_sigmas) * len(self.seeds)


class VerifyConfig(BaseModel):
    seeds: int = Field(default=100, ge=1)
    gap_tol: float = Field(default=1e-8, gt=0.0)
    theorem1_sigma: float = Field(default=0.3, gt=0.0)
    bandit_grid_points: int = Field(default=301, ge=3)
    chain_grid_points: int = Field(default=101, ge=3)
    gamma: float = Field(default=0.9, gt=0.0, lt=1.0)
    limit_max_k: int = Field(default=12, ge=1)
    limit_tol: float = Field(default=1e-4, gt=0.0)
    ground_truth_tol: float = Field(default=1e-6, gt=0.0)
    noood_sigma: float = Field(default=1e-4, gt=0.0)
    noood_epsilon: float = Field(default=1e-2, gt=0.0)
    bound_max_states: int = Field(default=5, ge=1)
    bound_max_actions: int = Field(default=4, ge=1)
    bound_samples_per_pair: int = Field(default=3, ge=1)
    mode_variances: list[float] = Field(default_factory=lambda: [0.5, 0.75, 1.0])
    expected_gaussian_modes: list[int] = Field(default_factory=lambda: [2, 2, 1])

    model_config = ConfigDict(extra="forbid")


class ExperimentConfig(BaseModel):
    seed: int = 0
    output_dir: Path | None = None
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    namdp: NamdpConfig = Field(default_factory=NamdpConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    verify: VerifyConfig = Field(default_factory=VerifyConfig)

    model_config = ConfigDict(extra="forbid")

    def echo(self, *sections: str) -> dict[str, Any]:
        """JSON-ready dump of the top-level fields plus the named sections."""
        dumped = self.model_dump(mode="json")
        keep = {"seed", "output_dir", *sections}
        return {k: v for k, v in dumped.items() if k in keep}

    def with_overrides(self, section: str, **values: Any) -> "ExperimentConfig":
        """Applies CLI flags (None means 'not given') on top of one section."""
        given = {k: v for k, v in values.items() if v is not None}
        if not given:
            return self
        try:
            current = getattr(self, section)
            updated = type(current).model_validate({**current.model_dump(), **given})
        except ValidationError as e:
            raise ConfigError(_describe(e, prefix=section)) from e
        return self.model_copy(update={section: updated})

    def with_noise(
        self,
        family: NoiseFamily | None = None,
        sigma: float | None = None,
        log_sigma: float | None = None,
        enabled: bool | None = None,
    ) -> "ExperimentConfig":
        """Noise flags; a scale given on the command line replaces whichever scale the file set."""
        values = self.noise.model_dump()
        if family is not None:
            values["family"] = family
        if sigma is not None or log_sigma is not None:
            values.update(sigma=sigma, log_sigma=log_sigma)
        if enabled is not None:
            values["enabled"] = enabled
        try:
            noise = NoiseConfig.model_validate(values)
        except ValidationError as e:
            raise ConfigError(_describe(e, prefix="noise")) from e
        return self.model_copy(update={"noise": noise})


def _describe(err: ValidationError, prefix: str | None = None) -> str:
    parts = []
    for item in err.errors():
        loc = ".".join(str(p) for p in item.get("loc", ()))
        if prefix:
            loc = f"{prefix}.{loc}" if loc else prefix
        if item.get("type") == "extra_forbidden":
            parts.append(f"unknown key '{loc}'")
        else:
            parts.append(f"{loc}: {item.get('msg')}")
    return "; ".join(parts)


def load_experiment_config(path: Path | None) -> ExperimentConfig:
    """Reads a YAML config file; missing path means all code defaults."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must hold a mapping of sections")
    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_describe(e)) from e
    logger.info(f"Loaded experiment config from {path}")
    return config
