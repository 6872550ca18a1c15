# pani_lab/core/noise.py
"""
Action-noise distributions: sampling, log-densities and limit ratios.

Every family is centred on a dataset action ``a`` and defined on an ``ActionBox``.
Gaussian and Laplace are base kernels; ``UNIFORM_MIX`` blends a uniform draw over
the box with a Gaussian of scale ``t`` using weight ``min(t, 1)``; ``HYBRID``
averages ``UNIFORM_MIX`` over ``t = exp(lambda)`` with ``lambda ~ U(log sigma, 0)``.
"""
from enum import StrEnum
import math

from loguru import logger
import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import stats
import yaml

from .exceptions import InvalidActionError, NoiseSpecError

SQRT2 = math.sqrt(2.0)
LOG_2PI = math.log(2.0 * math.pi)
# slack for actions that round just past a box face
ACTION_BOX_TOL = 1e-9


class ActionBox(BaseModel):
    """Axis-aligned action box ``[low, high]``."""

    low: tuple[float, ...]
    high: tuple[float, ...]

    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="after")
    def _check_bounds(self) -> "ActionBox":
        if len(self.low) == 0 or len(self.low) != len(self.high):
            raise ValueError(
                f"low and high must be nonempty and equally long, got {len(self.low)} and {len(self.high)}"
            )
        for i, (lo, hi) in enumerate(zip(self.low, self.high, strict=True)):
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
                raise ValueError(f"dimension {i}: need finite low < high, got [{lo}, {hi}]")
        return self

    @classmethod
    def symmetric(cls, half_width: float, dim: int = 1) -> "ActionBox":
        return cls(low=(-half_width,) * dim, high=(half_width,) * dim)

    @property
    def dim(self) -> int:
        return len(self.low)

    @property
    def lower(self) -> NDArray[np.float64]:
        return np.asarray(self.low, dtype=float)

    @property
    def upper(self) -> NDArray[np.float64]:
        return np.asarray(self.high, dtype=float)

    @property
    def center(self) -> NDArray[np.float64]:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self) -> NDArray[np.float64]:
        return 0.5 * (self.upper - self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, actions: ArrayLike, tol: float = 0.0) -> bool:
        arr = np.atleast_2d(np.asarray(actions, dtype=float))
        return bool(np.all(arr >= self.lower - tol) and np.all(arr <= self.upper + tol))

    def covers(self, other: "ActionBox") -> bool:
        return bool(np.all(self.lower <= other.lower) and np.all(other.upper <= self.upper))

    def clip(self, actions: ArrayLike) -> NDArray[np.float64]:
        return np.clip(np.asarray(actions, dtype=float), self.lower, self.upper)


class NoiseFamily(StrEnum):
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    UNIFORM_MIX = "uniform_mix"
    HYBRID = "hybrid"


BASE_KERNELS = (NoiseFamily.GAUSSIAN, NoiseFamily.LAPLACE)


class NoiseSpec(BaseModel):
    """
    A noise distribution q_sigma(.|a) on a box.

    For ``HYBRID`` sigma is the overall level (lower end of the log-uniform scale
    range) and must lie in (0, 1]; for the other families it is a scale.
    """

    family: NoiseFamily
    sigma: float = Field(gt=0.0, allow_inf_nan=False)
    box: ActionBox
    quadrature_nodes: int = Field(default=64, gt=0)

    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="after")
    def _check_hybrid_level(self) -> "NoiseSpec":
        if self.family is NoiseFamily.HYBRID and self.sigma > 1.0:
            raise ValueError(f"hybrid noise needs sigma in (0, 1], got {self.sigma}")
        return self

    @classmethod
    def from_log_sigma(
        cls, family: NoiseFamily | str, log_sigma: float, box: ActionBox, **kwargs
    ) -> "NoiseSpec":
        return cls(family=NoiseFamily(family), sigma=math.exp(log_sigma), box=box, **kwargs)

    @property
    def log_sigma(self) -> float:
        return math.log(self.sigma)

    def to_config_block(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)

    @classmethod
    def from_config_block(cls, text: str) -> "NoiseSpec":
        return cls.model_validate(yaml.safe_load(text))


def _as_action_rows(a: ArrayLike, dim: int, name: str) -> NDArray[np.float64]:
    arr = np.asarray(a, dtype=float)
    if arr.ndim not in (1, 2) or arr.shape[-1] != dim:
        raise InvalidActionError(f"{name} must have trailing dimension {dim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidActionError(f"{name} contains non-finite entries")
    return arr


def _check_in_box(actions: NDArray[np.float64], box: ActionBox, name: str) -> None:
    if not box.contains(actions, tol=ACTION_BOX_TOL):
        raise InvalidActionError(f"{name} lies outside the action box {box.low}..{box.high}")


# --- Sampling ---


def _draw_uniform_mix(
    centers: NDArray[np.float64],
    levels: NDArray[np.float64],
    box: ActionBox,
    rng: np.random.Generator,
) -> NDArray[np.float64]:
    n, dim = centers.shape
    # all three draws are unconditional; the stream length per call is fixed
    pick_uniform = rng.random(n) < np.minimum(levels, 1.0)
    uniform = rng.uniform(box.lower, box.upper, size=(n, dim))
    gaussian = centers + levels[:, None] * rng.standard_normal((n, dim))
    return np.where(pick_uniform[:, None], uniform, gaussian)


def _draw(
    centers: NDArray[np.float64], spec: NoiseSpec, rng: np.random.Generator
) -> NDArray[np.float64]:
    n, dim = centers.shape
    match spec.family:
        case NoiseFamily.GAUSSIAN:
            return centers + spec.sigma * rng.standard_normal((n, dim))
        case NoiseFamily.LAPLACE:
            return centers + rng.laplace(0.0, spec.sigma / SQRT2, size=(n, dim))
        case NoiseFamily.UNIFORM_MIX:
            levels = np.full(n, spec.sigma)
        case NoiseFamily.HYBRID:
            levels = np.exp(rng.uniform(spec.log_sigma, 0.0, size=n))
    return _draw_uniform_mix(centers, levels, spec.box, rng)


def sample_noise(
    a: ArrayLike,
    spec: NoiseSpec,
    rng: np.random.Generator,
    size: int | None = None,
) -> NDArray[np.float64]:
    """
    Draws a' ~ q_sigma(.|a).

    ``a`` is one action ``(dim,)`` or a batch ``(n, dim)`` (one draw per row).
    With a single action, ``size`` requests that many independent draws.
    Samples are never clipped to the box.
    """
    actions = _as_action_rows(a, spec.box.dim, "a")
    _check_in_box(actions, spec.box, "a")
    if actions.ndim == 1:
        count = 1 if size is None else int(size)
        centers = np.broadcast_to(actions, (count, spec.box.dim))
        samples = _draw(centers, spec, rng)
        return samples[0] if size is None else samples
    if size is not None:
        raise InvalidActionError("size applies to a single action only")
    return _draw(actions, spec, rng)


# --- Densities ---


def _gaussian_log(diff: NDArray[np.float64], scale: float) -> NDArray[np.float64]:
    dim = diff.shape[-1]
    return -0.5 * np.sum(diff * diff, axis=-1) / scale**2 - dim * (math.log(scale) + 0.5 * LOG_2PI)


def _log_uniform(a_prime: NDArray[np.float64], box: ActionBox) -> NDArray[np.float64]:
    inside = np.all((a_prime >= box.lower) & (a_prime <= box.upper), axis=-1)
    return np.where(inside, -math.log(box.volume), -np.inf)


def _log_uniform_mix(
    diff: NDArray[np.float64], log_u: NDArray[np.float64], level: float
) -> NDArray[np.float64]:
    alpha = min(level, 1.0)
    with np.errstate(divide="ignore"):
        log_alpha = math.log(alpha)
        log_rest = np.log1p(-alpha)
    return np.logaddexp(log_alpha + log_u, log_rest + _gaussian_log(diff, level))


def hybrid_quadrature(spec: NoiseSpec) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Gauss-Legendre levels t_k = exp(lambda_k) on [log sigma, 0] and their log weights."""
    x, w = np.polynomial.legendre.leggauss(spec.quadrature_nodes)
    lam = 0.5 * spec.log_sigma * (1.0 - x)
    return np.exp(lam), np.log(0.5 * w)


def _log_kernel(spec: NoiseSpec, a_prime: NDArray[np.float64], a: NDArray[np.float64]):
    diff = a_prime - a
    match spec.family:
        case NoiseFamily.GAUSSIAN:
            return _gaussian_log(diff, spec.sigma)
        case NoiseFamily.LAPLACE:
            b = spec.sigma / SQRT2
            return -np.sum(np.abs(diff), axis=-1) / b - diff.shape[-1] * math.log(2.0 * b)
        case NoiseFamily.UNIFORM_MIX:
            return _log_uniform_mix(diff, _log_uniform(a_prime, spec.box), spec.sigma)
        case NoiseFamily.HYBRID:
            log_u = _log_uniform(a_prime, spec.box)
            levels, log_weights = hybrid_quadrature(spec)
            acc = np.full(np.broadcast_shapes(diff.shape[:-1], log_u.shape), -np.inf)
            for level, log_w in zip(levels, log_weights, strict=True):
                acc = np.logaddexp(acc, log_w + _log_uniform_mix(diff, log_u, float(level)))
            return acc


def log_density(spec: NoiseSpec, a_prime: ArrayLike, a: ArrayLike) -> float | NDArray[np.float64]:
    """
    log q_sigma(a'|a); broadcasts over leading dimensions of ``a_prime`` and ``a``.

    Mixture families are combined in log space, so an underflowing Gaussian
    component leaves the uniform component's log-density. Never returns NaN.
    """
    dim = spec.box.dim
    centers = _as_action_rows(a, dim, "a")
    _check_in_box(centers, spec.box, "a")
    points = np.asarray(a_prime, dtype=float)
    if points.shape[-1:] != (dim,) or not np.all(np.isfinite(points)):
        raise InvalidActionError(f"a_prime must be finite with trailing dimension {dim}")
    out = _log_kernel(spec, points, centers)
    return float(out) if np.ndim(out) == 0 else out


def log_kernel_matrix(
    spec: NoiseSpec, a_primes: NDArray[np.float64], actions: NDArray[np.float64]
) -> NDArray[np.float64]:
    """``(m, n)`` table of log q(a'_j | a_i) for grid points ``a_primes`` and dataset ``actions``."""
    return _log_kernel(spec, a_primes[:, None, :], actions[None, :, :])


def log_limit_ratio(spec: NoiseSpec, a: ArrayLike, a1: ArrayLike, a2: ArrayLike) -> float:
    if spec.family not in BASE_KERNELS:
        raise NoiseSpecError(f"limit ratios are defined for base kernels only, got {spec.family}")
    dim = spec.box.dim
    point, c1, c2 = (_as_action_rows(v, dim, name) for v, name in ((a, "a"), (a1, "a1"), (a2, "a2")))
    return float(_log_kernel(spec, point, c1) - _log_kernel(spec, point, c2))


def limit_ratio(spec: NoiseSpec, a: ArrayLike, a1: ArrayLike, a2: ArrayLike) -> float:
    """q_sigma(a|a1) / q_sigma(a|a2), evaluated in log space."""
    return float(np.exp(log_limit_ratio(spec, a, a1, a2)))


def _base_inside_mass(dist, a: NDArray[np.float64], box: ActionBox) -> float:
    per_dim = dist.cdf(box.upper - a) - dist.cdf(box.lower - a)
    return float(np.prod(per_dim))


def outside_box_mass(spec: NoiseSpec, a: ArrayLike) -> float:
    """Analytic probability that a draw from q_sigma(.|a) leaves the box."""
    center = _as_action_rows(a, spec.box.dim, "a")
    _check_in_box(center, spec.box, "a")
    match spec.family:
        case NoiseFamily.GAUSSIAN:
            return 1.0 - _base_inside_mass(stats.norm(scale=spec.sigma), center, spec.box)
        case NoiseFamily.LAPLACE:
            return 1.0 - _base_inside_mass(stats.laplace(scale=spec.sigma / SQRT2), center, spec.box)
        case NoiseFamily.UNIFORM_MIX:
            levels, weights = np.array([spec.sigma]), np.array([1.0])
        case NoiseFamily.HYBRID:
            levels, log_weights = hybrid_quadrature(spec)
            weights = np.exp(log_weights)
    mass = 0.0
    for level, weight in zip(levels, weights, strict=True):
        gaussian_out = 1.0 - _base_inside_mass(stats.norm(scale=level), center, spec.box)
        mass += weight * (1.0 - min(level, 1.0)) * gaussian_out
    logger.debug(f"Outside-box mass for {spec.family} at sigma={spec.sigma:.3g}: {mass:.4g}")
    return float(mass)
