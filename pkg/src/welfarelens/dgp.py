"""Synthetic data-generating processes with known propensity and effects.

Each generated dataset carries its hidden potential outcomes, propensities,
and conditional effects so that equivalence theorems and regret can be
verified exactly. Treatment assignment draws from a randomness stream
independent of the outcome-noise streams given the covariates, which gives
unconfoundedness by construction.

Outcome noise is mean-zero gaussian truncated symmetrically; the truncation
bound is chosen so that |Y0| and |Y1| never exceed the configured outcome
bound (interval arithmetic over the covariate box bounds the systematic
parts). Symmetric truncation keeps the noise exactly mean zero, so true
welfare reduces to a Monte Carlo average over covariates alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
from scipy.special import ndtr, ndtri

from .core import ObservedDataset, OracleDataset, SeedSpec
from .errors import ConfigError
from .policies import ScoreThresholdPolicy, threshold_policy_from_score


def _vec(values: Sequence[float], d: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.shape[0] != d:
        raise ConfigError(f"{name} must have length {d}, got {arr.shape[0]}")
    return arr


# --- covariate laws --------------------------------------------------------


@dataclass(frozen=True)
class UniformCovariates:
    """Independent uniforms on the box [low, high]^d."""

    low: float = -1.0
    high: float = 1.0

    def validate(self) -> None:
        if not (self.low < self.high):
            raise ConfigError(f"uniform box needs low < high, got [{self.low}, {self.high}]")

    def sample(self, m: int, d: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=(m, d))

    def coordinate_mean(self) -> float:
        return 0.5 * (self.low + self.high)


@dataclass(frozen=True)
class TruncatedGaussianCovariates:
    """Independent standard normals truncated to [low, high] per coordinate.

    Sampling goes through the inverse CDF of the truncated law, so a fixed
    uniform stream yields a fixed covariate matrix with no rejection loop.
    """

    low: float = -2.0
    high: float = 2.0

    def validate(self) -> None:
        if not (self.low < self.high):
            raise ConfigError(f"gaussian box needs low < high, got [{self.low}, {self.high}]")

    def sample(self, m: int, d: int, rng: np.random.Generator) -> np.ndarray:
        a, b = ndtr(self.low), ndtr(self.high)
        u = rng.uniform(a, b, size=(m, d))
        return ndtri(u)

    def coordinate_mean(self) -> float:
        a, b = self.low, self.high
        phi = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
        return (phi(a) - phi(b)) / (ndtr(b) - ndtr(a))


CovariateLaw = Union[UniformCovariates, TruncatedGaussianCovariates]


# --- scalar functions of the covariates ------------------------------------


@dataclass(frozen=True)
class LinearFunction:
    intercept: float
    slopes: tuple[float, ...]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return self.intercept + X @ _vec(self.slopes, X.shape[1], "slopes")

    def bound_abs(self, lo: float, hi: float) -> float:
        reach = max(abs(lo), abs(hi))
        return abs(self.intercept) + reach * float(np.sum(np.abs(self.slopes)))


@dataclass(frozen=True)
class QuadraticFunction:
    """intercept + slopes . x + quads . x^2 (coordinate-wise squares)."""

    intercept: float
    slopes: tuple[float, ...]
    quads: tuple[float, ...]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        d = X.shape[1]
        return (
            self.intercept
            + X @ _vec(self.slopes, d, "slopes")
            + (X**2) @ _vec(self.quads, d, "quads")
        )

    def bound_abs(self, lo: float, hi: float) -> float:
        reach = max(abs(lo), abs(hi))
        return (
            abs(self.intercept)
            + reach * float(np.sum(np.abs(self.slopes)))
            + reach**2 * float(np.sum(np.abs(self.quads)))
        )


@dataclass(frozen=True)
class StepFunction:
    """Sign-changing step: high where x[coord] >= threshold, else low."""

    coord: int
    threshold: float
    low: float
    high: float

    def __call__(self, X: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(X)[:, self.coord]
        return np.where(x >= self.threshold, self.high, self.low)

    def bound_abs(self, lo: float, hi: float) -> float:
        return max(abs(self.low), abs(self.high))


@dataclass(frozen=True)
class SineFunction:
    """Smooth nonlinear effect shift + amplitude * sin(frequency * x[coord])."""

    amplitude: float
    frequency: float
    coord: int = 0
    shift: float = 0.0

    def __call__(self, X: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(X)[:, self.coord]
        return self.shift + self.amplitude * np.sin(self.frequency * x)

    def bound_abs(self, lo: float, hi: float) -> float:
        return abs(self.shift) + abs(self.amplitude)


MeanFunction = Union[LinearFunction, QuadraticFunction, StepFunction, SineFunction]


# --- propensity families ----------------------------------------------------


@dataclass(frozen=True)
class ConstantPropensity:
    p: float

    def __call__(self, X: np.ndarray, overlap: float) -> np.ndarray:
        return np.full(np.atleast_2d(X).shape[0], float(np.clip(self.p, overlap, 1 - overlap)))


@dataclass(frozen=True)
class LogisticPropensity:
    """Logistic in a linear index, clipped into the overlap band."""

    intercept: float
    slopes: tuple[float, ...]

    def __call__(self, X: np.ndarray, overlap: float) -> np.ndarray:
        X = np.atleast_2d(X)
        z = self.intercept + X @ _vec(self.slopes, X.shape[1], "slopes")
        e = 1.0 / (1.0 + np.exp(-z))
        return np.clip(e, overlap, 1.0 - overlap)


PropensityFamily = Union[ConstantPropensity, LogisticPropensity]


# --- the simulator spec ------------------------------------------------------


@dataclass(frozen=True)
class DgpSpec:
    """Full description of a simulated population and sampling plan."""

    n: int
    d_x: int
    covariates: CovariateLaw
    propensity: PropensityFamily
    baseline: MeanFunction
    cate: MeanFunction
    noise_scale: float = 0.0
    y_max: float = 50.0
    overlap: float = 0.02

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError(f"invalid spec: sample size must be >= 1, got {self.n}")
        if self.d_x < 1:
            raise ConfigError(f"invalid spec: covariate dimension must be >= 1, got {self.d_x}")
        if not (0.0 < self.overlap < 0.5):
            raise ConfigError(f"invalid spec: overlap must lie in (0, 1/2), got {self.overlap}")
        if self.noise_scale < 0.0:
            raise ConfigError("invalid spec: noise scale must be nonnegative")
        self.covariates.validate()
        if self.noise_scale > 0.0 and self.noise_bound() <= 0.0:
            raise ConfigError(
                "invalid spec: y_max leaves no room for noise; raise y_max or "
                "shrink the baseline/effect bounds"
            )
        if self.systematic_bound() > self.y_max:
            raise ConfigError("invalid spec: baseline plus effect can exceed y_max")

    def box(self) -> tuple[float, float]:
        return self.covariates.low, self.covariates.high

    def systematic_bound(self) -> float:
        lo, hi = self.box()
        return self.baseline.bound_abs(lo, hi) + self.cate.bound_abs(lo, hi)

    def noise_bound(self) -> float:
        """Symmetric truncation point keeping |Y_d| <= y_max."""
        return self.y_max - self.systematic_bound()


def sample_covariates(spec: DgpSpec, m: int, rng: np.random.Generator) -> np.ndarray:
    return spec.covariates.sample(m, spec.d_x, rng)


def _truncated_noise(
    scale: float, bound: float, size: int, rng: np.random.Generator
) -> np.ndarray:
    if scale == 0.0:
        return np.zeros(size)
    a = ndtr(-bound / scale)
    b = ndtr(bound / scale)
    u = rng.uniform(a, b, size=size)
    return scale * ndtri(u)


def generate(spec: DgpSpec, seed: SeedSpec, rep: int = 0) -> OracleDataset:
    """Draw one replication: (X, D, Y) plus the hidden (Y0, Y1, e, tau).

    Streams: covariates, control noise, treated noise, and assignment each
    use their own substream of the dgp stream, so the assignment is
    independent of the noise given X.
    """
    spec.validate()
    X = sample_covariates(spec, spec.n, seed.rng("dgp", rep, 0))
    noise0 = _truncated_noise(spec.noise_scale, spec.noise_bound(), spec.n, seed.rng("dgp", rep, 1))
    noise1 = _truncated_noise(spec.noise_scale, spec.noise_bound(), spec.n, seed.rng("dgp", rep, 2))
    m0 = spec.baseline(X)
    tau = spec.cate(X)
    e = spec.propensity(X, spec.overlap)
    Y0 = m0 + noise0
    Y1 = m0 + tau + noise1
    u = seed.rng("dgp", rep, 3).random(spec.n)
    D = (u < e).astype(np.float64)
    Y = np.where(D == 1.0, Y1, Y0)
    base = ObservedDataset(X=X, D=D, Y=Y)
    return OracleDataset(base=base, Y0=Y0, Y1=Y1, e_true=e, tau_true=tau)


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    se: float
    draws: int


def true_welfare(
    spec: DgpSpec,
    policy: Callable[[np.ndarray], np.ndarray],
    m: int,
    seed: SeedSpec,
    rep: int = 0,
) -> MonteCarloEstimate:
    """Monte Carlo welfare of a policy under the population the spec defines.

    Noise integrates out exactly (it is symmetric and mean zero), so only
    covariates are sampled: the integrand is baseline(X) + effect(X) * p(X).
    """
    if m < 1:
        raise ConfigError("Monte Carlo size must be >= 1")
    spec.validate()
    X = sample_covariates(spec, m, seed.rng("monte_carlo", rep))
    vals = spec.baseline(X) + spec.cate(X) * np.asarray(policy(X), dtype=np.float64)
    se = float(np.std(vals, ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    return MonteCarloEstimate(value=float(np.mean(vals)), se=se, draws=m)


def first_best_policy(spec: DgpSpec) -> ScoreThresholdPolicy:
    """Treat exactly where the conditional effect is nonnegative."""
    return threshold_policy_from_score(spec.cate, label="first-best")
