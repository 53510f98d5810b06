"""Policy classes and the signed reparameterization s = 2*p - 1.

A policy maps covariate rows to treatment probabilities. Deterministic
policies take values in {0, 1}; randomized ones in [0, 1]. Enumerable
classes materialize every member in a stable canonical order so that exact
argmax/argmin sets are well defined and comparable across training routes.

Tie convention used everywhere in the repository: a tie on the decision
score treats (weak inequality, score >= 0 means treat), and the canonical
member order puts the treat-everybody constant first so that fully tied
objectives also resolve toward treatment.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataValidationError, EnumerationCapError
from .features import PolynomialBasis

# Default cap on policy-row evaluations (|class| * n) for enumeration.
DEFAULT_EVAL_CAP = 1_000_000


def _as_matrix(X: np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.asarray(X, dtype=np.float64))


@dataclass(frozen=True)
class ConstantPolicy:
    value: float

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return np.full(_as_matrix(X).shape[0], float(self.value))

    def to_spec(self) -> dict:
        return {"family": "constant", "value": float(self.value)}


@dataclass(frozen=True)
class ThresholdPolicy:
    """Treat when sign * (x[coord] - threshold) >= 0."""

    coord: int
    threshold: float
    sign: int

    def __call__(self, X: np.ndarray) -> np.ndarray:
        x = _as_matrix(X)[:, self.coord]
        return (self.sign * (x - self.threshold) >= 0.0).astype(np.float64)

    def to_spec(self) -> dict:
        return {
            "family": "signed-threshold",
            "coord": self.coord,
            "threshold": float(self.threshold),
            "sign": int(self.sign),
        }


@dataclass(frozen=True)
class RectanglePolicy:
    """Treat inside the closed axis-aligned box [lower, upper]."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = _as_matrix(X)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        inside = np.logical_and(X >= lo, X <= hi).all(axis=1)
        return inside.astype(np.float64)

    def to_spec(self) -> dict:
        return {
            "family": "axis-rectangle",
            "lower": [float(v) for v in self.lower],
            "upper": [float(v) for v in self.upper],
        }


@dataclass(frozen=True, eq=False)
class ExplicitPolicy:
    """Per-row 0-1 assignment; only evaluable on the rows it was built for."""

    decisions: np.ndarray

    def __post_init__(self) -> None:
        dec = np.asarray(self.decisions, dtype=np.float64).ravel()
        if not np.all(np.isin(dec, (0.0, 1.0))):
            raise DataValidationError("explicit policy assignments must be 0 or 1")
        dec.setflags(write=False)
        object.__setattr__(self, "decisions", dec)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        n = _as_matrix(X).shape[0]
        if n != self.decisions.shape[0]:
            raise DataValidationError(
                f"explicit policy covers {self.decisions.shape[0]} rows, got {n}"
            )
        return self.decisions

    def to_spec(self) -> dict:
        return {"family": "explicit-list", "decisions": [float(v) for v in self.decisions]}


@dataclass(frozen=True, eq=False)
class ScoreThresholdPolicy:
    """Treat when a real-valued score function is nonnegative."""

    score: Callable[[np.ndarray], np.ndarray]
    label: str = "score-threshold"

    def __call__(self, X: np.ndarray) -> np.ndarray:
        s = np.asarray(self.score(_as_matrix(X)), dtype=np.float64).ravel()
        return (s >= 0.0).astype(np.float64)

    def to_spec(self) -> dict:
        return {"family": self.label}


@dataclass(frozen=True)
class SigmoidPolicy:
    """Randomized policy p(x) = sigmoid(theta . phi(x)), strictly inside (0, 1)."""

    basis: PolynomialBasis
    theta: tuple[float, ...]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        z = self.basis.transform(X) @ np.asarray(self.theta, dtype=np.float64)
        return _sigmoid(z)

    def to_spec(self) -> dict:
        return {
            "family": "sigmoid",
            "degree": self.basis.degree,
            "theta": [float(v) for v in self.theta],
        }


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# Signed reparameterization
# ---------------------------------------------------------------------------


def to_signed(pi_values: np.ndarray) -> np.ndarray:
    """Map treatment probabilities in [0, 1] to signed scores 2*p - 1 in [-1, 1]."""
    p = np.asarray(pi_values, dtype=np.float64)
    if np.any(p < 0.0) or np.any(p > 1.0) or not np.all(np.isfinite(p)):
        raise DataValidationError("policy values must lie in [0, 1]")
    return 2.0 * p - 1.0


def from_signed(signed_values: np.ndarray) -> np.ndarray:
    """Inverse map (s + 1) / 2 from signed scores back to probabilities."""
    s = np.asarray(signed_values, dtype=np.float64)
    if np.any(s < -1.0) or np.any(s > 1.0) or not np.all(np.isfinite(s)):
        raise DataValidationError("signed values must lie in [-1, 1]")
    return 0.5 * (s + 1.0)


def threshold_decisions(scores: np.ndarray) -> np.ndarray:
    """0-1 decisions from a real score, treating on ties (score >= 0)."""
    s = np.asarray(scores, dtype=np.float64)
    return (s >= 0.0).astype(np.float64)


def threshold_policy_from_score(
    score: Callable[[np.ndarray], np.ndarray], label: str = "score-threshold"
) -> ScoreThresholdPolicy:
    """Wrap a score function into the deterministic policy 1{score(x) >= 0}."""
    return ScoreThresholdPolicy(score=score, label=label)


# ---------------------------------------------------------------------------
# Enumerable classes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EnumerablePolicyClass:
    """A finite family of 0-1 policies in stable canonical order.

    Members 0 and 1 are always the constants (treat everybody, then treat
    nobody); family members follow in a deterministic parameter order. The
    same index therefore refers to the same policy in every training route,
    which is what makes exact argmax/argmin set comparison meaningful.
    """

    kind: str
    members: tuple

    def __len__(self) -> int:
        return len(self.members)

    def policy(self, index: int):
        return self.members[index]

    def describe(self, index: int) -> dict:
        return self.members[index].to_spec()

    def check_cap(self, n_rows: int, cap: int = DEFAULT_EVAL_CAP) -> None:
        evals = len(self.members) * n_rows
        if evals > cap:
            raise EnumerationCapError(
                f"enumeration needs {len(self.members)} policies x {n_rows} rows = "
                f"{evals} evaluations, exceeding the cap of {cap}"
            )

    def assignments(self, X: np.ndarray, cap: int = DEFAULT_EVAL_CAP) -> np.ndarray:
        """Full (|class|, n) matrix of per-policy per-row decisions."""
        X = _as_matrix(X)
        self.check_cap(X.shape[0], cap)
        out = np.empty((len(self.members), X.shape[0]))
        for i, member in enumerate(self.members):
            out[i] = member(X)
        return out

    def assignment_blocks(
        self, X: np.ndarray, block_size: int = 256, cap: int = DEFAULT_EVAL_CAP
    ) -> Iterator[tuple[int, np.ndarray]]:
        """Yield (start index, block matrix) without materializing everything."""
        X = _as_matrix(X)
        self.check_cap(X.shape[0], cap)
        for start in range(0, len(self.members), block_size):
            chunk = self.members[start : start + block_size]
            block = np.empty((len(chunk), X.shape[0]))
            for i, member in enumerate(chunk):
                block[i] = member(X)
            yield start, block


_CONSTANTS = (ConstantPolicy(1.0), ConstantPolicy(0.0))


def threshold_class(
    grids: Mapping[int, Sequence[float]], signs: Sequence[int] = (1, -1)
) -> EnumerablePolicyClass:
    """Signed single-coordinate threshold policies plus the two constants.

    Order: constants, then coordinates ascending, then sign (+ before -),
    then thresholds ascending.
    """
    members: list = list(_CONSTANTS)
    for coord in sorted(grids):
        grid = [float(t) for t in grids[coord]]
        if sorted(grid) != grid:
            grid = sorted(grid)
        for sign in signs:
            if sign not in (1, -1):
                raise ConfigError(f"threshold sign must be +1 or -1, got {sign}")
            for t in grid:
                members.append(ThresholdPolicy(coord=int(coord), threshold=t, sign=int(sign)))
    return EnumerablePolicyClass(kind="signed-threshold", members=tuple(members))


def quantile_grid(
    x: np.ndarray, n_points: int, sentinels: bool = True
) -> list[float]:
    """Deduplicated empirical quantiles of one coordinate, optionally with +-inf."""
    if n_points < 1:
        raise ConfigError("need at least one quantile point")
    qs = np.linspace(0.0, 1.0, n_points + 2)[1:-1]
    pts = sorted(set(float(v) for v in np.quantile(np.asarray(x, dtype=np.float64), qs)))
    if sentinels:
        pts = [-np.inf] + pts + [np.inf]
    return pts


def threshold_class_from_data(
    X: np.ndarray,
    coords: Sequence[int] | None = None,
    n_quantiles: int = 9,
    sentinels: bool = True,
) -> EnumerablePolicyClass:
    """Threshold class whose grids are per-coordinate data quantiles."""
    X = _as_matrix(X)
    if coords is None:
        coords = range(X.shape[1])
    grids = {int(c): quantile_grid(X[:, int(c)], n_quantiles, sentinels) for c in coords}
    return threshold_class(grids)


def _interval_menu(grid: Sequence[float]) -> list[tuple[float, float]]:
    """Per-coordinate closed intervals: the full line, then [t_i, t_j] for i <= j."""
    ts = [float(t) for t in grid]
    if sorted(ts) != ts or len(set(ts)) != len(ts):
        raise ConfigError("rectangle grids must be strictly increasing")
    menu = [(-np.inf, np.inf)]
    m = len(ts)
    for i in range(m):
        for j in range(i, m):
            menu.append((ts[i], ts[j]))
    return menu


def rectangle_class_size(grid_sizes: Sequence[int]) -> int:
    """|class| for an axis-rectangle class, including the two constants."""
    total = 1
    for m in grid_sizes:
        total *= m * (m - 1) // 2 + m + 1
    return total + 2


def rectangle_class(grids: Sequence[Sequence[float]]) -> EnumerablePolicyClass:
    """Axis-aligned boxes with per-coordinate interval menus, plus constants.

    Each coordinate contributes the full line and every closed interval
    [t_i, t_j] with i <= j over its grid; members are the cross products in
    itertools.product order over coordinates.
    """
    menus = [_interval_menu(g) for g in grids]
    members: list = list(_CONSTANTS)
    for combo in itertools.product(*menus):
        lower = tuple(lo for lo, _ in combo)
        upper = tuple(hi for _, hi in combo)
        members.append(RectanglePolicy(lower=lower, upper=upper))
    return EnumerablePolicyClass(kind="axis-rectangle", members=tuple(members))


def rectangle_class_from_data(
    X: np.ndarray, n_points: int
) -> EnumerablePolicyClass:
    """Rectangle class built on per-coordinate quantile grids (no sentinels)."""
    X = _as_matrix(X)
    grids = [quantile_grid(X[:, c], n_points, sentinels=False) for c in range(X.shape[1])]
    return rectangle_class(grids)


def explicit_class(assignments: np.ndarray) -> EnumerablePolicyClass:
    """Class listing per-row 0-1 assignment vectors directly, plus constants."""
    A = np.atleast_2d(np.asarray(assignments, dtype=np.float64))
    members: list = list(_CONSTANTS)
    for row in A:
        members.append(ExplicitPolicy(decisions=row))
    return EnumerablePolicyClass(kind="explicit-list", members=tuple(members))


# ---------------------------------------------------------------------------
# Parametric class
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParametricPolicyClass:
    """Sigmoid-link policies p_theta(x) = sigmoid(theta . phi(x)).

    The signed score is tanh(theta . phi(x) / 2), strictly inside (-1, 1) for
    finite theta; the closure to the deterministic endpoints happens in
    analysis, not in the representation.
    """

    basis: PolynomialBasis

    def dim(self, d_x: int) -> int:
        return self.basis.dim(d_x)

    def pi(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        z = self.basis.transform(X) @ np.asarray(theta, dtype=np.float64)
        return _sigmoid(z)

    def signed(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        z = self.basis.transform(X) @ np.asarray(theta, dtype=np.float64)
        return np.tanh(0.5 * z)

    def policy(self, theta: np.ndarray) -> SigmoidPolicy:
        return SigmoidPolicy(basis=self.basis, theta=tuple(float(v) for v in theta))
