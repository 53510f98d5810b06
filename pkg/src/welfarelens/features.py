"""Polynomial feature maps used by nuisance fits and parametric policies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class PolynomialBasis:
    """Monomial basis in the covariates up to a fixed degree.

    degree 0 is intercept only; degree 1 adds the raw coordinates; degree 2
    adds squares and pairwise interactions. Column order is fixed:
    [1, x1..xd, x1^2..xd^2, x1*x2, x1*x3, ..., x_{d-1}*x_d].
    """

    degree: int
    include_intercept: bool = True

    def __post_init__(self) -> None:
        if self.degree not in (0, 1, 2):
            raise ConfigError(f"basis degree must be 0, 1 or 2, got {self.degree}")
        if self.degree == 0 and not self.include_intercept:
            raise ConfigError("degree-0 basis without intercept is empty")

    def dim(self, d_x: int) -> int:
        p = 1 if self.include_intercept else 0
        if self.degree >= 1:
            p += d_x
        if self.degree >= 2:
            p += d_x + d_x * (d_x - 1) // 2
        return p

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n, d = X.shape
        cols = []
        if self.include_intercept:
            cols.append(np.ones((n, 1)))
        if self.degree >= 1:
            cols.append(X)
        if self.degree >= 2:
            cols.append(X**2)
            for j in range(d):
                for k in range(j + 1, d):
                    cols.append((X[:, j] * X[:, k])[:, None])
        return np.hstack(cols)

    def penalty_mask(self, d_x: int) -> np.ndarray:
        """1 for penalized columns, 0 for the intercept (never penalized)."""
        mask = np.ones(self.dim(d_x))
        if self.include_intercept:
            mask[0] = 0.0
        return mask


_BASES = {
    "intercept": PolynomialBasis(0),
    "linear": PolynomialBasis(1),
    "quadratic": PolynomialBasis(2),
}


def basis_by_name(name: str) -> PolynomialBasis:
    try:
        return _BASES[name]
    except KeyError:
        raise ConfigError(f"unknown basis {name!r}; expected one of {sorted(_BASES)}") from None


@dataclass(frozen=True)
class LinearModel:
    """Fitted coefficients over a polynomial basis; predicts the linear index."""

    basis: PolynomialBasis
    coef: tuple[float, ...]

    def predict(self, X: np.ndarray) -> np.ndarray:
        B = self.basis.transform(X)
        if B.shape[1] != len(self.coef):
            raise ConfigError(
                f"model has {len(self.coef)} coefficients but basis produced {B.shape[1]} columns"
            )
        return B @ np.asarray(self.coef, dtype=np.float64)
