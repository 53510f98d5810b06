"""Per-row pseudo-outcomes: the shared currency of every training route.

Each row carries an arm pair (gamma0, gamma1) and their difference gamma,
an unbiased (or oracle) surrogate for the individual effect Y1 - Y0:

  ipw:    gamma1 = Y*D/e,                 gamma0 = Y*(1-D)/(1-e)
  dr:     gamma1 = m1 + D*(Y-m1)/e,       gamma0 = m0 + (1-D)*(Y-m0)/(1-e)
  oracle: gamma1 = Y1,                    gamma0 = Y0

Welfare estimators average gamma1*p + gamma0*(1-p); regression routes fit
gamma. Storing the arm pair instead of a single correction term reproduces
the usual doubly robust welfare display up to a constant that does not
depend on the policy, which is all an argmax can see.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ObservedDataset, OracleDataset, fmt_float
from .errors import DataValidationError
from .nuisance import NuisanceEstimates

KINDS = ("oracle", "ipw", "dr")


@dataclass(frozen=True, eq=False)
class PseudoOutcomes:
    """Arm-wise welfare components and their difference, one value per row."""

    kind: str
    gamma0: np.ndarray
    gamma1: np.ndarray
    gamma: np.ndarray

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise DataValidationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        g0 = np.asarray(self.gamma0, dtype=np.float64).ravel()
        g1 = np.asarray(self.gamma1, dtype=np.float64).ravel()
        g = np.asarray(self.gamma, dtype=np.float64).ravel()
        if not (g0.shape == g1.shape == g.shape):
            raise DataValidationError("component length mismatch")
        for name, arr in (("gamma0", g0), ("gamma1", g1), ("gamma", g)):
            if not np.all(np.isfinite(arr)):
                raise DataValidationError(f"{name} contains non-finite values")
        if not np.array_equal(g, g1 - g0):
            raise DataValidationError("gamma must equal gamma1 - gamma0 exactly")
        for name, arr in (("gamma0", g0), ("gamma1", g1), ("gamma", g)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.gamma.shape[0]


def _build(kind: str, gamma0: np.ndarray, gamma1: np.ndarray) -> PseudoOutcomes:
    gamma0 = np.asarray(gamma0, dtype=np.float64).ravel()
    gamma1 = np.asarray(gamma1, dtype=np.float64).ravel()
    return PseudoOutcomes(kind=kind, gamma0=gamma0, gamma1=gamma1, gamma=gamma1 - gamma0)


def ipw_pseudo(ds: ObservedDataset, e_hat: np.ndarray) -> PseudoOutcomes:
    """Inverse-propensity-weighted components from per-row propensities."""
    e = np.asarray(e_hat, dtype=np.float64).ravel()
    if e.shape[0] != ds.n:
        raise DataValidationError(f"e_hat has {e.shape[0]} rows, expected {ds.n}")
    if np.any(e <= 0.0) or np.any(e >= 1.0):
        raise DataValidationError("propensities must lie strictly inside (0, 1)")
    gamma1 = ds.Y * ds.D / e
    gamma0 = ds.Y * (1.0 - ds.D) / (1.0 - e)
    return _build("ipw", gamma0, gamma1)


def dr_pseudo(ds: ObservedDataset, nuis: NuisanceEstimates) -> PseudoOutcomes:
    """Doubly robust components: outcome model plus weighted residual.

    With both outcome models identically zero this reduces bitwise to the
    IPW construction.
    """
    if nuis.n != ds.n:
        raise DataValidationError(f"nuisances cover {nuis.n} rows, expected {ds.n}")
    gamma1 = nuis.m1_hat + ds.D * (ds.Y - nuis.m1_hat) / nuis.e_hat
    gamma0 = nuis.m0_hat + (1.0 - ds.D) * (ds.Y - nuis.m0_hat) / (1.0 - nuis.e_hat)
    return _build("dr", gamma0, gamma1)


def oracle_pseudo(ods: OracleDataset) -> PseudoOutcomes:
    """Directly observed potential outcomes (simulator only)."""
    return _build("oracle", ods.Y0, ods.Y1)


def write_pseudo_csv(path: str, ps: PseudoOutcomes) -> None:
    """Audit export with header i,gamma0,gamma1,gamma,kind."""
    lines = ["i,gamma0,gamma1,gamma,kind"]
    for i in range(ps.n):
        lines.append(
            f"{i},{fmt_float(ps.gamma0[i])},{fmt_float(ps.gamma1[i])},"
            f"{fmt_float(ps.gamma[i])},{ps.kind}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
