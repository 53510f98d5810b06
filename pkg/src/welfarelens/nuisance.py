"""Propensity and outcome-mean estimation, with optional K-fold cross-fitting.

Model families are deliberately simple and deterministic: logistic regression
in a polynomial basis for the propensity (penalized maximum likelihood,
damped Newton), and ridge least squares per arm for the outcome means
(normal equations). The intercept column is never penalized. Deliberate
misspecification (forcing an intercept-only basis) is a first-class option
because double-robustness checks need it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import ObservedDataset, SeedSpec, arm_indices, fmt_float, split_folds
from .errors import ConfigError, DataValidationError
from .features import LinearModel, PolynomialBasis, basis_by_name

DEFAULT_CLIP = 0.01


@dataclass(frozen=True, eq=False)
class NuisanceEstimates:
    """Per-row propensity and outcome-mean estimates feeding DR and plug-in.

    e_hat is clipped into [clip, 1 - clip]. The provenance string records how
    each piece was produced ("known-propensity", "fitted", or
    "cross-fitted(K=k)"). When full-data fits were run, the fitted models are
    kept so that plug-in policies can be evaluated off the training rows;
    cross-fitted estimates have no single model and carry None instead.
    """

    e_hat: np.ndarray
    m0_hat: np.ndarray
    m1_hat: np.ndarray
    provenance: str
    clip: float
    propensity_model: LinearModel | None = None
    outcome_model0: LinearModel | None = None
    outcome_model1: LinearModel | None = None
    converged: bool = True
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not (0.0 < self.clip < 0.5):
            raise DataValidationError(f"clip must lie in (0, 1/2), got {self.clip}")
        n = np.asarray(self.e_hat).shape[0]
        for name in ("e_hat", "m0_hat", "m1_hat"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            if arr.shape[0] != n:
                raise DataValidationError(f"{name} length {arr.shape[0]} != {n}")
            if not np.all(np.isfinite(arr)):
                raise DataValidationError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.e_hat < self.clip) or np.any(self.e_hat > 1.0 - self.clip):
            raise DataValidationError("e_hat not inside the clipping band")

    @property
    def n(self) -> int:
        return self.e_hat.shape[0]


def known_propensity(
    e_true: np.ndarray,
    m0_hat: np.ndarray | None = None,
    m1_hat: np.ndarray | None = None,
    clip: float = DEFAULT_CLIP,
) -> NuisanceEstimates:
    """Wrap the simulator's true propensity (still clipped) as estimates.

    Outcome means default to zero, which makes the DR construction collapse
    to plain IPW.
    """
    e = np.clip(np.asarray(e_true, dtype=np.float64).ravel(), clip, 1.0 - clip)
    zeros = np.zeros_like(e)
    return NuisanceEstimates(
        e_hat=e,
        m0_hat=zeros if m0_hat is None else m0_hat,
        m1_hat=zeros if m1_hat is None else m1_hat,
        provenance="known-propensity",
        clip=clip,
    )


# ---------------------------------------------------------------------------
# Logistic propensity fit
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PropensityFit:
    e_hat: np.ndarray
    converged: bool
    grad_norm: float
    n_iter: int
    model: LinearModel | None


def _nll(z: np.ndarray, d: np.ndarray) -> float:
    # mean of log(1 + exp(z)) - d*z, computed stably
    return float(np.mean(np.logaddexp(0.0, z) - d * z))


def _logistic_mle(
    B: np.ndarray, d: np.ndarray, mask: np.ndarray, l2: float, max_iter: int, tol: float
) -> tuple[np.ndarray, bool, float, int]:
    """Damped Newton for penalized logistic regression; fully deterministic."""
    n, p = B.shape
    beta = np.zeros(p)
    obj = _nll(B @ beta, d) + 0.5 * l2 * float(beta @ (mask * beta))
    grad_norm = np.inf
    for it in range(1, max_iter + 1):
        z = B @ beta
        mu = 1.0 / (1.0 + np.exp(-np.clip(z, -700, 700)))
        grad = B.T @ (mu - d) / n + l2 * mask * beta
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= tol:
            return beta, True, grad_norm, it - 1
        w = mu * (1.0 - mu)
        H = B.T @ (B * w[:, None]) / n + l2 * np.diag(mask) + 1e-12 * np.eye(p)
        step = np.linalg.solve(H, grad)
        scale = 1.0
        for _ in range(40):
            cand = beta - scale * step
            cand_obj = _nll(B @ cand, d) + 0.5 * l2 * float(cand @ (mask * cand))
            if cand_obj <= obj:
                beta, obj = cand, cand_obj
                break
            scale *= 0.5
        else:
            break  # no decrease found; stop with current iterate
    return beta, grad_norm <= tol, grad_norm, max_iter


def fit_propensity(
    ds: ObservedDataset,
    basis: PolynomialBasis | str = "linear",
    folds: np.ndarray | int | None = None,
    clip: float = DEFAULT_CLIP,
    seed: SeedSpec | None = None,
    l2: float = 1e-4,
    max_iter: int = 200,
    tol: float = 1e-10,
) -> PropensityFit:
    """Penalized logistic regression of D on the basis, predictions clipped.

    With folds (an assignment array or a fold count K), row i is predicted by
    the model fitted without row i's fold. Under perfect separation the
    penalty keeps the optimum finite; predictions then saturate and the
    clipping band takes over.
    """
    if isinstance(basis, str):
        basis = basis_by_name(basis)
    if not (0.0 < clip < 0.5):
        raise DataValidationError(f"clip must lie in (0, 1/2), got {clip}")
    ctrl, trt = arm_indices(ds)
    if len(ctrl) == 0 or len(trt) == 0:
        raise DataValidationError("cannot fit propensity: one treatment arm is absent")
    B = basis.transform(ds.X)
    mask = basis.penalty_mask(ds.d_x)
    fold_ids = _resolve_folds(folds, ds.n, seed)

    e_hat = np.empty(ds.n)
    model: LinearModel | None = None
    worst_grad = 0.0
    total_iter = 0
    ok = True
    if fold_ids is None:
        beta, conv, gn, iters = _logistic_mle(B, ds.D, mask, l2, max_iter, tol)
        e_hat = 1.0 / (1.0 + np.exp(-(B @ beta)))
        model = LinearModel(basis=basis, coef=tuple(float(v) for v in beta))
        ok, worst_grad, total_iter = conv, gn, iters
    else:
        for fold in np.unique(fold_ids):
            train = fold_ids != fold
            if ds.D[train].min() == ds.D[train].max():
                raise DataValidationError(
                    f"cannot fit propensity: a single arm in the training split of fold {fold}"
                )
            beta, conv, gn, iters = _logistic_mle(
                B[train], ds.D[train], mask, l2, max_iter, tol
            )
            hold = fold_ids == fold
            e_hat[hold] = 1.0 / (1.0 + np.exp(-(B[hold] @ beta)))
            ok = ok and conv
            worst_grad = max(worst_grad, gn)
            total_iter += iters
    return PropensityFit(
        e_hat=np.clip(e_hat, clip, 1.0 - clip),
        converged=ok,
        grad_norm=worst_grad,
        n_iter=total_iter,
        model=model,
    )


# ---------------------------------------------------------------------------
# Per-arm ridge outcome regressions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OutcomeFit:
    m0_hat: np.ndarray
    m1_hat: np.ndarray
    model0: LinearModel | None
    model1: LinearModel | None
    rank_deficient: bool


def _ridge_solve(
    B: np.ndarray, y: np.ndarray, ridge: float, mask: np.ndarray
) -> tuple[np.ndarray, bool]:
    """Normal-equations ridge; lstsq minimum-norm fallback at ridge == 0."""
    if ridge < 0.0:
        raise ConfigError(f"ridge penalty must be nonnegative, got {ridge}")
    if ridge == 0.0:
        beta, _, rank, _ = np.linalg.lstsq(B, y, rcond=None)
        return beta, rank < B.shape[1]
    A = B.T @ B + ridge * np.diag(mask)
    try:
        beta = np.linalg.solve(A, B.T @ y)
        return beta, False
    except np.linalg.LinAlgError:
        beta, _, rank, _ = np.linalg.lstsq(B, y, rcond=None)
        return beta, rank < B.shape[1]


def fit_outcome_regressions(
    ds: ObservedDataset,
    basis: PolynomialBasis | str = "linear",
    ridge: float = 0.0,
    folds: np.ndarray | int | None = None,
    seed: SeedSpec | None = None,
) -> OutcomeFit:
    """Ridge least squares of Y on the basis, separately within each arm.

    Every row receives predictions from both arm models. Cross-fitting
    refits per fold on the complement; the full-data models are then not
    defined and the fit reports rank problems per split.
    """
    if isinstance(basis, str):
        basis = basis_by_name(basis)
    ctrl, trt = arm_indices(ds)
    if len(ctrl) == 0:
        raise DataValidationError("cannot fit m_0: control arm is empty")
    if len(trt) == 0:
        raise DataValidationError("cannot fit m_1: treated arm is empty")
    B = basis.transform(ds.X)
    mask = basis.penalty_mask(ds.d_x)
    fold_ids = _resolve_folds(folds, ds.n, seed)

    rank_flag = False
    if fold_ids is None:
        preds = {}
        models = {}
        for arm, idx in ((0, ctrl), (1, trt)):
            beta, deficient = _ridge_solve(B[idx], ds.Y[idx], ridge, mask)
            rank_flag = rank_flag or deficient
            preds[arm] = B @ beta
            models[arm] = LinearModel(basis=basis, coef=tuple(float(v) for v in beta))
        return OutcomeFit(
            m0_hat=preds[0], m1_hat=preds[1], model0=models[0], model1=models[1],
            rank_deficient=rank_flag,
        )

    m0_hat = np.empty(ds.n)
    m1_hat = np.empty(ds.n)
    for fold in np.unique(fold_ids):
        train = fold_ids != fold
        hold = fold_ids == fold
        for arm, out in ((0, m0_hat), (1, m1_hat)):
            rows = train & (ds.D == arm)
            if not rows.any():
                raise DataValidationError(
                    f"cannot fit m_{arm}: arm empty in the training split of fold {fold}"
                )
            beta, deficient = _ridge_solve(B[rows], ds.Y[rows], ridge, mask)
            rank_flag = rank_flag or deficient
            out[hold] = B[hold] @ beta
    return OutcomeFit(m0_hat=m0_hat, m1_hat=m1_hat, model0=None, model1=None,
                      rank_deficient=rank_flag)


def _resolve_folds(
    folds: np.ndarray | int | None, n: int, seed: SeedSpec | None
) -> np.ndarray | None:
    if folds is None or (isinstance(folds, int) and folds == 0):
        return None
    if isinstance(folds, (int, np.integer)):
        if seed is None:
            raise ConfigError("fold count given without a seed; pass a SeedSpec")
        return split_folds(n, int(folds), seed)
    arr = np.asarray(folds, dtype=np.int64).ravel()
    if arr.shape[0] != n:
        raise DataValidationError(f"fold assignment has {arr.shape[0]} rows, expected {n}")
    return arr


# ---------------------------------------------------------------------------
# Assembly from a configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NuisanceConfig:
    """How to produce nuisances: model bases, clipping, folds, misspecification."""

    propensity: str = "fitted"  # "known" or "fitted"
    propensity_basis: str = "linear"
    outcome_basis: str = "linear"
    clip: float = DEFAULT_CLIP
    folds: int = 0  # 0 disables cross-fitting; conventional choice is 5
    ridge: float = 1e-8
    misspecify_propensity: bool = False
    misspecify_outcome: bool = False

    def validate(self) -> None:
        if self.propensity not in ("known", "fitted"):
            raise ConfigError(f"propensity must be 'known' or 'fitted', got {self.propensity!r}")
        basis_by_name(self.propensity_basis)
        basis_by_name(self.outcome_basis)
        if not (0.0 < self.clip < 0.5):
            raise ConfigError(f"clip must lie in (0, 1/2), got {self.clip}")
        if self.folds < 0:
            raise ConfigError("folds must be 0 (disabled) or a fold count >= 2")
        if self.ridge < 0.0:
            raise ConfigError("ridge must be nonnegative")

    def effective_propensity_basis(self) -> str:
        return "intercept" if self.misspecify_propensity else self.propensity_basis

    def effective_outcome_basis(self) -> str:
        return "intercept" if self.misspecify_outcome else self.outcome_basis


def build_nuisances(
    ds: ObservedDataset,
    config: NuisanceConfig,
    seed: SeedSpec,
    e_true: np.ndarray | None = None,
) -> NuisanceEstimates:
    """Fit (or pass through) both nuisances per the configuration."""
    config.validate()
    folds = config.folds if config.folds >= 2 else None
    fold_ids = split_folds(ds.n, folds, seed) if folds else None

    outcome = fit_outcome_regressions(
        ds, config.effective_outcome_basis(), ridge=config.ridge, folds=fold_ids
    )
    notes: list[str] = []
    if outcome.rank_deficient:
        notes.append("outcome basis rank-deficient; minimum-norm solution used")

    if config.propensity == "known":
        if e_true is None:
            raise ConfigError("propensity 'known' requires the simulator's e_true")
        e_hat = np.clip(np.asarray(e_true, dtype=np.float64), config.clip, 1.0 - config.clip)
        e_prov = "known-propensity"
        prop_model = None
        converged = True
    else:
        fit = fit_propensity(
            ds,
            config.effective_propensity_basis(),
            folds=fold_ids,
            clip=config.clip,
            seed=seed,
        )
        e_hat = fit.e_hat
        prop_model = fit.model
        converged = fit.converged
        if not fit.converged:
            notes.append(f"propensity fit stopped with gradient norm {fmt_float(fit.grad_norm)}")
        e_prov = f"cross-fitted(K={folds})" if folds else "fitted"
    m_prov = f"cross-fitted(K={folds})" if folds else "fitted"

    return NuisanceEstimates(
        e_hat=e_hat,
        m0_hat=outcome.m0_hat,
        m1_hat=outcome.m1_hat,
        provenance=f"e:{e_prov}|m:{m_prov}",
        clip=config.clip,
        propensity_model=prop_model,
        outcome_model0=outcome.model0,
        outcome_model1=outcome.model1,
        converged=converged,
        notes=tuple(notes),
    )


def write_nuisance_csv(path: str, nuis: NuisanceEstimates) -> None:
    """Audit export with header i,e_hat,m0_hat,m1_hat."""
    lines = ["i,e_hat,m0_hat,m1_hat"]
    for i in range(nuis.n):
        lines.append(
            f"{i},{fmt_float(nuis.e_hat[i])},{fmt_float(nuis.m0_hat[i])},{fmt_float(nuis.m1_hat[i])}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
