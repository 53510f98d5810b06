"""Training routes: exact welfare maximization by enumeration, least squares
over the signed policy class, their regularized variants, and plug-in rules.

All routes consume :class:`~welfarelens.pseudo.PseudoOutcomes`. Enumerable
routes evaluate candidates in fixed-size blocks with fixed-order summation,
compare objectives exactly (no tolerance), and return the full argoptimum
index set along with the canonical representative (lowest index; the member
order puts the treat-everybody constant first, so complete ties resolve
toward treatment).

The welfare objective and the signed least-squares objective are computed
independently here; their argoptimum sets coinciding is a theorem that the
evaluation module asserts, never an assumption.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import SeedSpec
from .errors import ConfigError, DataValidationError, EnumerationCapError
from .features import LinearModel, PolynomialBasis, basis_by_name
from .nuisance import NuisanceEstimates
from .policies import (
    DEFAULT_EVAL_CAP,
    EnumerablePolicyClass,
    ParametricPolicyClass,
    ScoreThresholdPolicy,
    threshold_decisions,
)
from .pseudo import PseudoOutcomes

ROUTES = (
    "ewm",
    "ls",
    "ewm-regularized",
    "ls-regularized",
    "plugin-tlearner",
    "plugin-ipwreg",
)


@dataclass(frozen=True, eq=False)
class TrainedPolicy:
    """Result of one training route.

    For enumerable routes, ``index`` points into the class (or candidate
    matrix) and ``argopt`` is the full set of optimal indices; parametric
    routes carry ``theta`` instead. ``decisions`` are the representative's
    values on the training rows. The stored objective re-evaluates to the
    same number (1e-12 relative) when recomputed from ``decisions``.
    """

    route: str
    objective: float | None
    argopt: tuple[int, ...] = ()
    index: int | None = None
    decisions: np.ndarray | None = None
    policy: Callable[[np.ndarray], np.ndarray] | None = None
    theta: tuple[float, ...] | None = None
    lam: float | None = None
    scale_constant: float | None = None
    converged: bool | None = None
    saturated: bool | None = None
    n_iter: int | None = None

    def to_record(self, include_decisions: bool = True) -> dict:
        """JSON-ready structured record of the trained policy."""
        rec: dict = {
            "route": self.route,
            "objective": None if self.objective is None else float(self.objective),
            "argopt": [int(i) for i in self.argopt],
            "index": None if self.index is None else int(self.index),
            "lambda": None if self.lam is None else float(self.lam),
            "scale_constant": None
            if self.scale_constant is None
            else float(self.scale_constant),
        }
        if self.theta is not None:
            rec["theta"] = [float(v) for v in self.theta]
        if self.converged is not None:
            rec["converged"] = bool(self.converged)
        if self.saturated is not None:
            rec["saturated"] = bool(self.saturated)
        if self.policy is not None and hasattr(self.policy, "to_spec"):
            rec["policy"] = self.policy.to_spec()
        elif include_decisions and self.decisions is not None:
            rec["decisions"] = [float(v) for v in self.decisions]
        return rec


def _check_rows(ps: PseudoOutcomes, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] != ps.n:
        raise DataValidationError(
            f"pseudo-outcomes cover {ps.n} rows but covariates have {X.shape[0]}"
        )
    return X


def ewm_enumerate(
    ps: PseudoOutcomes,
    policy_class: EnumerablePolicyClass,
    X: np.ndarray,
    cap: int = DEFAULT_EVAL_CAP,
    block_size: int = 256,
) -> TrainedPolicy:
    """Maximize the empirical welfare (1/n) sum[g1*p + g0*(1-p)] exactly."""
    X = _check_rows(ps, X)
    welfare = np.empty(len(policy_class))
    for start, block in policy_class.assignment_blocks(X, block_size, cap):
        vals = (block * ps.gamma1 + (1.0 - block) * ps.gamma0).mean(axis=1)
        welfare[start : start + block.shape[0]] = vals
    best = welfare.max()
    argopt = tuple(int(i) for i in np.flatnonzero(welfare == best))
    rep = argopt[0]
    member = policy_class.policy(rep)
    return TrainedPolicy(
        route="ewm",
        objective=float(best),
        argopt=argopt,
        index=rep,
        decisions=member(X),
        policy=member,
    )


def ls_enumerate(
    ps: PseudoOutcomes,
    policy_class: EnumerablePolicyClass,
    X: np.ndarray,
    cap: int = DEFAULT_EVAL_CAP,
    block_size: int = 256,
) -> TrainedPolicy:
    """Minimize the mean squared error of gamma against the signed policy.

    The candidate regressors are s = 2*p - 1 for p in the class, so each
    takes values in {-1, +1} row-wise.
    """
    X = _check_rows(ps, X)
    mse = np.empty(len(policy_class))
    for start, block in policy_class.assignment_blocks(X, block_size, cap):
        signed = 2.0 * block - 1.0
        mse[start : start + block.shape[0]] = ((ps.gamma - signed) ** 2).mean(axis=1)
    best = mse.min()
    argopt = tuple(int(i) for i in np.flatnonzero(mse == best))
    rep = argopt[0]
    member = policy_class.policy(rep)
    return TrainedPolicy(
        route="ls",
        objective=float(best),
        argopt=argopt,
        index=rep,
        decisions=member(X),
        policy=member,
    )


# ---------------------------------------------------------------------------
# Regularized routes
# ---------------------------------------------------------------------------


def _candidate_matrix(candidates: np.ndarray, n_rows: int) -> np.ndarray:
    C = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if C.shape[1] != n_rows:
        raise DataValidationError(
            f"candidates assign {C.shape[1]} rows but data has {n_rows}"
        )
    if np.any(C < 0.0) or np.any(C > 1.0) or not np.all(np.isfinite(C)):
        raise DataValidationError("candidate policies must take values in [0, 1]")
    return C


def fractional_grid_candidates(
    n_rows: int, levels: int = 10, cap: int = 100_000
) -> np.ndarray:
    """Every per-row assignment from the grid {0, 1/L, ..., 1}: (L+1)^n rows.

    Only feasible for very small n; used for exhaustive verification of the
    regularized equivalence. Rows are ordered from all-treat downward so
    that lowest-index tie-breaking resolves toward treatment, matching the
    enumerable classes.
    """
    if levels < 1:
        raise ConfigError("need at least one grid level")
    count = (levels + 1) ** n_rows
    if count > cap:
        raise EnumerationCapError(
            f"fractional grid has {count} candidates, exceeding the cap of {cap}"
        )
    values = np.arange(levels, -1, -1) / levels
    combos = np.array(list(itertools.product(values, repeat=n_rows)))
    return combos.reshape(count, n_rows)


def ewm_regularized(
    ps: PseudoOutcomes,
    candidates: np.ndarray | EnumerablePolicyClass | ParametricPolicyClass,
    lam: float,
    X: np.ndarray | None = None,
    cap: int = DEFAULT_EVAL_CAP,
    **optim_kwargs,
) -> TrainedPolicy:
    """Maximize welfare minus lam * mean((2p - 1)^2) over the candidates.

    Candidates may be an explicit matrix of [0, 1] assignments (one row per
    candidate), an enumerable 0-1 class (with X), or a parametric sigmoid
    class (with X), in which case a deterministic full-batch gradient ascent
    from theta = 0 is used.
    """
    if lam < 0.0:
        raise ConfigError(f"regularization strength must be nonnegative, got {lam}")
    if isinstance(candidates, ParametricPolicyClass):
        if X is None:
            raise ConfigError("parametric route needs the covariate matrix X")
        return _parametric_route(ps, candidates, _check_rows(ps, X), lam, "ewm-regularized",
                                 **optim_kwargs)
    if isinstance(candidates, EnumerablePolicyClass):
        if X is None:
            raise ConfigError("enumerable route needs the covariate matrix X")
        C = candidates.assignments(_check_rows(ps, X), cap)
    else:
        C = _candidate_matrix(candidates, ps.n)
    signed = 2.0 * C - 1.0
    vals = (C * ps.gamma1 + (1.0 - C) * ps.gamma0).mean(axis=1) - lam * (signed**2).mean(axis=1)
    best = vals.max()
    argopt = tuple(int(i) for i in np.flatnonzero(vals == best))
    rep = argopt[0]
    return TrainedPolicy(
        route="ewm-regularized",
        objective=float(best),
        argopt=argopt,
        index=rep,
        decisions=C[rep].copy(),
        lam=float(lam),
    )


def ls_regularized(
    ps: PseudoOutcomes,
    candidates: np.ndarray | EnumerablePolicyClass | ParametricPolicyClass,
    lam: float,
    X: np.ndarray | None = None,
    cap: int = DEFAULT_EVAL_CAP,
    **optim_kwargs,
) -> TrainedPolicy:
    """Minimize mean((gamma/sqrt(lam) - sqrt(lam) * s)^2) over the candidates."""
    if lam <= 0.0:
        raise ConfigError(f"least-squares scale requires lam > 0, got {lam}")
    if isinstance(candidates, ParametricPolicyClass):
        if X is None:
            raise ConfigError("parametric route needs the covariate matrix X")
        return _parametric_route(ps, candidates, _check_rows(ps, X), lam, "ls-regularized",
                                 **optim_kwargs)
    if isinstance(candidates, EnumerablePolicyClass):
        if X is None:
            raise ConfigError("enumerable route needs the covariate matrix X")
        C = candidates.assignments(_check_rows(ps, X), cap)
    else:
        C = _candidate_matrix(candidates, ps.n)
    signed = 2.0 * C - 1.0
    root = math.sqrt(lam)
    vals = ((ps.gamma / root - root * signed) ** 2).mean(axis=1)
    best = vals.min()
    argopt = tuple(int(i) for i in np.flatnonzero(vals == best))
    rep = argopt[0]
    return TrainedPolicy(
        route="ls-regularized",
        objective=float(best),
        argopt=argopt,
        index=rep,
        decisions=C[rep].copy(),
        lam=float(lam),
    )


# --- deterministic full-batch gradient optimizer ----------------------------

THETA_BOUND = 30.0


def _parametric_route(
    ps: PseudoOutcomes,
    pclass: ParametricPolicyClass,
    X: np.ndarray,
    lam: float,
    route: str,
    max_iter: int = 100_000,
    tol: float = 1e-8,
    theta_bound: float = THETA_BOUND,
) -> TrainedPolicy:
    B = pclass.basis.transform(X)
    n, p = B.shape
    gamma = ps.gamma
    gmax = float(np.max(np.abs(gamma))) if n else 0.0
    # spectral bound on the Hessian via per-row curvature bounds
    bt_b_max = float(np.linalg.eigvalsh(B.T @ B / n)[-1])
    if route == "ewm-regularized":
        curvature = 0.1 * gmax + lam
        maximize = True
    else:
        curvature = 0.9 * lam + 0.4 * gmax
        maximize = False
    step = 1.0 / (curvature * bt_b_max + 1e-12)

    def grad_and_value(theta: np.ndarray) -> tuple[np.ndarray, float]:
        z = B @ theta
        mu = 1.0 / (1.0 + np.exp(-np.clip(z, -700, 700)))
        s = 2.0 * mu - 1.0
        if route == "ewm-regularized":
            value = float(
                np.mean(ps.gamma1 * mu + ps.gamma0 * (1.0 - mu)) - lam * np.mean(s**2)
            )
            g = B.T @ ((gamma - 4.0 * lam * s) * mu * (1.0 - mu)) / n
        else:
            root = math.sqrt(lam)
            value = float(np.mean((gamma / root - root * s) ** 2))
            g = B.T @ ((lam * s - gamma) * (1.0 - s**2)) / n
        return g, value

    theta = np.zeros(p)
    converged = False
    saturated = False
    it = 0
    _, value = grad_and_value(theta)
    # deterministic step schedule: double after an accepted step, halve until
    # the objective improves; saturating runs reach the bound in log time
    for it in range(1, max_iter + 1):
        g, value = grad_and_value(theta)
        direction = g if maximize else -g
        at_hi = theta >= theta_bound
        at_lo = theta <= -theta_bound
        projected = direction.copy()
        projected[at_hi & (direction > 0)] = 0.0
        projected[at_lo & (direction < 0)] = 0.0
        if float(np.max(np.abs(projected))) <= tol:
            converged = not (at_hi.any() or at_lo.any())
            saturated = bool(at_hi.any() or at_lo.any())
            break
        moved = False
        for _ in range(200):
            cand = np.clip(theta + step * direction, -theta_bound, theta_bound)
            _, cand_value = grad_and_value(cand)
            better = cand_value >= value if maximize else cand_value <= value
            if better and not np.array_equal(cand, theta):
                theta = cand
                step = min(step * 2.0, 1e12)
                moved = True
                break
            step *= 0.5
            if step < 1e-18:
                break
        if not moved:
            break
    g, value = grad_and_value(theta)
    decisions = pclass.pi(theta, X)
    # a vanishing gradient with every probability at the numerical extremes
    # means the ascent direction is unbounded: report saturation, not an
    # interior optimum
    if converged and theta.size and np.abs(theta).max() > 0.0:
        if float(np.minimum(decisions, 1.0 - decisions).max()) < 1e-6:
            converged = False
            saturated = True
    return TrainedPolicy(
        route=route,
        objective=value,
        theta=tuple(float(v) for v in theta),
        decisions=decisions,
        policy=pclass.policy(theta),
        lam=float(lam),
        converged=converged,
        saturated=saturated,
        n_iter=it,
    )


# ---------------------------------------------------------------------------
# Empirical resolution of the regularization scale
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LambdaScaleResult:
    """Measured ratio c with penalized-welfare strength = c * least-squares scale.

    For each scale on the grid and each random pseudo-outcome draw, the
    scaled squared-error objective over the candidates is decomposed exactly
    onto (1, welfare, penalty); the decomposition pins the unique penalized
    welfare strength whose argmax set coincides with the squared-error argmin
    set, and the coincidence is then verified by direct set comparison.
    """

    ratio: float
    dispersion: float
    match: str  # "4" | "1/4" | "other"
    ok: bool
    n_draws: int
    lambda_grid: tuple[float, ...]
    ratios: tuple[float, ...]
    failures: tuple[str, ...]


def resolve_lambda_scale(
    candidates: np.ndarray,
    lambda_grid: Sequence[float],
    seed: SeedSpec,
    n_draws: int = 20,
    max_candidates: int = 10_000,
) -> LambdaScaleResult:
    """Measure the strength ratio linking the two regularized objectives.

    The candidate set should be small and exhaustive, e.g.
    :func:`fractional_grid_candidates` over a handful of rows. A grid or
    bisection search cannot resolve the ratio sharply (the argoptimum sets
    coincide on an interval of strengths for any finite candidate set), so
    the ratio is extracted from the exact affine decomposition and then
    confirmed by set equality.
    """
    C = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if C.shape[0] > max_candidates:
        raise EnumerationCapError(
            f"{C.shape[0]} candidates exceed the exhaustive cap of {max_candidates}"
        )
    if C.shape[0] < 4:
        raise ConfigError("need at least 4 candidates to identify the decomposition")
    if np.any(C < 0.0) or np.any(C > 1.0):
        raise DataValidationError("candidates must take values in [0, 1]")
    n = C.shape[1]
    signed = 2.0 * C - 1.0
    penalty = (signed**2).mean(axis=1)
    rng = seed.rng("solver_init")
    ratios: list[float] = []
    failures: list[str] = []
    for lam in lambda_grid:
        lam = float(lam)
        if lam <= 0.0:
            raise ConfigError(f"scale grid entries must be positive, got {lam}")
        root = math.sqrt(lam)
        for draw in range(n_draws):
            gamma0 = rng.normal(size=n)
            gamma = rng.normal(size=n)
            gamma1 = gamma0 + gamma
            welfare = (C * gamma1 + (1.0 - C) * gamma0).mean(axis=1)
            sq_err = ((gamma / root - root * signed) ** 2).mean(axis=1)
            design = np.column_stack([np.ones_like(welfare), welfare, penalty])
            coef, _, rank, _ = np.linalg.lstsq(design, sq_err, rcond=None)
            resid = sq_err - design @ coef
            rel = float(np.linalg.norm(resid) / max(1.0, np.linalg.norm(sq_err)))
            if rank < 3 or rel > 1e-9:
                failures.append(
                    f"lam={lam} draw={draw}: no affine decomposition (residual {rel:.2e})"
                )
                continue
            _, b_w, b_q = coef
            if b_w >= 0.0:
                failures.append(f"lam={lam} draw={draw}: welfare coefficient not negative")
                continue
            lam_ewm = float(-b_q / b_w)
            penalized = welfare - lam_ewm * penalty
            argmax = np.flatnonzero(penalized == penalized.max())
            argmin = np.flatnonzero(sq_err == sq_err.min())
            if not np.array_equal(argmax, argmin):
                failures.append(
                    f"lam={lam} draw={draw}: argoptimum sets differ at the implied strength"
                )
                continue
            ratios.append(lam_ewm / lam)
    if not ratios:
        return LambdaScaleResult(
            ratio=float("nan"),
            dispersion=float("inf"),
            match="other",
            ok=False,
            n_draws=n_draws,
            lambda_grid=tuple(float(v) for v in lambda_grid),
            ratios=(),
            failures=tuple(failures),
        )
    arr = np.asarray(ratios)
    mean_ratio = float(arr.mean())
    dispersion = float((arr.max() - arr.min()) / abs(mean_ratio))
    if abs(mean_ratio - 4.0) <= 4.0 * 1e-6:
        match = "4"
    elif abs(mean_ratio - 0.25) <= 0.25 * 1e-6:
        match = "1/4"
    else:
        match = "other"
    return LambdaScaleResult(
        ratio=mean_ratio,
        dispersion=dispersion,
        match=match,
        ok=not failures,
        n_draws=n_draws,
        lambda_grid=tuple(float(v) for v in lambda_grid),
        ratios=tuple(float(v) for v in arr),
        failures=tuple(failures),
    )


# ---------------------------------------------------------------------------
# Plug-in routes
# ---------------------------------------------------------------------------


def plugin_tlearner(nuis: NuisanceEstimates) -> TrainedPolicy:
    """Treat where the estimated effect m1_hat - m0_hat is nonnegative."""
    if "m:" not in nuis.provenance:
        raise DataValidationError(
            "plug-in needs fitted outcome regressions; these nuisances carry none"
        )
    scores = nuis.m1_hat - nuis.m0_hat
    decisions = threshold_decisions(scores)
    policy = None
    if nuis.outcome_model0 is not None and nuis.outcome_model1 is not None:
        m0, m1 = nuis.outcome_model0, nuis.outcome_model1
        policy = ScoreThresholdPolicy(
            score=lambda X: m1.predict(X) - m0.predict(X), label="plugin-tlearner"
        )
    return TrainedPolicy(
        route="plugin-tlearner",
        objective=None,
        decisions=decisions,
        policy=policy,
    )


def plugin_ipw_regression(
    ps: PseudoOutcomes,
    X: np.ndarray,
    basis: PolynomialBasis | str = "linear",
    ridge: float = 0.0,
) -> TrainedPolicy:
    """Regress the pseudo-outcome on the basis, then treat where the fit >= 0.

    This is the convex relaxation of the enumeration routes: an
    unconstrained ridge least squares followed by thresholding.
    """
    if ps.kind not in ("ipw", "dr"):
        raise DataValidationError(
            f"direct pseudo-outcome regression expects ipw or dr targets, got {ps.kind!r}"
        )
    if isinstance(basis, str):
        basis = basis_by_name(basis)
    X = _check_rows(ps, X)
    B = basis.transform(X)
    mask = basis.penalty_mask(X.shape[1])
    if ridge < 0.0:
        raise ConfigError(f"ridge penalty must be nonnegative, got {ridge}")
    if ridge == 0.0:
        coef, _, _, _ = np.linalg.lstsq(B, ps.gamma, rcond=None)
    else:
        coef = np.linalg.solve(B.T @ B + ridge * np.diag(mask), B.T @ ps.gamma)
    model = LinearModel(basis=basis, coef=tuple(float(v) for v in coef))
    scores = B @ coef
    return TrainedPolicy(
        route="plugin-ipwreg",
        objective=float(np.mean((ps.gamma - scores) ** 2)),
        decisions=threshold_decisions(scores),
        policy=ScoreThresholdPolicy(score=model.predict, label="plugin-ipwreg"),
        theta=tuple(float(v) for v in coef),
    )
