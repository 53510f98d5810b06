"""Welfare estimation, the equivalence auditor, and regret experiments.

The auditor turns the equivalence between welfare maximization and signed
least squares into executable checks:

* exact argoptimum set comparison between the two enumeration routes;
* the affine identity W_hat(p) + MSE(2p - 1) / 4 = C_n for every 0-1 policy
  p, where C_n = mean(gamma0) + mean(gamma)/2 + mean(gamma^2)/4 + 1/4
  depends on the data but not on the policy;
* the measured strength ratio linking the two regularized objectives.

The regret experiment trains each configured route per replication and
evaluates true welfare on one fixed Monte Carlo covariate sample shared by
every policy (common random numbers), so a trained policy that equals the
best-in-class policy has exactly zero estimated regret.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import SeedSpec, fmt_float, thread_cap
from .dgp import DgpSpec, generate, sample_covariates
from .errors import ConfigError, DataValidationError
from .nuisance import (
    NuisanceConfig,
    NuisanceEstimates,
    build_nuisances,
    fit_outcome_regressions,
)
from .policies import DEFAULT_EVAL_CAP, EnumerablePolicyClass, to_signed
from .pseudo import PseudoOutcomes, dr_pseudo, ipw_pseudo, oracle_pseudo
from .solvers import (
    LambdaScaleResult,
    TrainedPolicy,
    ewm_enumerate,
    ewm_regularized,
    fractional_grid_candidates,
    ls_enumerate,
    ls_regularized,
    plugin_ipw_regression,
    plugin_tlearner,
    resolve_lambda_scale,
)

SWEEP_ROUTES = ("ewm", "ls", "plugin-tlearner", "plugin-ipwreg")

REGRET_CSV_HEADER = (
    "seed,route,n,lambda,w_emp,w_true,se_true,w_star_class,w_fb,"
    "regret_class,regret_fb,equiv_flag,affine_resid,scale_const"
)


def empirical_welfare(ps: PseudoOutcomes, decisions: np.ndarray) -> float:
    """(1/n) sum of gamma1*p + gamma0*(1-p), fixed-order summation."""
    p = np.asarray(decisions, dtype=np.float64).ravel()
    if p.shape[0] != ps.n:
        raise DataValidationError(f"decisions cover {p.shape[0]} rows, expected {ps.n}")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise DataValidationError("decisions must lie in [0, 1]")
    return float(np.mean(ps.gamma1 * p + ps.gamma0 * (1.0 - p)))


def empirical_mse(ps: PseudoOutcomes, signed: np.ndarray, lam: float | None = None) -> float:
    """(1/n) sum of (gamma/sqrt(lam) - sqrt(lam)*s)^2; lam defaults to 1."""
    s = np.asarray(signed, dtype=np.float64).ravel()
    if s.shape[0] != ps.n:
        raise DataValidationError(f"signed values cover {s.shape[0]} rows, expected {ps.n}")
    if np.any(s < -1.0) or np.any(s > 1.0):
        raise DataValidationError("signed values must lie in [-1, 1]")
    if lam is None:
        lam = 1.0
    if lam <= 0.0:
        raise ConfigError(f"scale must be positive, got {lam}")
    root = np.sqrt(lam)
    return float(np.mean((ps.gamma / root - root * s) ** 2))


def affine_constant(ps: PseudoOutcomes, lam: float | None = None) -> float:
    """The policy-independent constant of the welfare / squared-error identity.

    Without a scale: W_hat(p) + MSE(2p-1)/4 equals
    mean(gamma0) + mean(gamma)/2 + mean(gamma^2)/4 + 1/4 for every 0-1
    policy (the signed square is identically 1 there). With a scale lam:
    [W_hat(p) - (lam/4)*mean((2p-1)^2)] + MSE_lam(2p-1)/4 equals
    mean(gamma0) + mean(gamma)/2 + mean(gamma^2)/(4*lam) for every [0, 1]
    policy. Both follow from expanding the square; verify with
    direct evaluation before relying on it (the tests do).
    """
    base = float(np.mean(ps.gamma0) + 0.5 * np.mean(ps.gamma))
    if lam is None:
        return base + 0.25 * float(np.mean(ps.gamma**2)) + 0.25
    if lam <= 0.0:
        raise ConfigError(f"scale must be positive, got {lam}")
    return base + 0.25 * float(np.mean(ps.gamma**2)) / lam


@dataclass(frozen=True)
class EquivalenceReport:
    """Executable form of the equivalence theorems for one dataset and class."""

    ewm_argmax: tuple[int, ...]
    ls_argmin: tuple[int, ...]
    sets_equal: bool
    max_affine_residual: float
    affine_tolerance: float
    c_n: float
    n_policies: int
    n_rows: int
    ewm_seconds: float
    ls_seconds: float
    scale: LambdaScaleResult | None = None
    lambda_flags: tuple[tuple[float, bool], ...] | None = None

    def to_record(self) -> dict:
        rec = {
            "ewm_argmax": [int(i) for i in self.ewm_argmax],
            "ls_argmin": [int(i) for i in self.ls_argmin],
            "sets_equal": bool(self.sets_equal),
            "max_affine_residual": float(self.max_affine_residual),
            "affine_tolerance": float(self.affine_tolerance),
            "c_n": float(self.c_n),
            "n_policies": int(self.n_policies),
            "n_rows": int(self.n_rows),
            "ewm_seconds": float(self.ewm_seconds),
            "ls_seconds": float(self.ls_seconds),
        }
        if self.scale is not None:
            rec["lambda_scale"] = {
                "ratio": self.scale.ratio,
                "dispersion": self.scale.dispersion,
                "match": self.scale.match,
                "ok": self.scale.ok,
                "failures": list(self.scale.failures),
            }
        if self.lambda_flags is not None:
            rec["lambda_flags"] = [[lam, bool(flag)] for lam, flag in self.lambda_flags]
        return rec


def audit_equivalence(
    ps: PseudoOutcomes,
    policy_class: EnumerablePolicyClass,
    X: np.ndarray,
    seed: SeedSpec,
    lambda_grid: Sequence[float] | None = None,
    n_affine: int = 100,
    cap: int = DEFAULT_EVAL_CAP,
    resolve_rows: int = 3,
    resolve_levels: int = 10,
    resolve_draws: int = 20,
) -> EquivalenceReport:
    """Run both enumeration routes, compare argoptimum sets, check the identity.

    With a lambda grid, also evaluates both regularized routes over the class
    per grid point (using the measured strength ratio) and resolves that
    ratio on an exhaustive fractional-grid candidate set. Population-level
    audits are the same call with oracle pseudo-outcomes from a large
    simulated dataset.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    t0 = time.perf_counter()
    ewm = ewm_enumerate(ps, policy_class, X, cap)
    t_ewm = time.perf_counter() - t0
    t0 = time.perf_counter()
    ls = ls_enumerate(ps, policy_class, X, cap)
    t_ls = time.perf_counter() - t0
    sets_equal = ewm.argopt == ls.argopt

    c_n = affine_constant(ps)
    tol = 1e-10 * (1.0 + abs(c_n))
    rng = seed.rng("monte_carlo", 1)
    sampled = rng.integers(0, len(policy_class), size=n_affine)
    max_resid = 0.0
    for i in sampled:
        dec = policy_class.policy(int(i))(X)
        resid = abs(
            empirical_welfare(ps, dec) + 0.25 * empirical_mse(ps, to_signed(dec)) - c_n
        )
        max_resid = max(max_resid, resid)

    scale: LambdaScaleResult | None = None
    lambda_flags: tuple[tuple[float, bool], ...] | None = None
    if lambda_grid is not None:
        candidates = fractional_grid_candidates(resolve_rows, resolve_levels)
        scale = resolve_lambda_scale(candidates, lambda_grid, seed, resolve_draws)
        flags = []
        matrix = policy_class.assignments(X, cap)
        for lam in lambda_grid:
            reg_w = ewm_regularized(ps, matrix, scale.ratio * float(lam))
            reg_m = ls_regularized(ps, matrix, float(lam))
            flags.append((float(lam), reg_w.argopt == reg_m.argopt))
        lambda_flags = tuple(flags)

    return EquivalenceReport(
        ewm_argmax=ewm.argopt,
        ls_argmin=ls.argopt,
        sets_equal=sets_equal,
        max_affine_residual=float(max_resid),
        affine_tolerance=float(tol),
        c_n=float(c_n),
        n_policies=len(policy_class),
        n_rows=X.shape[0],
        ewm_seconds=t_ewm,
        ls_seconds=t_ls,
        scale=scale,
        lambda_flags=lambda_flags,
    )


# ---------------------------------------------------------------------------
# Regret experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegretRecord:
    """One (replication, route) row of a regret experiment."""

    seed: int
    route: str
    n: int
    lam: float | None
    w_emp: float
    w_true: float
    se_true: float
    w_star_class: float
    w_fb: float
    regret_class: float
    regret_fb: float
    equiv_flag: bool | None
    affine_resid: float | None
    scale_const: float | None


@dataclass(frozen=True)
class RegretConfig:
    """Design of a regret experiment over sample sizes and routes.

    The policy class must be fixed up front (explicit grids, not data
    quantiles): the best-in-class benchmark is a property of the class, not
    of any one replication.
    """

    dgp: DgpSpec
    policy_class: EnumerablePolicyClass
    routes: tuple[str, ...]
    pseudo_kind: str
    nuisance: NuisanceConfig
    n_grid: tuple[int, ...]
    replications: int
    seed: SeedSpec
    mc_draws: int = 1_000_000
    cap: int = DEFAULT_EVAL_CAP
    plugin_basis: str = "linear"
    plugin_ridge: float = 1e-8

    def validate(self) -> None:
        for route in self.routes:
            if route not in SWEEP_ROUTES:
                raise ConfigError(
                    f"unknown route {route!r}; sweep routes are {SWEEP_ROUTES}"
                )
        if self.pseudo_kind not in ("ipw", "dr", "oracle"):
            raise ConfigError(f"unknown pseudo-outcome kind {self.pseudo_kind!r}")
        if self.replications < 1:
            raise ConfigError("need at least one replication")
        if not self.n_grid:
            raise ConfigError("empty sample-size grid")
        if self.mc_draws < 2:
            raise ConfigError("Monte Carlo size must be at least 2")
        self.nuisance.validate()


@dataclass(frozen=True, eq=False)
class _TruthTable:
    """True welfare of every class member on one shared covariate sample."""

    base_mean: float
    member_value: np.ndarray
    member_se: np.ndarray
    w_star: float
    w_fb: float
    m0_mc: np.ndarray
    tau_mc: np.ndarray
    X_mc: np.ndarray

    def evaluate_policy(self, policy) -> tuple[float, float]:
        dec = np.asarray(policy(self.X_mc), dtype=np.float64)
        vals = self.m0_mc + self.tau_mc * dec
        m = vals.shape[0]
        return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(m))


def _truth_table(config: RegretConfig) -> _TruthTable:
    spec = config.dgp
    X_mc = sample_covariates(spec, config.mc_draws, config.seed.rng("monte_carlo"))
    m0_mc = spec.baseline(X_mc)
    tau_mc = spec.cate(X_mc)
    members = config.policy_class.members
    values = np.empty(len(members))
    ses = np.empty(len(members))
    m = X_mc.shape[0]
    for i, member in enumerate(members):
        vals = m0_mc + tau_mc * member(X_mc)
        values[i] = vals.mean()
        ses[i] = vals.std(ddof=1) / np.sqrt(m)
    fb_vals = m0_mc + tau_mc * (tau_mc >= 0.0)
    return _TruthTable(
        base_mean=float(m0_mc.mean()),
        member_value=values,
        member_se=ses,
        w_star=float(values.max()),
        w_fb=float(fb_vals.mean()),
        m0_mc=m0_mc,
        tau_mc=tau_mc,
        X_mc=X_mc,
    )


def _train_route(
    route: str,
    config: RegretConfig,
    ps: PseudoOutcomes,
    ds,
) -> TrainedPolicy:
    if route == "ewm":
        return ewm_enumerate(ps, config.policy_class, ds.X, config.cap)
    if route == "ls":
        return ls_enumerate(ps, config.policy_class, ds.X, config.cap)
    if route == "plugin-tlearner":
        # the plug-in rule always thresholds a full-data fit, independent of
        # whatever cross-fitting the pseudo-outcomes used
        fit = fit_outcome_regressions(
            ds, config.nuisance.effective_outcome_basis(), ridge=config.nuisance.ridge
        )
        full = NuisanceEstimates(
            e_hat=np.full(ds.n, 0.5),
            m0_hat=fit.m0_hat,
            m1_hat=fit.m1_hat,
            provenance="e:unused|m:fitted",
            clip=config.nuisance.clip,
            outcome_model0=fit.model0,
            outcome_model1=fit.model1,
        )
        return plugin_tlearner(full)
    if route == "plugin-ipwreg":
        return plugin_ipw_regression(ps, ds.X, config.plugin_basis, config.plugin_ridge)
    raise ConfigError(f"unknown route {route!r}")


def _run_replication(
    config: RegretConfig, truth: _TruthTable, n_index: int, n: int, rep: int
) -> list[RegretRecord]:
    rep_seed = config.seed.derive(n_index, rep)
    spec = replace(config.dgp, n=n)
    ods = generate(spec, rep_seed)
    ds = ods.base
    nuis = build_nuisances(ds, config.nuisance, rep_seed, e_true=ods.e_true)
    if config.pseudo_kind == "oracle":
        ps = oracle_pseudo(ods)
    elif config.pseudo_kind == "ipw":
        ps = ipw_pseudo(ds, nuis.e_hat)
    else:
        ps = dr_pseudo(ds, nuis)

    trained: dict[str, TrainedPolicy] = {
        route: _train_route(route, config, ps, ds) for route in config.routes
    }
    equiv_flag: bool | None = None
    if "ewm" in trained and "ls" in trained:
        equiv_flag = trained["ewm"].argopt == trained["ls"].argopt
    c_n = affine_constant(ps)

    records = []
    for route in config.routes:
        tp = trained[route]
        w_emp = empirical_welfare(ps, tp.decisions)
        if route in ("ewm", "ls"):
            w_true = float(truth.member_value[tp.index])
            se_true = float(truth.member_se[tp.index])
            resid = abs(
                w_emp + 0.25 * empirical_mse(ps, to_signed(tp.decisions)) - c_n
            )
            flag = equiv_flag
        else:
            w_true, se_true = truth.evaluate_policy(tp.policy)
            resid = None
            flag = None
        records.append(
            RegretRecord(
                seed=rep_seed.master_seed,
                route=route,
                n=n,
                lam=None,
                w_emp=w_emp,
                w_true=w_true,
                se_true=se_true,
                w_star_class=truth.w_star,
                w_fb=truth.w_fb,
                regret_class=truth.w_star - w_true,
                regret_fb=truth.w_fb - w_true,
                equiv_flag=flag,
                affine_resid=resid,
                scale_const=None,
            )
        )
    return records


def regret_experiment(config: RegretConfig) -> list[RegretRecord]:
    """Simulate, train every route, and measure regret per replication.

    Replications are independent and may run on a thread pool capped by
    WELFARELENS_THREADS; records come back in (n, replication, route) order
    regardless of scheduling.
    """
    config.validate()
    truth = _truth_table(config)
    jobs = [
        (n_index, n, rep)
        for n_index, n in enumerate(config.n_grid)
        for rep in range(config.replications)
    ]
    workers = min(thread_cap(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            nested = list(
                pool.map(lambda args: _run_replication(config, truth, *args), jobs)
            )
    else:
        nested = [_run_replication(config, truth, *args) for args in jobs]
    return [rec for batch in nested for rec in batch]


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return fmt_float(value)
    return str(value)


def write_regret_csv(path: str, records: Sequence[RegretRecord]) -> None:
    lines = [REGRET_CSV_HEADER]
    for r in records:
        lines.append(
            ",".join(
                _csv_cell(v)
                for v in (
                    r.seed, r.route, r.n, r.lam, r.w_emp, r.w_true, r.se_true,
                    r.w_star_class, r.w_fb, r.regret_class, r.regret_fb,
                    r.equiv_flag, r.affine_resid, r.scale_const,
                )
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
