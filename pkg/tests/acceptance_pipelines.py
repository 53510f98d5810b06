"""Deterministic pipelines backing the acceptance suite.

Each pipeline is a pure function of its master seed: it runs one acceptance
experiment, writes its primary CSV, and returns the rows it wrote so the
tests can assert on them. Rerunning with the same seed must reproduce the
file byte for byte (that is itself one of the acceptance criteria).
"""

from __future__ import annotations

import numpy as np

from welfarelens import (
    ConstantPropensity,
    DgpSpec,
    LinearFunction,
    LogisticPropensity,
    NuisanceConfig,
    RegretConfig,
    SeedSpec,
    StepFunction,
    UniformCovariates,
    audit_equivalence,
    build_nuisances,
    dr_pseudo,
    empirical_welfare,
    first_best_policy,
    fractional_grid_candidates,
    generate,
    ipw_pseudo,
    oracle_pseudo,
    rectangle_class_from_data,
    regret_experiment,
    resolve_lambda_scale,
    threshold_class,
    threshold_class_from_data,
    write_regret_csv,
)
from welfarelens.core import fmt_float
from welfarelens.evaluation import RegretRecord
from welfarelens.solvers import ewm_enumerate, ls_enumerate


def _write_csv(path, header: str, rows: list[list]) -> None:
    def cell(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return fmt_float(v)
        return str(v)

    lines = [header] + [",".join(cell(v) for v in row) for row in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Criteria 1 + 2: exact equivalence and the affine identity over 200 random
# configurations
# ---------------------------------------------------------------------------

EQUIV_HEADER = (
    "config_id,n,pseudo,class_kind,n_policies,sets_equal,max_affine_resid,"
    "affine_tol,c_n"
)


def _random_dgp(rng: np.random.Generator, n: int) -> DgpSpec:
    if rng.random() < 0.5:
        propensity = ConstantPropensity(p=float(rng.uniform(0.35, 0.65)))
    else:
        propensity = LogisticPropensity(
            intercept=float(rng.normal(scale=0.3)),
            slopes=(float(rng.normal(scale=0.5)), float(rng.normal(scale=0.3))),
        )
    baseline = LinearFunction(
        intercept=float(rng.normal()), slopes=(float(rng.normal()), float(rng.normal(scale=0.5)))
    )
    if rng.random() < 0.5:
        cate = LinearFunction(
            intercept=float(rng.normal(scale=0.5)),
            slopes=(float(rng.uniform(0.5, 2.0)), float(rng.normal(scale=0.3))),
        )
    else:
        cate = StepFunction(
            coord=0,
            threshold=float(rng.uniform(-0.8, 0.8)),
            low=float(-rng.uniform(0.2, 1.0)),
            high=float(rng.uniform(0.2, 1.0)),
        )
    return DgpSpec(
        n=n,
        d_x=2,
        covariates=UniformCovariates(-1.5, 1.5),
        propensity=propensity,
        baseline=baseline,
        cate=cate,
        noise_scale=float(rng.uniform(0.3, 1.0)),
        y_max=60.0,
        overlap=0.02,
    )


def run_equivalence_battery(out_csv, master_seed: int, n_configs: int = 200):
    seed = SeedSpec(master_seed)
    rows = []
    for i in range(n_configs):
        cfg_seed = seed.derive(100, i)
        rng = cfg_seed.rng("dgp", 999)
        n = (20, 100, 500)[i % 3]
        pseudo_kind = ("ipw", "dr")[i % 2]
        class_kind = ("threshold", "rectangle")[(i // 2) % 2]

        spec = _random_dgp(rng, n)
        ods = generate(spec, cfg_seed)
        ds = ods.base
        if pseudo_kind == "ipw":
            ps = ipw_pseudo(ds, np.clip(ods.e_true, 0.01, 0.99))
        else:
            folds = 2 if (n >= 100 and i % 4 == 1) else 0
            nuis = build_nuisances(
                ds,
                NuisanceConfig(propensity="fitted", folds=folds, ridge=1e-6),
                cfg_seed,
            )
            ps = dr_pseudo(ds, nuis)

        if class_kind == "threshold":
            q = (5, 9, 25, 40)[i % 4]
            pc = threshold_class_from_data(ds.X, coords=(0, 1), n_quantiles=q)
        else:
            m = (3, 4, 5, 6)[i % 4]
            pc = rectangle_class_from_data(ds.X, m)

        report = audit_equivalence(ps, pc, ds.X, cfg_seed, n_affine=100)
        rows.append(
            [
                i, n, pseudo_kind, class_kind, report.n_policies,
                report.sets_equal, report.max_affine_residual,
                report.affine_tolerance, report.c_n,
            ]
        )
    _write_csv(out_csv, EQUIV_HEADER, rows)
    return rows


# ---------------------------------------------------------------------------
# Criterion 3: population-level equivalence selects the first-best policy
# ---------------------------------------------------------------------------

POP_HEADER = "rep,sigma,ewm_selects_fb,ls_selects_fb,sets_equal"

_POP_GRID = (-0.9, -0.45, 0.0, 0.3, 0.75, 1.1)  # contains the effect's sign change


def _population_spec(sigma: float) -> DgpSpec:
    return DgpSpec(
        n=100_000,
        d_x=1,
        covariates=UniformCovariates(-1.5, 1.5),
        propensity=ConstantPropensity(0.5),
        baseline=LinearFunction(0.5, (1.0,)),
        cate=StepFunction(coord=0, threshold=0.3, low=-0.5, high=0.75),
        noise_scale=sigma,
        y_max=40.0,
    )


def run_population_equivalence(out_csv, master_seed: int, replications: int = 50):
    seed = SeedSpec(master_seed)
    pc = threshold_class({0: list(_POP_GRID)})
    rows = []
    jobs = [(0, 0.0)] + [(rep, 0.5) for rep in range(1, replications + 1)]
    for rep, sigma in jobs:
        spec = _population_spec(sigma)
        ods = generate(spec, seed.derive(300, rep))
        ps = oracle_pseudo(ods)
        fb_dec = first_best_policy(spec)(ods.base.X)
        ewm = ewm_enumerate(ps, pc, ods.base.X, cap=10**7)
        ls = ls_enumerate(ps, pc, ods.base.X, cap=10**7)
        rows.append(
            [
                rep, sigma,
                bool(np.array_equal(ewm.decisions, fb_dec)),
                bool(np.array_equal(ls.decisions, fb_dec)),
                ewm.argopt == ls.argopt,
            ]
        )
    _write_csv(out_csv, POP_HEADER, rows)
    return rows


# ---------------------------------------------------------------------------
# Criterion 4: regularization scale resolution
# ---------------------------------------------------------------------------

SCALE_HEADER = "lambda_ls,draw,ratio"

SCALE_GRID = (0.25, 0.5, 1.0, 2.0, 4.0)


def run_lambda_scale(out_csv, master_seed: int, n_draws: int = 20):
    candidates = fractional_grid_candidates(3, levels=10)
    result = resolve_lambda_scale(candidates, SCALE_GRID, SeedSpec(master_seed), n_draws)
    rows = []
    k = 0
    for lam in SCALE_GRID:
        for draw in range(n_draws):
            rows.append([lam, draw, result.ratios[k]])
            k += 1
    _write_csv(out_csv, SCALE_HEADER, rows)
    return result


# ---------------------------------------------------------------------------
# Criterion 5: double robustness of the DR welfare at the treat-everybody policy
# ---------------------------------------------------------------------------

DR_HEADER = "scenario,n,rep,estimate,error"

DR_SCENARIOS = ("propensity_wrong", "outcome_wrong", "both_wrong")

# symmetric box: the truth E[m0 + tau] is the sum of the two intercepts
_DR_SPEC = DgpSpec(
    n=500,
    d_x=1,
    covariates=UniformCovariates(-1.5, 1.5),
    propensity=LogisticPropensity(intercept=0.3, slopes=(1.0,)),
    baseline=LinearFunction(1.0, (2.0,)),
    cate=LinearFunction(0.5, (1.5,)),
    noise_scale=0.75,
    y_max=60.0,
)
DR_TRUTH = 1.5


def _dr_nuisance(scenario: str) -> NuisanceConfig:
    return NuisanceConfig(
        propensity="fitted",
        propensity_basis="linear",
        outcome_basis="linear",
        clip=0.01,
        folds=0,
        ridge=1e-8,
        misspecify_propensity=scenario in ("propensity_wrong", "both_wrong"),
        misspecify_outcome=scenario in ("outcome_wrong", "both_wrong"),
    )


def run_double_robustness(
    out_csv, master_seed: int, replications: int = 50, sizes=(500, 8000)
):
    from dataclasses import replace

    seed = SeedSpec(master_seed)
    rows = []
    for s_idx, scenario in enumerate(DR_SCENARIOS):
        cfg = _dr_nuisance(scenario)
        for n_idx, n in enumerate(sizes):
            spec = replace(_DR_SPEC, n=n)
            for rep in range(replications):
                rep_seed = seed.derive(500 + s_idx, n_idx, rep)
                ods = generate(spec, rep_seed)
                nuis = build_nuisances(ods.base, cfg, rep_seed)
                ps = dr_pseudo(ods.base, nuis)
                estimate = empirical_welfare(ps, np.ones(n))
                rows.append([scenario, n, rep, estimate, estimate - DR_TRUTH])
    _write_csv(out_csv, DR_HEADER, rows)
    return rows


# ---------------------------------------------------------------------------
# Criterion 6: regret consistency across sample sizes
# ---------------------------------------------------------------------------

REGRET_SIZES = (500, 2000, 8000)
REGRET_ROUTES = ("ewm", "ls", "plugin-tlearner", "plugin-ipwreg")

# the grid contains the true sign change of the effect (-0.25), so the
# first-best policy is in class
_REGRET_GRID = (-1.2, -0.9, -0.6, -0.4, -0.25, -0.1, 0.1, 0.3, 0.6, 0.9, 1.2)

_REGRET_SPEC = DgpSpec(
    n=500,
    d_x=1,
    covariates=UniformCovariates(-1.5, 1.5),
    propensity=LogisticPropensity(intercept=0.2, slopes=(0.8,)),
    baseline=LinearFunction(1.0, (1.5,)),
    cate=LinearFunction(0.25, (1.0,)),
    noise_scale=0.75,
    y_max=60.0,
)


def run_regret_consistency(out_csv, master_seed: int, replications: int = 50):
    config = RegretConfig(
        dgp=_REGRET_SPEC,
        policy_class=threshold_class({0: list(_REGRET_GRID)}),
        routes=REGRET_ROUTES,
        pseudo_kind="ipw",
        nuisance=NuisanceConfig(propensity="known", outcome_basis="linear"),
        n_grid=REGRET_SIZES,
        replications=replications,
        seed=SeedSpec(master_seed),
        mc_draws=1_000_000,
    )
    records = regret_experiment(config)
    write_regret_csv(out_csv, records)
    return records


def median_regret_by_route(records: list[RegretRecord]) -> dict[str, list[float]]:
    table: dict[str, dict[int, list[float]]] = {}
    for rec in records:
        table.setdefault(rec.route, {}).setdefault(rec.n, []).append(rec.regret_class)
    return {
        route: [float(np.median(by_n[n])) for n in sorted(by_n)]
        for route, by_n in table.items()
    }
