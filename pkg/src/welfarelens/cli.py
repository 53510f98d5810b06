"""Batch experiment runner.

Subcommands: simulate | train | audit | sweep | bench. Every run is driven
by a single JSON config file (nested key-value structure, unknown keys
rejected); flags only override the output directory, the master seed, and
verbosity. All randomness flows from the config seed, so identical config +
seed reproduces byte-identical primary outputs (timing columns excepted).

Exit codes: 0 success, 2 config error, 3 data error, 4 enumeration cap
exceeded, 5 solver non-convergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    SeedSpec,
    fmt_float,
    read_observed_csv,
    read_oracle_csv,
    write_observed_csv,
    write_oracle_csv,
)
from .dgp import (
    ConstantPropensity,
    DgpSpec,
    LinearFunction,
    LogisticPropensity,
    QuadraticFunction,
    SineFunction,
    StepFunction,
    TruncatedGaussianCovariates,
    UniformCovariates,
    generate,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DataValidationError,
    EnumerationCapError,
)
from .evaluation import (
    RegretConfig,
    audit_equivalence,
    empirical_welfare,
    regret_experiment,
    write_regret_csv,
)
from .nuisance import NuisanceConfig, build_nuisances
from .policies import (
    DEFAULT_EVAL_CAP,
    EnumerablePolicyClass,
    explicit_class,
    rectangle_class,
    rectangle_class_from_data,
    threshold_class,
    threshold_class_from_data,
)
from .pseudo import dr_pseudo, ipw_pseudo, oracle_pseudo
from .solvers import (
    ewm_enumerate,
    ewm_regularized,
    ls_enumerate,
    ls_regularized,
    plugin_ipw_regression,
    plugin_tlearner,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CAP = 4
EXIT_NONCONVERGENCE = 5

TRAIN_ROUTES = ("ewm", "ls", "ewm-regularized", "ls-regularized",
                "plugin-tlearner", "plugin-ipwreg")


def _require_keys(section: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")
    missing = required - set(section)
    if missing:
        raise ConfigError(f"missing key(s) {sorted(missing)} in {where}")


def _build_covariates(spec: dict):
    _require_keys(spec, {"kind", "low", "high"}, {"kind"}, "dgp.covariates")
    kind = spec["kind"]
    if kind == "uniform":
        return UniformCovariates(low=spec.get("low", -1.0), high=spec.get("high", 1.0))
    if kind == "gaussian":
        return TruncatedGaussianCovariates(low=spec.get("low", -2.0), high=spec.get("high", 2.0))
    raise ConfigError(f"unknown covariate law {kind!r}")


def _build_propensity(spec: dict):
    kind = spec.get("kind")
    if kind == "constant":
        _require_keys(spec, {"kind", "p"}, {"kind", "p"}, "dgp.propensity")
        return ConstantPropensity(p=float(spec["p"]))
    if kind == "logistic":
        _require_keys(spec, {"kind", "intercept", "slopes"}, {"kind", "slopes"}, "dgp.propensity")
        return LogisticPropensity(
            intercept=float(spec.get("intercept", 0.0)),
            slopes=tuple(float(v) for v in spec["slopes"]),
        )
    raise ConfigError(f"unknown propensity family {spec.get('kind')!r}")


def _build_mean(spec: dict, where: str):
    kind = spec.get("kind")
    if kind == "linear":
        _require_keys(spec, {"kind", "intercept", "slopes"}, {"kind", "slopes"}, where)
        return LinearFunction(
            intercept=float(spec.get("intercept", 0.0)),
            slopes=tuple(float(v) for v in spec["slopes"]),
        )
    if kind == "quadratic":
        _require_keys(spec, {"kind", "intercept", "slopes", "quads"}, {"kind", "slopes", "quads"}, where)
        return QuadraticFunction(
            intercept=float(spec.get("intercept", 0.0)),
            slopes=tuple(float(v) for v in spec["slopes"]),
            quads=tuple(float(v) for v in spec["quads"]),
        )
    if kind == "step":
        _require_keys(spec, {"kind", "coord", "threshold", "low", "high"},
                      {"kind", "threshold", "low", "high"}, where)
        return StepFunction(
            coord=int(spec.get("coord", 0)),
            threshold=float(spec["threshold"]),
            low=float(spec["low"]),
            high=float(spec["high"]),
        )
    if kind == "sine":
        _require_keys(spec, {"kind", "amplitude", "frequency", "coord", "shift"},
                      {"kind", "amplitude", "frequency"}, where)
        return SineFunction(
            amplitude=float(spec["amplitude"]),
            frequency=float(spec["frequency"]),
            coord=int(spec.get("coord", 0)),
            shift=float(spec.get("shift", 0.0)),
        )
    raise ConfigError(f"unknown function family {kind!r} in {where}")


def _build_dgp(spec: dict) -> DgpSpec:
    _require_keys(
        spec,
        {"n", "d_x", "covariates", "propensity", "baseline", "cate",
         "noise_scale", "y_max", "overlap"},
        {"n", "d_x", "covariates", "propensity", "baseline", "cate"},
        "dgp",
    )
    dgp = DgpSpec(
        n=int(spec["n"]),
        d_x=int(spec["d_x"]),
        covariates=_build_covariates(dict(spec["covariates"])),
        propensity=_build_propensity(dict(spec["propensity"])),
        baseline=_build_mean(dict(spec["baseline"]), "dgp.baseline"),
        cate=_build_mean(dict(spec["cate"]), "dgp.cate"),
        noise_scale=float(spec.get("noise_scale", 0.0)),
        y_max=float(spec.get("y_max", 50.0)),
        overlap=float(spec.get("overlap", 0.02)),
    )
    dgp.validate()
    return dgp


def _build_nuisance(spec: dict) -> NuisanceConfig:
    _require_keys(
        spec,
        {"propensity", "propensity_basis", "outcome_basis", "clip", "folds",
         "ridge", "misspecify_propensity", "misspecify_outcome"},
        set(),
        "nuisance",
    )
    cfg = NuisanceConfig(
        propensity=spec.get("propensity", "fitted"),
        propensity_basis=spec.get("propensity_basis", "linear"),
        outcome_basis=spec.get("outcome_basis", "linear"),
        clip=float(spec.get("clip", 0.01)),
        folds=int(spec.get("folds", 0)),
        ridge=float(spec.get("ridge", 1e-8)),
        misspecify_propensity=bool(spec.get("misspecify_propensity", False)),
        misspecify_outcome=bool(spec.get("misspecify_outcome", False)),
    )
    cfg.validate()
    return cfg


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully validated experiment description."""

    seed: SeedSpec
    dgp: DgpSpec
    nuisance: NuisanceConfig
    pseudo_kind: str
    policy_spec: dict
    routes: tuple[str, ...]
    lambda_grid: tuple[float, ...] | None
    n_grid: tuple[int, ...]
    replications: int
    mc_draws: int
    cap: int
    out_dir: str | None
    bench_m_grid: tuple[int, ...]
    bench_repeats: int
    bench_basis: str
    bench_ridge: float

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        _require_keys(
            raw,
            {"seed", "dgp", "nuisance", "pseudo", "policy_class", "routes",
             "lambda_grid", "n_grid", "replications", "mc_draws", "cap",
             "out_dir", "bench"},
            {"seed", "dgp", "policy_class"},
            "config",
        )
        pseudo_kind = raw.get("pseudo", "ipw")
        if pseudo_kind not in ("ipw", "dr", "oracle"):
            raise ConfigError(f"unknown pseudo-outcome kind {pseudo_kind!r}")
        routes = tuple(raw.get("routes", ("ewm", "ls")))
        for route in routes:
            if route not in TRAIN_ROUTES:
                raise ConfigError(f"unknown route {route!r}; valid routes: {TRAIN_ROUTES}")
        lam = raw.get("lambda_grid")
        policy_spec = dict(raw["policy_class"])
        _validate_policy_spec(policy_spec)
        bench = dict(raw.get("bench", {}))
        _require_keys(bench, {"m_grid", "repeats", "basis", "ridge"}, set(), "bench")
        replications = int(raw.get("replications", 1))
        if replications < 1:
            raise ConfigError("replications must be >= 1")
        return cls(
            seed=SeedSpec(int(raw["seed"])),
            dgp=_build_dgp(dict(raw["dgp"])),
            nuisance=_build_nuisance(dict(raw.get("nuisance", {}))),
            pseudo_kind=pseudo_kind,
            policy_spec=policy_spec,
            routes=routes,
            lambda_grid=None if lam is None else tuple(float(v) for v in lam),
            n_grid=tuple(int(v) for v in raw.get("n_grid", ())),
            replications=replications,
            mc_draws=int(raw.get("mc_draws", 1_000_000)),
            cap=int(raw.get("cap", DEFAULT_EVAL_CAP)),
            out_dir=raw.get("out_dir"),
            bench_m_grid=tuple(int(v) for v in bench.get("m_grid", (3, 5, 7))),
            bench_repeats=int(bench.get("repeats", 3)),
            bench_basis=bench.get("basis", "quadratic"),
            bench_ridge=float(bench.get("ridge", 1e-8)),
        )

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw)

    def sizes(self) -> tuple[int, ...]:
        return self.n_grid if self.n_grid else (self.dgp.n,)


def _validate_policy_spec(spec: dict) -> None:
    kind = spec.get("kind")
    if kind == "threshold":
        _require_keys(spec, {"kind", "coords", "grid", "quantiles", "sentinels"},
                      {"kind"}, "policy_class")
        if ("grid" in spec) == ("quantiles" in spec):
            raise ConfigError("threshold class needs exactly one of 'grid' or 'quantiles'")
    elif kind == "rectangle":
        _require_keys(spec, {"kind", "grids", "quantiles"}, {"kind"}, "policy_class")
        if ("grids" in spec) == ("quantiles" in spec):
            raise ConfigError("rectangle class needs exactly one of 'grids' or 'quantiles'")
    elif kind == "explicit":
        _require_keys(spec, {"kind", "assignments"}, {"kind", "assignments"}, "policy_class")
    else:
        raise ConfigError(f"unknown policy class kind {kind!r}")


def build_policy_class(spec: dict, X: np.ndarray | None, d_x: int) -> EnumerablePolicyClass:
    """Materialize the configured class; quantile grids need data."""
    kind = spec["kind"]
    if kind == "threshold":
        coords = [int(c) for c in spec.get("coords", range(d_x))]
        if "grid" in spec:
            grid = [float(t) for t in spec["grid"]]
            return threshold_class({c: grid for c in coords})
        if X is None:
            raise ConfigError("quantile-based policy class needs data; give an explicit grid")
        return threshold_class_from_data(
            X, coords, int(spec["quantiles"]), bool(spec.get("sentinels", True))
        )
    if kind == "rectangle":
        if "grids" in spec:
            return rectangle_class([[float(t) for t in g] for g in spec["grids"]])
        if X is None:
            raise ConfigError("quantile-based policy class needs data; give explicit grids")
        return rectangle_class_from_data(X, int(spec["quantiles"]))
    return explicit_class(np.asarray(spec["assignments"], dtype=np.float64))


def _is_fixed_class(spec: dict) -> bool:
    return "grid" in spec or "grids" in spec or spec.get("kind") == "explicit"


def _pseudo_for(config: ExperimentConfig, ods, seed: SeedSpec):
    ds = ods.base
    if config.pseudo_kind == "oracle":
        return oracle_pseudo(ods), None
    nuis = build_nuisances(ds, config.nuisance, seed, e_true=ods.e_true)
    if config.pseudo_kind == "ipw":
        return ipw_pseudo(ds, nuis.e_hat), nuis
    return dr_pseudo(ds, nuis), nuis


def _say(quiet: bool, message: str) -> None:
    if not quiet:
        print(message)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(config: ExperimentConfig, out_dir: str, quiet: bool) -> int:
    os.makedirs(out_dir, exist_ok=True)
    for n_index, n in enumerate(config.sizes()):
        spec = replace(config.dgp, n=n)
        for rep in range(config.replications):
            ods = generate(spec, config.seed.derive(n_index, rep))
            obs_path = os.path.join(out_dir, f"observed_n{n}_rep{rep:03d}.csv")
            orc_path = os.path.join(out_dir, f"oracle_n{n}_rep{rep:03d}.csv")
            write_observed_csv(obs_path, ods.base)
            write_oracle_csv(orc_path, ods)
            _say(quiet, f"wrote {obs_path} and {orc_path}")
    return EXIT_OK


def _train_one(config: ExperimentConfig, route: str, ps, ods, policy_class):
    ds = ods.base
    if route == "ewm":
        return [ewm_enumerate(ps, policy_class, ds.X, config.cap)]
    if route == "ls":
        return [ls_enumerate(ps, policy_class, ds.X, config.cap)]
    if route == "plugin-tlearner":
        nuis = build_nuisances(ds, replace(config.nuisance, folds=0), config.seed,
                               e_true=ods.e_true)
        return [plugin_tlearner(nuis)]
    if route == "plugin-ipwreg":
        reg_ps = ps
        if ps.kind == "oracle":
            raise ConfigError("plugin-ipwreg needs ipw or dr pseudo-outcomes")
        return [plugin_ipw_regression(reg_ps, ds.X, config.nuisance.outcome_basis,
                                      config.nuisance.ridge)]
    lams = config.lambda_grid or (1.0,)
    matrix = policy_class.assignments(ds.X, config.cap)
    if route == "ewm-regularized":
        return [ewm_regularized(ps, matrix, lam) for lam in lams]
    return [ls_regularized(ps, matrix, lam) for lam in lams]


def cmd_train(
    config: ExperimentConfig, out_dir: str, quiet: bool,
    route: str | None = None, data: str | None = None,
) -> int:
    os.makedirs(out_dir, exist_ok=True)
    routes = (route,) if route else config.routes
    for r in routes:
        if r not in TRAIN_ROUTES:
            raise ConfigError(f"unknown route {r!r}; valid routes: {TRAIN_ROUTES}")
    n = config.sizes()[0]
    reps = 1 if data else config.replications
    for rep in range(reps):
        rep_seed = config.seed.derive(0, rep)
        if data:
            needs_oracle = config.pseudo_kind == "oracle" or config.nuisance.propensity == "known"
            ods = read_oracle_csv(data) if needs_oracle else _as_oracle(read_observed_csv(data))
        else:
            ods = generate(replace(config.dgp, n=n), rep_seed)
        policy_class = build_policy_class(config.policy_spec, ods.base.X, ods.base.d_x)
        ps, _ = _pseudo_for(config, ods, rep_seed)
        for r in routes:
            for k, tp in enumerate(_train_one(config, r, ps, ods, policy_class)):
                if tp.converged is False and not tp.saturated:
                    raise ConvergenceError(f"route {r} did not converge (replication {rep})")
                suffix = f"_lam{k}" if tp.lam is not None and len(config.lambda_grid or ()) > 1 else ""
                path = os.path.join(out_dir, f"policy_rep{rep:03d}_{r}{suffix}.json")
                with open(path, "w", encoding="utf-8") as fh:
                    json.dump(tp.to_record(), fh, indent=1, sort_keys=True)
                    fh.write("\n")
                _say(quiet, f"wrote {path}")
    return EXIT_OK


def _as_oracle(ds):
    # observed-only input: wrap with placeholder oracle fields for code paths
    # that never read them (fitted nuisances, ipw/dr pseudo-outcomes)
    from .core import OracleDataset

    zeros = np.zeros(ds.n)
    half = np.full(ds.n, 0.5)
    return OracleDataset(
        base=ds, Y0=np.where(ds.D == 0.0, ds.Y, 0.0),
        Y1=np.where(ds.D == 1.0, ds.Y, 0.0), e_true=half, tau_true=zeros,
    )


def cmd_audit(config: ExperimentConfig, out_dir: str, quiet: bool) -> int:
    os.makedirs(out_dir, exist_ok=True)
    n = config.sizes()[0]
    ods = generate(replace(config.dgp, n=n), config.seed.derive(0, 0))
    policy_class = build_policy_class(config.policy_spec, ods.base.X, ods.base.d_x)
    ps, _ = _pseudo_for(config, ods, config.seed.derive(0, 0))
    report = audit_equivalence(
        ps, policy_class, ods.base.X, config.seed,
        lambda_grid=config.lambda_grid, cap=config.cap,
    )
    path = os.path.join(out_dir, "audit_report.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_record(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    _say(quiet, f"wrote {path} (sets_equal={str(report.sets_equal).lower()})")
    return EXIT_OK


def cmd_sweep(config: ExperimentConfig, out_dir: str, quiet: bool) -> int:
    os.makedirs(out_dir, exist_ok=True)
    if not _is_fixed_class(config.policy_spec):
        raise ConfigError(
            "sweep needs a data-independent policy class: give explicit grids"
        )
    policy_class = build_policy_class(config.policy_spec, None, config.dgp.d_x)
    routes = tuple(r for r in config.routes if r in ("ewm", "ls", "plugin-tlearner", "plugin-ipwreg"))
    if not routes:
        raise ConfigError("sweep requires at least one of the unregularized routes")
    regret_cfg = RegretConfig(
        dgp=config.dgp,
        policy_class=policy_class,
        routes=routes,
        pseudo_kind=config.pseudo_kind,
        nuisance=config.nuisance,
        n_grid=config.sizes(),
        replications=config.replications,
        seed=config.seed,
        mc_draws=config.mc_draws,
        cap=config.cap,
        plugin_basis=config.nuisance.outcome_basis,
        plugin_ridge=config.nuisance.ridge,
    )
    records = regret_experiment(regret_cfg)
    path = os.path.join(out_dir, "regret.csv")
    write_regret_csv(path, records)
    _say(quiet, f"wrote {path} ({len(records)} rows)")
    return EXIT_OK


def cmd_bench(config: ExperimentConfig, out_dir: str, quiet: bool) -> int:
    """Enumeration cost growth versus the convex regression route.

    The enumeration route's work scales with the class size; the convex
    route (pseudo-outcome ridge regression plus thresholding) does not.
    Timing columns are wall-clock and exempt from byte determinism.
    """
    os.makedirs(out_dir, exist_ok=True)
    ods = generate(config.dgp, config.seed.derive(0, 0))
    ds = ods.base
    ps, _ = _pseudo_for(config, ods, config.seed.derive(0, 0))
    lines = ["m,n_policies,enum_seconds,convex_seconds,enum_welfare,convex_welfare,welfare_gap"]
    for m in config.bench_m_grid:
        policy_class = rectangle_class_from_data(ds.X, m)
        trained = ewm_enumerate(ps, policy_class, ds.X, config.cap)  # warmup
        enum_times = []
        for _ in range(max(1, config.bench_repeats)):
            t0 = time.perf_counter()
            trained = ewm_enumerate(ps, policy_class, ds.X, config.cap)
            enum_times.append(time.perf_counter() - t0)
        plugin_ipw_regression(ps, ds.X, config.bench_basis, config.bench_ridge)  # warmup
        convex_times = []
        for _ in range(max(1, config.bench_repeats)):
            t0 = time.perf_counter()
            convex = plugin_ipw_regression(ps, ds.X, config.bench_basis, config.bench_ridge)
            w_convex = empirical_welfare(ps, convex.decisions)
            convex_times.append(time.perf_counter() - t0)
        w_enum = trained.objective
        lines.append(
            ",".join(
                [
                    str(m),
                    str(len(policy_class)),
                    fmt_float(float(np.median(enum_times))),
                    fmt_float(float(np.median(convex_times))),
                    fmt_float(w_enum),
                    fmt_float(w_convex),
                    fmt_float(w_enum - w_convex),
                ]
            )
        )
        _say(quiet, f"bench m={m}: {len(policy_class)} policies")
    path = os.path.join(out_dir, "bench.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    _say(quiet, f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="welfarelens",
        description="Policy learning experiments: welfare maximization, "
        "least squares on pseudo-outcomes, plug-in rules, and equivalence audits.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "write observed and oracle dataset CSVs per replication"),
        ("train", "train configured routes and write policy records"),
        ("audit", "run the equivalence audit and write the report"),
        ("sweep", "run the regret experiment and write the regret CSV"),
        ("bench", "time enumeration against the convex route"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON experiment config")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
        if name == "train":
            p.add_argument("--route", default=None, help="train a single route")
            p.add_argument("--data", default=None, help="train on an existing dataset CSV")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = ExperimentConfig.from_json(args.config)
        if args.seed is not None:
            config = replace(config, seed=SeedSpec(int(args.seed)))
        out_dir = args.out or config.out_dir or "."
        if args.command == "simulate":
            return cmd_simulate(config, out_dir, args.quiet)
        if args.command == "train":
            return cmd_train(config, out_dir, args.quiet, args.route, args.data)
        if args.command == "audit":
            return cmd_audit(config, out_dir, args.quiet)
        if args.command == "sweep":
            return cmd_sweep(config, out_dir, args.quiet)
        return cmd_bench(config, out_dir, args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EnumerationCapError as exc:
        print(f"enumeration cap exceeded: {exc}", file=sys.stderr)
        return EXIT_CAP
    except ConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except DataValidationError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
