import numpy as np
import pytest

from welfarelens import (
    ConstantPropensity,
    DgpSpec,
    LinearFunction,
    NuisanceConfig,
    RegretConfig,
    SeedSpec,
    UniformCovariates,
    affine_constant,
    audit_equivalence,
    empirical_mse,
    empirical_welfare,
    explicit_class,
    generate,
    ipw_pseudo,
    oracle_pseudo,
    regret_experiment,
    threshold_class,
    to_signed,
    write_regret_csv,
)
from welfarelens.errors import ConfigError, DataValidationError
from welfarelens.evaluation import REGRET_CSV_HEADER
from welfarelens.pseudo import PseudoOutcomes


def pseudo_from(gamma0, gamma1, kind="ipw"):
    gamma0 = np.asarray(gamma0, float)
    gamma1 = np.asarray(gamma1, float)
    return PseudoOutcomes(kind=kind, gamma0=gamma0, gamma1=gamma1, gamma=gamma1 - gamma0)


def test_welfare_hand_value():
    # rows (g1=4, g0=0, p=1) and (g1=0, g0=2, p=0): W = (4 + 2) / 2 = 3
    ps = pseudo_from([0.0, 2.0], [4.0, 0.0])
    assert empirical_welfare(ps, np.array([1.0, 0.0])) == 3.0


def test_welfare_component_collapse():
    rng = np.random.default_rng(1)
    ps = pseudo_from(rng.normal(size=9), rng.normal(size=9))
    assert empirical_welfare(ps, np.ones(9)) == pytest.approx(ps.gamma1.mean(), rel=1e-15)
    assert empirical_welfare(ps, np.zeros(9)) == pytest.approx(ps.gamma0.mean(), rel=1e-15)


def test_welfare_length_mismatch():
    ps = pseudo_from([0.0], [1.0])
    with pytest.raises(DataValidationError):
        empirical_welfare(ps, np.array([1.0, 0.0]))


def test_mse_zero_only_for_reachable_targets():
    ps = pseudo_from(np.zeros(3), np.ones(3))  # gamma = 1, reachable by s = 1
    assert empirical_mse(ps, np.ones(3)) == 0.0
    ps2 = pseudo_from(np.zeros(3), np.full(3, 2.0))  # gamma = 2: best signed value is 1
    assert empirical_mse(ps2, np.ones(3)) == 1.0


def test_mse_zero_signed_gives_second_moment():
    rng = np.random.default_rng(2)
    ps = pseudo_from(rng.normal(size=11), rng.normal(size=11))
    assert empirical_mse(ps, np.zeros(11)) == pytest.approx(np.mean(ps.gamma**2), rel=1e-15)


def test_scaled_mse_expansion_identity():
    rng = np.random.default_rng(3)
    ps = pseudo_from(rng.normal(size=40), rng.normal(size=40))
    s = rng.uniform(-1, 1, size=40)
    for lam in (0.25, 1.0, 3.5):
        direct = empirical_mse(ps, s, lam)
        expanded = (
            np.mean(ps.gamma**2) / lam - 2.0 * np.mean(ps.gamma * s) + lam * np.mean(s**2)
        )
        assert direct == pytest.approx(expanded, rel=1e-12)


def test_mse_rejects_bad_scale_and_range():
    ps = pseudo_from([0.0], [1.0])
    with pytest.raises(ConfigError):
        empirical_mse(ps, np.array([0.5]), lam=0.0)
    with pytest.raises(DataValidationError):
        empirical_mse(ps, np.array([1.5]))


def test_affine_constant_on_hand_checkable_instance():
    # five rows, checked by hand:
    #   gamma0 = (1, 0, -1, 2, 0), gamma1 = (2, 4, 1, 2, -3)
    #   gamma  = (1, 4, 2, 0, -3)
    #   mean(gamma0) = 0.4hand, mean(gamma) = 0.8, mean(gamma^2) = 6.0
    #   constant = 0.4 + 0.4 + 1.5 + 0.25 = 2.55
    ps = pseudo_from([1.0, 0.0, -1.0, 2.0, 0.0], [2.0, 4.0, 1.0, 2.0, -3.0])
    c_n = affine_constant(ps)
    assert c_n == pytest.approx(2.55, rel=1e-15)

    # direct objective evaluation at two policies confirms the identity
    for decisions, w_hand, mse_hand in [
        (np.array([1.0, 0.0, 1.0, 0.0, 1.0]), 0.4, 8.6),
        (np.ones(5), 1.2, 5.4),
        (np.zeros(5), 0.4, 8.6),
    ]:
        w = empirical_welfare(ps, decisions)
        mse = empirical_mse(ps, to_signed(decisions))
        assert w == pytest.approx(w_hand, rel=1e-15)
        assert mse == pytest.approx(mse_hand, rel=1e-15)
        assert w + mse / 4.0 == pytest.approx(c_n, rel=1e-14)


def test_affine_identity_over_random_policies():
    rng = np.random.default_rng(7)
    n = 60
    ps = pseudo_from(rng.normal(size=n), 3.0 * rng.normal(size=n))
    c_n = affine_constant(ps)
    tol = 1e-10 * (1 + abs(c_n))
    for _ in range(100):
        decisions = (rng.random(n) < 0.5).astype(float)
        resid = abs(
            empirical_welfare(ps, decisions)
            + empirical_mse(ps, to_signed(decisions)) / 4.0
            - c_n
        )
        assert resid <= tol


def test_regularized_affine_identity_on_fractional_policies():
    # with a scale lam: [W - (lam/4) mean(s^2)] + MSE_lam / 4 is constant
    # across arbitrary randomized policies
    rng = np.random.default_rng(8)
    n = 25
    ps = pseudo_from(rng.normal(size=n), rng.normal(size=n))
    for lam in (0.5, 1.0, 2.0):
        c_lam = affine_constant(ps, lam)
        for _ in range(50):
            p = rng.random(n)
            s = to_signed(p)
            value = (
                empirical_welfare(ps, p)
                - lam / 4.0 * np.mean(s**2)
                + empirical_mse(ps, s, lam) / 4.0
            )
            assert value == pytest.approx(c_lam, abs=1e-10 * (1 + abs(c_lam)))


# --- audit ---------------------------------------------------------------------


def make_dataset(n=80, seed=5, sigma=0.6):
    spec = DgpSpec(
        n=n, d_x=1,
        covariates=UniformCovariates(-1, 1),
        propensity=ConstantPropensity(0.5),
        baseline=LinearFunction(1.0, (1.0,)),
        cate=LinearFunction(0.3, (1.5,)),
        noise_scale=sigma, y_max=30.0,
    )
    return spec, generate(spec, SeedSpec(seed))


def test_audit_on_synthetic_dataset():
    _, ods = make_dataset()
    ps = ipw_pseudo(ods.base, ods.e_true)
    pc = threshold_class({0: list(np.linspace(-0.9, 0.9, 13))})
    report = audit_equivalence(ps, pc, ods.base.X, SeedSpec(6), lambda_grid=[0.5, 1.0])
    assert report.sets_equal
    assert report.max_affine_residual <= report.affine_tolerance
    assert report.scale.match == "1/4"
    assert report.scale.ok
    assert all(flag for _, flag in report.lambda_flags)
    record = report.to_record()
    assert record["sets_equal"] is True


def test_audit_adversarial_ties_keep_both_policies():
    # rows 1 and 2 carry identical pseudo-outcomes; the two policies that
    # swap which of them is treated tie exactly and beat both constants
    # (row 3's effect is bad enough to sink treat-everybody)
    gamma0 = np.zeros(3)
    gamma1 = np.array([2.0, 2.0, -5.0])
    ps = pseudo_from(gamma0, gamma1)
    X = np.zeros((3, 1))
    assignments = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    pc = explicit_class(assignments)
    report = audit_equivalence(ps, pc, X, SeedSpec(1))
    assert report.sets_equal
    assert set(report.ewm_argmax) == {2, 3}
    assert set(report.ls_argmin) == {2, 3}


def test_audit_population_mode_noiseless_selects_first_best():
    spec, ods = make_dataset(n=5000, sigma=0.0)
    ps = oracle_pseudo(ods)
    pc = threshold_class({0: [-0.5, -0.2, 0.0, 0.4]})  # -0.2 = true sign change
    report = audit_equivalence(ps, pc, ods.base.X, SeedSpec(2))
    assert report.sets_equal
    fb_dec = (spec.cate(ods.base.X) >= 0).astype(float)
    rep_dec = pc.policy(report.ewm_argmax[0])(ods.base.X)
    assert np.array_equal(rep_dec, fb_dec)


# --- regret --------------------------------------------------------------------


def regret_config(routes=("ewm", "ls"), replications=3, n_grid=(80,), pseudo="ipw"):
    spec, _ = make_dataset()
    pc = threshold_class({0: [-0.6, -0.2, 0.2, 0.6]})
    return RegretConfig(
        dgp=spec,
        policy_class=pc,
        routes=tuple(routes),
        pseudo_kind=pseudo,
        nuisance=NuisanceConfig(propensity="known"),
        n_grid=tuple(n_grid),
        replications=replications,
        seed=SeedSpec(99),
        mc_draws=20_000,
    )


def test_regret_records_structure_and_route_equality():
    config = regret_config(routes=("ewm", "ls", "plugin-tlearner", "plugin-ipwreg"))
    records = regret_experiment(config)
    assert len(records) == 3 * 4
    by_route = {}
    for rec in records:
        by_route.setdefault(rec.route, []).append(rec)
    for a, b in zip(by_route["ewm"], by_route["ls"]):
        assert a.seed == b.seed
        assert a.w_true == b.w_true
        assert a.regret_class == b.regret_class
        assert a.equiv_flag is True and b.equiv_flag is True
    for rec in records:
        assert rec.regret_fb >= rec.regret_class - 4 * rec.se_true
        assert rec.regret_class >= -4 * rec.se_true


def test_forced_first_best_has_zero_regret():
    # a class whose grid contains the true sign change: at large n the
    # trained policy hits the class optimum and shared draws give regret 0
    config = regret_config(replications=2, n_grid=(4000,))
    records = regret_experiment(config)
    assert any(rec.regret_class == 0.0 for rec in records)


def test_oracle_route_regret():
    records = regret_experiment(regret_config(pseudo="oracle", routes=("ewm",)))
    assert all(rec.regret_class >= -4 * rec.se_true for rec in records)


def test_regret_csv_format(tmp_path):
    records = regret_experiment(regret_config(replications=1))
    path = tmp_path / "regret.csv"
    write_regret_csv(path, records)
    lines = path.read_text().splitlines()
    assert lines[0] == REGRET_CSV_HEADER
    assert len(lines) == 1 + len(records)
    # lambda and scale_const stay empty for unregularized routes
    assert lines[1].split(",")[3] == ""
    assert lines[1].split(",")[13] == ""


def test_regret_rejects_unknown_route():
    config = regret_config(routes=("ewm", "mystery"))
    with pytest.raises(ConfigError, match="mystery"):
        regret_experiment(config)


def test_regret_thread_cap_env(monkeypatch):
    monkeypatch.setenv("WELFARELENS_THREADS", "2")
    records_parallel = regret_experiment(regret_config(replications=2))
    monkeypatch.setenv("WELFARELENS_THREADS", "1")
    records_serial = regret_experiment(regret_config(replications=2))
    assert [r.w_true for r in records_parallel] == [r.w_true for r in records_serial]
    assert [r.seed for r in records_parallel] == [r.seed for r in records_serial]
