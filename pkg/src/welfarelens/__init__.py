"""welfarelens: policy learning with exact equivalence audits.

Training a treatment policy by maximizing an estimated welfare over a class
is the same optimization as least squares of a pseudo-outcome on the signed
class {2p - 1}. This package implements both routes (plus regularized and
plug-in variants) over shared pseudo-outcomes and verifies the equivalence
exactly, by enumeration and by an affine identity, on simulated data with
known ground truth.
"""

from .core import (
    ObservedDataset,
    OracleDataset,
    SeedSpec,
    ValidationReport,
    read_observed_csv,
    read_oracle_csv,
    split_folds,
    validate_dataset,
    validate_oracle,
    write_observed_csv,
    write_oracle_csv,
)
from .dgp import (
    ConstantPropensity,
    DgpSpec,
    LinearFunction,
    LogisticPropensity,
    MonteCarloEstimate,
    QuadraticFunction,
    SineFunction,
    StepFunction,
    TruncatedGaussianCovariates,
    UniformCovariates,
    first_best_policy,
    generate,
    true_welfare,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DataValidationError,
    EnumerationCapError,
    WelfarelensError,
)
from .evaluation import (
    EquivalenceReport,
    RegretConfig,
    RegretRecord,
    affine_constant,
    audit_equivalence,
    empirical_mse,
    empirical_welfare,
    regret_experiment,
    write_regret_csv,
)
from .features import LinearModel, PolynomialBasis, basis_by_name
from .nuisance import (
    NuisanceConfig,
    NuisanceEstimates,
    build_nuisances,
    fit_outcome_regressions,
    fit_propensity,
    known_propensity,
    write_nuisance_csv,
)
from .policies import (
    EnumerablePolicyClass,
    ParametricPolicyClass,
    explicit_class,
    from_signed,
    rectangle_class,
    rectangle_class_from_data,
    rectangle_class_size,
    threshold_class,
    threshold_class_from_data,
    threshold_decisions,
    threshold_policy_from_score,
    to_signed,
)
from .pseudo import (
    PseudoOutcomes,
    dr_pseudo,
    ipw_pseudo,
    oracle_pseudo,
    write_pseudo_csv,
)
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

__version__ = "0.1.0"
