"""Domain types, dataset validation, fold splitting, and the seeding contract.

Every source of randomness in the package flows from a :class:`SeedSpec`.
A SeedSpec owns a 64-bit master seed and a fixed table of named streams
(data generation, nuisance folds, solver initialization, Monte Carlo); any
operation that needs randomness derives a generator from one of the streams,
optionally refined by integer subkeys (replication index, component index).
Identical SeedSpec + identical configuration therefore reproduces every
result in the repository bit for bit.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataValidationError

# Named randomness streams, in fixed order. The position is the spawn key.
STREAM_LABELS = ("dgp", "nuisance_folds", "solver_init", "monte_carlo")

_MAX_SEED = 2**64


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus the named stream labels used to derive generators."""

    master_seed: int
    streams: tuple[str, ...] = STREAM_LABELS

    def __post_init__(self) -> None:
        if not (0 <= int(self.master_seed) < _MAX_SEED):
            raise DataValidationError(
                f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}"
            )

    def _stream_index(self, stream: str) -> int:
        try:
            return self.streams.index(stream)
        except ValueError:
            raise DataValidationError(
                f"unknown seed stream {stream!r}; expected one of {self.streams}"
            ) from None

    def rng(self, stream: str, *subkeys: int) -> np.random.Generator:
        """Deterministic generator for a named stream, refined by subkeys."""
        key = (self._stream_index(stream),) + tuple(int(k) for k in subkeys)
        return np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.master_seed, spawn_key=key))
        )

    def derive(self, *subkeys: int) -> "SeedSpec":
        """Child SeedSpec with an independent master seed (e.g. per replication)."""
        seq = np.random.SeedSequence(
            self.master_seed, spawn_key=tuple(int(k) for k in subkeys)
        )
        return SeedSpec(int(seq.generate_state(1, np.uint64)[0]), self.streams)


def thread_cap() -> int:
    """Parallelism cap: WELFARELENS_THREADS if set, else the machine core count."""
    raw = os.environ.get("WELFARELENS_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        cap = int(raw)
    except ValueError:
        raise DataValidationError(f"WELFARELENS_THREADS must be an integer, got {raw!r}")
    return max(1, cap)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ObservedDataset:
    """Rows (Y, D, X): outcomes, binary treatment indicators, covariate vectors.

    Construction only normalizes shapes and dtypes; the value-level contracts
    (binary D, finite values, nonempty data) are checked by
    :func:`validate_dataset`, which reports rather than raises so that
    malformed inputs can be inspected.
    """

    X: np.ndarray
    D: np.ndarray
    Y: np.ndarray

    def __post_init__(self) -> None:
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        D = np.asarray(self.D, dtype=np.float64).ravel()
        Y = np.asarray(self.Y, dtype=np.float64).ravel()
        if X.shape[0] != D.shape[0] or X.shape[0] != Y.shape[0]:
            raise DataValidationError(
                f"row mismatch: X has {X.shape[0]} rows, D has {D.shape[0]}, Y has {Y.shape[0]}"
            )
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "D", _readonly(D))
        object.__setattr__(self, "Y", _readonly(Y))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def treated(self) -> np.ndarray:
        return self.D == 1.0


@dataclass(frozen=True, eq=False)
class OracleDataset:
    """ObservedDataset plus the simulator's hidden potential outcomes and truths.

    Used only for oracle pseudo-outcomes, true-welfare evaluation, and tests;
    estimators never see Y0/Y1/e_true/tau_true.
    """

    base: ObservedDataset
    Y0: np.ndarray
    Y1: np.ndarray
    e_true: np.ndarray
    tau_true: np.ndarray

    def __post_init__(self) -> None:
        n = self.base.n
        for name in ("Y0", "Y1", "e_true", "tau_true"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            if arr.shape[0] != n:
                raise DataValidationError(f"{name} has {arr.shape[0]} rows, expected {n}")
            object.__setattr__(self, name, _readonly(arr))

    @property
    def n(self) -> int:
        return self.base.n


@dataclass(frozen=True)
class ValidationReport:
    """Pass/fail per invariant plus arm counts and informational flags."""

    passed: bool
    failures: tuple[str, ...]
    flags: tuple[str, ...]
    n0: int
    n1: int

    def __str__(self) -> str:
        status = "pass" if self.passed else "fail"
        parts = [f"{status} (n0={self.n0}, n1={self.n1})"]
        parts += [f"FAIL: {m}" for m in self.failures]
        parts += [f"flag: {m}" for m in self.flags]
        return "; ".join(parts)


def validate_dataset(ds: ObservedDataset) -> ValidationReport:
    """Check the observed-data contract, reporting every violation found.

    Degenerate arms (all treated or all control) pass but are flagged,
    since only some downstream operations require both arms.
    """
    failures: list[str] = []
    flags: list[str] = []
    if ds.n < 1:
        failures.append("dataset is empty")
    if ds.d_x < 1:
        failures.append("covariate dimension must be at least 1")
    if not np.all(np.isfinite(ds.X)):
        failures.append("covariates contain non-finite values")
    if not np.all(np.isfinite(ds.Y)):
        failures.append("outcomes contain non-finite values")
    binary = np.isin(ds.D, (0.0, 1.0))
    if not np.all(binary):
        failures.append("treatment not binary")
    n1 = int(np.sum(ds.D == 1.0))
    n0 = int(np.sum(ds.D == 0.0))
    if n0 == 0:
        flags.append("n_0 = 0 (no control rows)")
    if n1 == 0:
        flags.append("n_1 = 0 (no treated rows)")
    return ValidationReport(not failures, tuple(failures), tuple(flags), n0, n1)


def validate_oracle(
    ods: OracleDataset, overlap: float, y_max: float | None = None
) -> ValidationReport:
    """Oracle-data contract: consistency, strict overlap, bounded potential outcomes.

    Consistency must hold exactly: Y_i equals Y1_i on treated rows and Y0_i on
    control rows, bit for bit.
    """
    base = validate_dataset(ods.base)
    failures = list(base.failures)
    flags = list(base.flags)
    if not (0.0 < overlap < 0.5):
        failures.append(f"overlap constant must lie in (0, 1/2), got {overlap}")
    else:
        if np.any(ods.e_true < overlap) or np.any(ods.e_true > 1.0 - overlap):
            failures.append("propensities violate the strict-overlap band")
    implied = np.where(ods.base.D == 1.0, ods.Y1, ods.Y0)
    if not np.array_equal(ods.base.Y, implied):
        failures.append("consistency violated: Y != D*Y1 + (1-D)*Y0")
    if y_max is not None:
        if np.any(np.abs(ods.Y0) > y_max) or np.any(np.abs(ods.Y1) > y_max):
            failures.append(f"potential outcomes exceed the bound |Y_d| <= {y_max}")
    return ValidationReport(not failures, tuple(failures), tuple(flags), base.n0, base.n1)


def require_valid(ds: ObservedDataset) -> None:
    """Raise DataValidationError if the dataset fails validation."""
    report = validate_dataset(ds)
    if not report.passed:
        raise DataValidationError("; ".join(report.failures))


def split_folds(n: int, k: int, seed: SeedSpec) -> np.ndarray:
    """Assign each of n rows to one of k folds, sizes differing by at most one.

    The assignment is a seeded permutation cut into contiguous blocks, so it
    is deterministic given (n, k, seed).
    """
    if not (2 <= k <= n):
        raise DataValidationError(f"invalid fold count: need 2 <= K <= n, got K={k}, n={n}")
    perm = seed.rng("nuisance_folds").permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    base, rem = divmod(n, k)
    start = 0
    for fold in range(k):
        size = base + (1 if fold < rem else 0)
        assignment[perm[start : start + size]] = fold
        start += size
    return assignment


# ---------------------------------------------------------------------------
# CSV interchange
#
# Observed datasets: header "y,d,x1,...,xd". Oracle datasets append
# "y0,y1,e_true,tau_true". Floats are written with repr() so that reading the
# file back reproduces every value exactly and reruns are byte-identical.
# ---------------------------------------------------------------------------


def fmt_float(x: float) -> str:
    """Shortest decimal string that round-trips the float64 value."""
    return repr(float(x))


def _header(d_x: int, oracle: bool) -> list[str]:
    cols = ["y", "d"] + [f"x{j + 1}" for j in range(d_x)]
    if oracle:
        cols += ["y0", "y1", "e_true", "tau_true"]
    return cols


def write_observed_csv(path: str, ds: ObservedDataset) -> None:
    lines = [",".join(_header(ds.d_x, oracle=False))]
    for i in range(ds.n):
        row = [fmt_float(ds.Y[i]), str(int(ds.D[i]))]
        row += [fmt_float(v) for v in ds.X[i]]
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_oracle_csv(path: str, ods: OracleDataset) -> None:
    ds = ods.base
    lines = [",".join(_header(ds.d_x, oracle=True))]
    for i in range(ds.n):
        row = [fmt_float(ds.Y[i]), str(int(ds.D[i]))]
        row += [fmt_float(v) for v in ds.X[i]]
        row += [
            fmt_float(ods.Y0[i]),
            fmt_float(ods.Y1[i]),
            fmt_float(ods.e_true[i]),
            fmt_float(ods.tau_true[i]),
        ]
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_rows(path: str, oracle: bool) -> tuple[list[str], np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in (line.strip() for line in fh) if ln]
    if not lines:
        raise DataValidationError(f"{path}: empty file")
    header = lines[0].split(",")
    if header[:2] != ["y", "d"]:
        raise DataValidationError(f"{path}: header must start with 'y,d', got {lines[0]!r}")
    tail = ["y0", "y1", "e_true", "tau_true"]
    d_x = len(header) - 2 - (4 if oracle else 0)
    if d_x < 1 or header != _header(d_x, oracle):
        raise DataValidationError(f"{path}: malformed header {lines[0]!r}")
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=np.float64)
    except ValueError as exc:
        raise DataValidationError(f"{path}: non-numeric cell ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise DataValidationError(f"{path}: ragged rows")
    return header, data


def read_observed_csv(path: str) -> ObservedDataset:
    _, data = _read_rows(path, oracle=False)
    return ObservedDataset(X=data[:, 2:], D=data[:, 1], Y=data[:, 0])


def read_oracle_csv(path: str) -> OracleDataset:
    header, data = _read_rows(path, oracle=True)
    d_x = len(header) - 6
    base = ObservedDataset(X=data[:, 2 : 2 + d_x], D=data[:, 1], Y=data[:, 0])
    y0, y1, e, tau = (data[:, 2 + d_x + j] for j in range(4))
    return OracleDataset(base=base, Y0=y0, Y1=y1, e_true=e, tau_true=tau)


def arm_indices(ds: ObservedDataset) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of the control and treated arms, in row order."""
    return np.flatnonzero(ds.D == 0.0), np.flatnonzero(ds.D == 1.0)
