"""Synthetic benchmark data with known treatment-effect ground truth.

Units are records (x, t, y): a 10-dimensional covariate vector, a binary
treatment flag, and a continuous outcome. Treatment effects are a strictly
increasing transform of a latent score, treatment assignment is confounded
with that score, and the baseline outcome depends mostly on covariates the
score does not use, so neither outcome prediction nor propensity modelling
alone recovers the effect ranking.

Covariate indexing: formulas below number covariates 1..10 (as in the
docstrings); arrays store them 0-based, so ``x[..., 0]`` is covariate 1.

Random streams: generation uses the counter-based Philox generator with
three named child streams derived from ``DgpConfig.seed`` via
``SeedSequence(seed).spawn(3)`` -- stream 0 draws covariates, stream 1
draws treatment flags, stream 2 draws outcome noise. Identical configs
therefore produce byte-identical outputs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import InvalidInputError, ParseError
from .rng import make_rng, spawn

DIM = 10

DATASET_HEADER = [f"x{i}" for i in range(1, DIM + 1)] + ["t", "y"]
GROUND_TRUTH_HEADER = ["tau", "mu0", "mu1", "e"]

# Serialization keeps 17 significant digits: enough to round-trip float64.
_FMT = "%.17g"


def _as_matrix(x: np.ndarray, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != DIM:
        raise InvalidInputError(f"{name} must have {DIM} covariates, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return x


def latent_score(x: np.ndarray) -> np.ndarray | float:
    """Latent score s(x) = 0.8 x1 + 0.6 x2 + 0.4 x3 + 0.3 x1^2 - 0.2 x2 x3.

    The score fully determines the treatment-effect ranking. Accepts a
    single vector of length 10 or an (n, 10) matrix.
    """
    single = np.ndim(x) == 1
    m = _as_matrix(x)
    s = 0.8 * m[:, 0] + 0.6 * m[:, 1] + 0.4 * m[:, 2] + 0.3 * m[:, 0] ** 2 - 0.2 * m[:, 1] * m[:, 2]
    return float(s[0]) if single else s


def true_cate(x: np.ndarray) -> np.ndarray | float:
    """Treatment effect tau(x) = s(x) + 0.5 tanh(s(x)), strictly increasing in s."""
    s = latent_score(x)
    return s + 0.5 * np.tanh(s)


def true_propensity(x: np.ndarray, alpha: float = 1.0) -> np.ndarray | float:
    """Propensity e(x) = sigmoid(alpha * (0.8 s(x) + 0.6 (x6 - 0.5 x7))).

    ``alpha`` sharpens treatment assignment: larger values push propensities
    toward 0/1 and thus reduce overlap; alpha=1 is the benchmark default.
    Values are kept strictly inside (0, 1) even where the sigmoid saturates
    in float64.
    """
    if not (np.isfinite(alpha) and alpha > 0):
        raise InvalidInputError(f"alpha must be positive, got {alpha}")
    single = np.ndim(x) == 1
    m = _as_matrix(x)
    s = latent_score(m)
    lin = 0.8 * s + 0.6 * (m[:, 5] - 0.5 * m[:, 6])
    e = np.clip(expit(alpha * lin), 1e-12, 1.0 - 1e-12)
    return float(e[0]) if single else e


def true_mu0(x: np.ndarray) -> np.ndarray | float:
    """Baseline response mu0(x) = 0.5 x2 - 0.4 x3 + 0.3 sin(x4) + 0.2 (x5^2 - 1)."""
    single = np.ndim(x) == 1
    m = _as_matrix(x)
    mu0 = 0.5 * m[:, 1] - 0.4 * m[:, 2] + 0.3 * np.sin(m[:, 3]) + 0.2 * (m[:, 4] ** 2 - 1.0)
    return float(mu0[0]) if single else mu0


@dataclass(frozen=True)
class Observation:
    """A single unit: covariates, binary treatment flag, outcome."""

    x: np.ndarray
    t: int
    y: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1:
            raise InvalidInputError("observation covariates must be a vector")
        if not np.all(np.isfinite(x)) or not np.isfinite(self.y):
            raise InvalidInputError("observation contains non-finite values")
        if self.t not in (0, 1):
            raise InvalidInputError(f"treatment flag must be 0 or 1, got {self.t}")
        object.__setattr__(self, "x", x)


def _freeze(*arrays: np.ndarray) -> None:
    for a in arrays:
        a.flags.writeable = False


@dataclass(frozen=True)
class Dataset:
    """An i.i.d. sample of units, stored column-wise.

    ``x`` is (n, d), ``t`` is an int array of 0/1 flags, ``y`` a float
    array. Arrays are frozen after construction and safe to share.
    """

    x: np.ndarray
    t: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float)
        t = np.ascontiguousarray(self.t, dtype=np.int64)
        y = np.ascontiguousarray(self.y, dtype=float)
        if x.ndim != 2:
            raise InvalidInputError("dataset covariates must be a 2-d array")
        n = x.shape[0]
        if t.shape != (n,) or y.shape != (n,):
            raise InvalidInputError("dataset columns have mismatched lengths")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise InvalidInputError("dataset contains non-finite values")
        if not np.all((t == 0) | (t == 1)):
            raise InvalidInputError("treatment flags must be 0 or 1")
        _freeze(x, t, y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def observation(self, i: int) -> Observation:
        return Observation(self.x[i].copy(), int(self.t[i]), float(self.y[i]))

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.x[idx], self.t[idx], self.y[idx])


@dataclass(frozen=True)
class GroundTruth:
    """Oracle per-unit quantities for a generated dataset.

    ``mu1 - mu0 == tau`` holds exactly: ``tau`` is stored as the
    representable difference of the stored response surfaces.
    """

    tau: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        tau = np.ascontiguousarray(self.tau, dtype=float)
        mu0 = np.ascontiguousarray(self.mu0, dtype=float)
        mu1 = np.ascontiguousarray(self.mu1, dtype=float)
        e = np.ascontiguousarray(self.e, dtype=float)
        n = tau.shape[0]
        for name, a in (("tau", tau), ("mu0", mu0), ("mu1", mu1), ("e", e)):
            if a.shape != (n,):
                raise InvalidInputError("ground-truth columns have mismatched lengths")
            if not np.all(np.isfinite(a)):
                raise InvalidInputError(f"ground-truth column {name} contains non-finite values")
        if np.any(mu1 - mu0 != tau):
            raise InvalidInputError("ground truth violates mu1 - mu0 == tau")
        if np.any(e <= 0.0) or np.any(e >= 1.0):
            raise InvalidInputError("propensities must lie strictly inside (0, 1)")
        _freeze(tau, mu0, mu1, e)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "e", e)

    def __len__(self) -> int:
        return self.tau.shape[0]

    def subset(self, idx: np.ndarray) -> "GroundTruth":
        return GroundTruth(self.tau[idx], self.mu0[idx], self.mu1[idx], self.e[idx])


@dataclass(frozen=True)
class DgpConfig:
    n: int
    seed: int
    alpha: float = 1.0
    noise_sd: float = 0.6
    d: int = field(default=DIM)

    def __post_init__(self):
        if self.n < 1:
            raise InvalidInputError(f"n must be >= 1, got {self.n}")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise InvalidInputError(f"alpha must be positive, got {self.alpha}")
        if self.noise_sd < 0:
            raise InvalidInputError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if self.d != DIM:
            raise InvalidInputError(f"covariate dimension is fixed at {DIM}")


def generate(config: DgpConfig) -> tuple[Dataset, GroundTruth]:
    """Draw a dataset and its row-aligned ground truth.

    Covariates are i.i.d. standard normal in 10 dimensions, treatments are
    Bernoulli draws from the true propensity, and outcomes are the assigned
    response surface plus N(0, noise_sd^2) noise.
    """
    cov_rng, trt_rng, noise_rng = (make_rng(s) for s in spawn(config.seed, 3))

    x = cov_rng.standard_normal((config.n, DIM))
    e = true_propensity(x, config.alpha)
    mu0 = true_mu0(x)
    mu1 = mu0 + true_cate(x)
    tau = mu1 - mu0  # representable difference: mu1 - mu0 == tau exactly

    t = (trt_rng.random(config.n) < e).astype(np.int64)
    eps = noise_rng.normal(0.0, config.noise_sd, config.n)
    y = np.where(t == 1, mu1, mu0) + eps

    return Dataset(x, t, y), GroundTruth(tau, mu0, mu1, e)


def overlap_measure(gt: GroundTruth) -> float:
    """Mean of min(e, 1-e): 0.5 under random assignment, small when overlap is weak."""
    if len(gt) == 0:
        raise InvalidInputError("overlap_measure needs a non-empty ground truth")
    return float(np.mean(np.minimum(gt.e, 1.0 - gt.e)))


def partition(
    dataset: Dataset,
    gt: GroundTruth | None,
    seed: int,
    val_fraction: float = 0.2,
) -> tuple[Dataset, GroundTruth | None, Dataset, GroundTruth | None]:
    """Split one draw into disjoint, exhaustive train/validation parts.

    Returns (train_data, train_gt, val_data, val_gt); ``gt`` may be None
    when no oracle columns exist (real data). The split is uniform without
    replacement and a pure function of ``seed``. Independent draws (e.g.
    nuisance-stage vs. second-stage samples) come from separate ``generate``
    calls, not from this split.
    """
    n = len(dataset)
    if n < 10:
        raise InvalidInputError(f"partition needs at least 10 rows, got {n}")
    if gt is not None and len(gt) != n:
        raise InvalidInputError("ground truth not aligned with dataset")
    rng = make_rng(seed)
    perm = rng.permutation(n)
    n_train = int(round((1.0 - val_fraction) * n))
    train_idx, val_idx = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    train_gt = gt.subset(train_idx) if gt is not None else None
    val_gt = gt.subset(val_idx) if gt is not None else None
    return dataset.subset(train_idx), train_gt, dataset.subset(val_idx), val_gt


def _write_csv(path, header: list[str], columns: list[np.ndarray], formats: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([fmt % v for fmt, v in zip(formats, row)])


def _read_csv(path, header: list[str]) -> list[np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file", line=1)
        missing = [c for c in header if c not in got]
        extra = [c for c in got if c not in header]
        if missing:
            raise ParseError(f"{path}: missing column {missing[0]!r}", line=1, column=missing[0])
        if extra:
            raise ParseError(f"{path}: unknown column {extra[0]!r}", line=1, column=extra[0])
        if got != header:
            raise ParseError(f"{path}: columns out of order, expected {header}", line=1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: expected {len(header)} fields, got {len(row)}", line=lineno)
            parsed = []
            for col, cell in zip(header, row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ParseError(f"{path}: bad value {cell!r}", line=lineno, column=col)
            rows.append(parsed)
    mat = np.asarray(rows, dtype=float).reshape(len(rows), len(header))
    return [mat[:, i] for i in range(len(header))]


def save_dataset(dataset: Dataset, path) -> None:
    """Write the dataset as CSV with header x1,...,x10,t,y at full precision."""
    cols = [dataset.x[:, i] for i in range(DIM)] + [dataset.t, dataset.y]
    fmts = [_FMT] * DIM + ["%d", _FMT]
    _write_csv(path, DATASET_HEADER, cols, fmts)


def load_dataset(path) -> Dataset:
    """Read a dataset CSV written by :func:`save_dataset`; schema is strict."""
    cols = _read_csv(path, DATASET_HEADER)
    t = cols[DIM]
    if np.any((t != 0.0) & (t != 1.0)):
        bad = int(np.argmax((t != 0.0) & (t != 1.0)))
        raise ParseError(f"{path}: treatment flag must be 0 or 1", line=bad + 2, column="t")
    return Dataset(np.column_stack(cols[:DIM]), t.astype(np.int64), cols[DIM + 1])


def save_ground_truth(gt: GroundTruth, path) -> None:
    """Write oracle columns as CSV, row-aligned with the dataset file."""
    _write_csv(path, GROUND_TRUTH_HEADER, [gt.tau, gt.mu0, gt.mu1, gt.e], [_FMT] * 4)


def load_ground_truth(path) -> GroundTruth:
    tau, mu0, mu1, e = _read_csv(path, GROUND_TRUTH_HEADER)
    # Stored tau was written as the exact difference; re-assert after parsing.
    return GroundTruth(tau, mu0, mu1, e)
