"""Cross-fitted nuisance estimation and doubly robust scoring.

The first stage fits three models per fold on the fold's complement: the
treated-arm response surface (regression on treated units), the control-arm
response surface (regression on control units), and the propensity (binary
classifier on all units). Every unit's stored prediction comes from the
models that never saw it. Propensities are clipped away from 0/1 so the
inverse-propensity terms of the doubly robust score stay bounded.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .dgp import Dataset, true_cate, true_mu0, true_propensity
from .errors import DegenerateSplitError, InvalidInputError
from .rng import derive_seed, make_rng

DEFAULT_FOLDS = 2
DEFAULT_CLIP_EPS = 0.01

NUISANCE_DUMP_HEADER = ["mu0_hat", "mu1_hat", "e_hat", "phi", "fold"]


def dr_score(t, y, mu0, mu1, e):
    """Doubly robust score: (t/e)(y - mu1) - ((1-t)/(1-e))(y - mu0) + mu1 - mu0.

    Unbiased for the treatment effect given covariates when the plugged-in
    nuisances are correct. Accepts scalars or aligned arrays.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    mu0 = np.asarray(mu0, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    e = np.asarray(e, dtype=float)
    if np.any(e <= 0.0) or np.any(e >= 1.0):
        raise InvalidInputError("propensities must lie strictly inside (0, 1)")
    phi = t / e * (y - mu1) - (1.0 - t) / (1.0 - e) * (y - mu0) + mu1 - mu0
    return float(phi) if phi.ndim == 0 else phi


@dataclass(frozen=True)
class FoldModels:
    mu0: nn.ModelParams
    mu1: nn.ModelParams
    e: nn.ModelParams


@dataclass(frozen=True)
class NuisanceEstimates:
    """Out-of-fold nuisance predictions plus the per-fold models themselves."""

    mu0_hat: np.ndarray
    mu1_hat: np.ndarray
    e_hat: np.ndarray
    fold: np.ndarray
    fold_models: tuple[FoldModels, ...]
    clip_eps: float

    def predict(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Fold-model average (mu0, mu1, e) for new units; e is clipped."""
        x = np.asarray(x, dtype=float)
        mu0 = np.mean([nn.forward(fm.mu0, x) for fm in self.fold_models], axis=0)
        mu1 = np.mean([nn.forward(fm.mu1, x) for fm in self.fold_models], axis=0)
        e = np.mean([nn.forward(fm.e, x) for fm in self.fold_models], axis=0)
        e = np.clip(e, self.clip_eps, 1.0 - self.clip_eps)
        return mu0, mu1, e

    def dr_scores(self, dataset: Dataset) -> np.ndarray:
        """Per-unit doubly robust scores from the stored out-of-fold estimates."""
        if len(dataset) != len(self.mu0_hat):
            raise InvalidInputError("dataset not aligned with stored estimates")
        return dr_score(dataset.t, dataset.y, self.mu0_hat, self.mu1_hat, self.e_hat)


@dataclass(frozen=True)
class OracleNuisances:
    """True nuisance functions of the synthetic benchmark, as a predictor."""

    alpha: float = 1.0

    def predict(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        mu0 = true_mu0(x)
        mu1 = mu0 + true_cate(x)
        return mu0, mu1, true_propensity(x, self.alpha)


def _split_arm(idx: np.ndarray, rng, what: str) -> tuple[np.ndarray, np.ndarray]:
    if idx.size < 2:
        raise DegenerateSplitError(f"{what}: needs at least 2 units for an 80/20 split, got {idx.size}")
    perm = rng.permutation(idx)
    n_train = max(1, int(round(0.8 * idx.size)))
    if n_train == idx.size:
        n_train -= 1
    return perm[:n_train], perm[n_train:]


def _fit_on(dataset: Dataset, idx: np.ndarray, targets: np.ndarray, task: str, config: nn.TrainConfig, rng, what: str):
    train_idx, val_idx = _split_arm(idx, rng, what)
    result = nn.fit(
        dataset.x[train_idx],
        targets[train_idx],
        dataset.x[val_idx],
        targets[val_idx],
        task,
        config,
    )
    return result.params


def cross_fit(
    dataset: Dataset,
    folds: int = DEFAULT_FOLDS,
    config: nn.TrainConfig = nn.TrainConfig(),
    clip_eps: float = DEFAULT_CLIP_EPS,
) -> NuisanceEstimates:
    """K-fold cross-fitting of (mu0, mu1, e) with out-of-fold predictions.

    Fold assignment, early-stopping splits and weight initialization all
    derive from ``config.seed``. Raises :class:`DegenerateSplitError` when a
    fold complement lacks treated or control units.
    """
    n = len(dataset)
    if folds < 2:
        raise InvalidInputError("cross_fit needs at least 2 folds")
    if n < 2 * folds:
        raise InvalidInputError(f"dataset too small for {folds} folds")
    if not 0 < clip_eps < 0.5:
        raise InvalidInputError("clip_eps must lie in (0, 0.5)")

    fold_of = np.empty(n, dtype=np.int64)
    perm = make_rng(derive_seed(config.seed, 0)).permutation(n)
    for k, chunk in enumerate(np.array_split(perm, folds)):
        fold_of[chunk] = k

    mu0_hat = np.empty(n)
    mu1_hat = np.empty(n)
    e_hat = np.empty(n)
    fold_models = []
    for k in range(folds):
        pool = np.flatnonzero(fold_of != k)
        treated = pool[dataset.t[pool] == 1]
        control = pool[dataset.t[pool] == 0]
        if treated.size == 0 or control.size == 0:
            raise DegenerateSplitError(f"fold {k}: complement lacks a treatment arm")

        def cfg(tag: int) -> nn.TrainConfig:
            return replace(config, seed=derive_seed(config.seed, 1, k, tag))

        def split_rng(tag: int):
            return make_rng(derive_seed(config.seed, 2, k, tag))

        mu1_model = _fit_on(dataset, treated, dataset.y, nn.REGRESSION, cfg(0), split_rng(0), f"fold {k} treated arm")
        mu0_model = _fit_on(dataset, control, dataset.y, nn.REGRESSION, cfg(1), split_rng(1), f"fold {k} control arm")
        t_targets = dataset.t.astype(float)
        e_model = _fit_on(dataset, pool, t_targets, nn.BINARY, cfg(2), split_rng(2), f"fold {k} propensity")

        held = np.flatnonzero(fold_of == k)
        mu0_hat[held] = nn.forward(mu0_model, dataset.x[held])
        mu1_hat[held] = nn.forward(mu1_model, dataset.x[held])
        e_hat[held] = nn.forward(e_model, dataset.x[held])
        fold_models.append(FoldModels(mu0_model, mu1_model, e_model))

    e_hat = np.clip(e_hat, clip_eps, 1.0 - clip_eps)
    return NuisanceEstimates(mu0_hat, mu1_hat, e_hat, fold_of, tuple(fold_models), clip_eps)


def predict_nuisances(estimates: NuisanceEstimates, x: np.ndarray):
    """Functional alias for :meth:`NuisanceEstimates.predict`."""
    return estimates.predict(x)


def save_nuisances(estimates: NuisanceEstimates, dataset: Dataset, path) -> None:
    """Dump per-unit estimates and DR scores as CSV, row-aligned with the dataset."""
    phi = estimates.dr_scores(dataset)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(NUISANCE_DUMP_HEADER)
        for i in range(len(dataset)):
            writer.writerow(
                [
                    "%.17g" % estimates.mu0_hat[i],
                    "%.17g" % estimates.mu1_hat[i],
                    "%.17g" % estimates.e_hat[i],
                    "%.17g" % phi[i],
                    "%d" % estimates.fold[i],
                ]
            )
