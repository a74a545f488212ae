"""Reference rankers that score units by estimated treatment-effect magnitude.

Both baselines use the same network family and training protocol as the
pairwise rankers; they differ only in what the second stage regresses on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .dgp import Dataset
from .errors import DegenerateSplitError
from .nuisance import dr_score
from .ranker import ScoringModel
from .rng import derive_seed


@dataclass(frozen=True)
class TLearnerScorer:
    """Difference of two independently fitted response surfaces."""

    mu1: nn.ModelParams
    mu0: nn.ModelParams

    def scores(self, x: np.ndarray) -> np.ndarray | float:
        return nn.forward(self.mu1, x) - nn.forward(self.mu0, x)


def train_t_learner(
    stage2_train: Dataset,
    stage2_val: Dataset,
    config: nn.TrainConfig,
) -> TLearnerScorer:
    """Fit one regressor per treatment arm; score is their difference.

    The provided train/validation split is subset by arm, so each surface
    keeps its own early-stopping data.
    """
    for name, ds in (("train", stage2_train), ("validation", stage2_val)):
        if not (np.any(ds.t == 1) and np.any(ds.t == 0)):
            raise DegenerateSplitError(f"{name} split lacks a treatment arm")

    def fit_arm(arm: int, tag: int) -> nn.ModelParams:
        tr = stage2_train.t == arm
        va = stage2_val.t == arm
        cfg = replace(config, seed=derive_seed(config.seed, 20, tag))
        return nn.fit(
            stage2_train.x[tr], stage2_train.y[tr], stage2_val.x[va], stage2_val.y[va], nn.REGRESSION, cfg
        ).params

    return TLearnerScorer(mu1=fit_arm(1, 1), mu0=fit_arm(0, 0))


def train_dr_learner(
    stage2_train: Dataset,
    stage2_val: Dataset,
    nuisances,
    config: nn.TrainConfig,
) -> ScoringModel:
    """Regress doubly robust scores on covariates; the fit is the scorer.

    ``nuisances`` is any object with ``predict(x) -> (mu0, mu1, e)``; the
    per-unit targets are the DR scores built from those predictions and
    each unit's observed (t, y).
    """

    def targets(ds: Dataset) -> np.ndarray:
        mu0, mu1, e = nuisances.predict(ds.x)
        return dr_score(ds.t, ds.y, mu0, mu1, e)

    cfg = replace(config, seed=derive_seed(config.seed, 21))
    result = nn.fit(
        stage2_train.x, targets(stage2_train), stage2_val.x, targets(stage2_val), nn.REGRESSION, cfg
    )
    return ScoringModel(result.params)
