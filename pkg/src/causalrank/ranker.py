"""Pairwise ranking of treatment effects with an orthogonalized objective.

A scoring network g maps covariates to a real priority score. Training pairs
units and pushes the pairwise preference sigmoid(g(x_i) - g(x_j)) towards a
label that encodes how likely unit i's treatment effect exceeds unit j's:

* soft targets: sigmoid((tau_i - tau_j) / kappa), built from estimated
  effects only (the plug-in route);
* pseudo labels: the soft target plus a correction omega * delta, where
  omega = t(1-t)/kappa weights by pairwise ambiguity and delta is the
  difference of doubly-robust-score residuals. The correction has zero
  conditional mean at the true nuisances, and makes the training objective
  first-order insensitive to nuisance estimation error.

Since only score differences enter the loss, the output bias of the network
cancels identically; it is excluded from the pairwise gradient, which keeps
the loss exactly invariant under constant score shifts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import nn
from .dgp import Dataset, Observation
from .errors import InvalidInputError, ParseError, TrainingDivergedError
from .nuisance import dr_score
from .rng import derive_seed, make_rng

DEFAULT_CLIP_EPS_LABEL = 1e-4
DEFAULT_PAIR_FRACTION = 0.01

# Validation pairs per early-stopping evaluation: enough for a stable loss
# estimate without quadratic cost.
_VAL_PAIRS_PER_UNIT = 10


@dataclass(frozen=True)
class RankConfig:
    kappa: float = 1.0
    pair_fraction: float = DEFAULT_PAIR_FRACTION
    clip_eps_label: float = DEFAULT_CLIP_EPS_LABEL
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)

    def __post_init__(self):
        if not self.kappa > 0:
            raise InvalidInputError("kappa must be > 0")
        if not 0 < self.pair_fraction <= 1:
            raise InvalidInputError("pair_fraction must lie in (0, 1]")
        if not 0 < self.clip_eps_label < 0.5:
            raise InvalidInputError("clip_eps_label must lie in (0, 0.5)")


@dataclass(frozen=True)
class PairBatch:
    """Ordered index pairs (i, j), i != j, with labels in [clip, 1-clip]."""

    pairs: np.ndarray  # (m, 2) int
    labels: np.ndarray  # (m,) float

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64)
        labels = np.asarray(self.labels, dtype=float)
        if pairs.ndim != 2 or pairs.shape[1] != 2 or labels.shape != (pairs.shape[0],):
            raise InvalidInputError("pairs must be (m, 2) with aligned labels")
        if np.any(pairs[:, 0] == pairs[:, 1]):
            raise InvalidInputError("diagonal pairs are not allowed")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.pairs.shape[0]


@dataclass(frozen=True)
class ScoringModel:
    """A trained scorer; larger scores mean higher predicted treatment priority."""

    params: nn.ModelParams

    def scores(self, x: np.ndarray) -> np.ndarray | float:
        return nn.forward(self.params, x)


def soft_target(tau_i, tau_j, kappa: float):
    """Probability-style target sigmoid((tau_i - tau_j) / kappa); antisymmetric."""
    if not kappa > 0:
        raise InvalidInputError("kappa must be > 0")
    t = expit((np.asarray(tau_i, dtype=float) - np.asarray(tau_j, dtype=float)) / kappa)
    return float(t) if t.ndim == 0 else t


def correction_weight(t, kappa: float):
    """Ambiguity weight omega = t(1-t)/kappa, in [0, 1/(4 kappa)], peaked at t=0.5."""
    t = np.asarray(t, dtype=float)
    w = t * (1.0 - t) / kappa
    return float(w) if w.ndim == 0 else w


def pseudo_labels(
    tau_hat_i,
    resid_i,
    tau_hat_j,
    resid_j,
    kappa: float,
    clip_eps_label: float = DEFAULT_CLIP_EPS_LABEL,
):
    """Vectorized orthogonal labels: soft target plus weighted residual difference.

    ``resid`` is the doubly-robust-score residual phi - tau_hat per unit.
    The raw label t + omega * delta is antisymmetric around 0.5 and gets
    clipped into [clip, 1-clip] at the end.
    """
    t = soft_target(tau_hat_i, tau_hat_j, kappa)
    omega = correction_weight(t, kappa)
    delta = np.asarray(resid_i, dtype=float) - np.asarray(resid_j, dtype=float)
    raw = t + omega * delta
    out = np.clip(raw, clip_eps_label, 1.0 - clip_eps_label)
    return float(out) if np.ndim(out) == 0 else out


def pseudo_label(
    w_i: Observation,
    w_j: Observation,
    eta_i: tuple[float, float, float],
    eta_j: tuple[float, float, float],
    kappa: float,
    clip_eps_label: float = DEFAULT_CLIP_EPS_LABEL,
) -> float:
    """Orthogonal label for one ordered pair of units.

    ``eta`` supplies (mu0, mu1, e) per unit. Raises when a propensity falls
    outside (0, 1).
    """
    mu0_i, mu1_i, e_i = eta_i
    mu0_j, mu1_j, e_j = eta_j
    tau_i = mu1_i - mu0_i
    tau_j = mu1_j - mu0_j
    resid_i = dr_score(w_i.t, w_i.y, mu0_i, mu1_i, e_i) - tau_i
    resid_j = dr_score(w_j.t, w_j.y, mu0_j, mu1_j, e_j) - tau_j
    return pseudo_labels(tau_i, resid_i, tau_j, resid_j, kappa, clip_eps_label)


def sample_pairs(n: int, pair_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Draw round(pair_fraction * n^2) ordered off-diagonal pairs, uniform with replacement."""
    if n < 2:
        raise InvalidInputError("need at least 2 units to form pairs")
    m = int(round(pair_fraction * n * n))
    if m < 1:
        raise InvalidInputError(f"pair_fraction {pair_fraction} yields zero pairs for n={n}")
    i = rng.integers(0, n, size=m)
    j = rng.integers(0, n - 1, size=m)
    j = j + (j >= i)  # skip the diagonal while staying uniform
    return np.column_stack([i, j])


def pairwise_loss_and_grad(
    scorer: ScoringModel,
    batch_x: np.ndarray,
    batch: PairBatch,
    weight_decay: float = 0.0,
) -> tuple[float, nn.Grads]:
    """Mean pairwise cross-entropy and exact gradients through both scores.

    The margin is computed without the output bias (it cancels), so the
    loss is exactly shift-invariant and the bias gradient is exactly zero.
    """
    if len(batch) == 0:
        raise InvalidInputError("pair batch must be non-empty")
    params = scorer.params
    xi = batch_x[batch.pairs[:, 0]]
    xj = batch_x[batch.pairs[:, 1]]
    hi = nn.hidden_activations(params, xi)
    hj = nn.hidden_activations(params, xj)
    margins = hi @ params.w2 - hj @ params.w2
    labels = batch.labels
    loss = float(np.mean(np.logaddexp(0.0, margins) - labels * margins))
    if weight_decay:
        loss += 0.5 * weight_decay * (float(np.sum(params.w1**2)) + float(np.sum(params.w2**2)))
    if not np.isfinite(loss):
        raise InvalidInputError("pairwise loss is non-finite")

    dm = (expit(margins) - labels) / len(batch)
    gi = nn.backprop_from_output(params, xi, hi, dm, include_b2=False)
    gj = nn.backprop_from_output(params, xj, hj, -dm, include_b2=False)
    grads = nn.Grads(gi.w1 + gj.w1, gi.b1 + gj.b1, gi.w2 + gj.w2, 0.0)
    if weight_decay:
        grads.w1 += weight_decay * params.w1
        grads.w2 += weight_decay * params.w2
    return loss, grads


def _pairwise_data_loss(params: nn.ModelParams, batch_x: np.ndarray, batch: PairBatch) -> float:
    h = nn.hidden_activations(params, batch_x)
    u = h @ params.w2
    margins = u[batch.pairs[:, 0]] - u[batch.pairs[:, 1]]
    return float(np.mean(np.logaddexp(0.0, margins) - batch.labels * margins))


def _unit_tables(dataset: Dataset, nuisances, orthogonal: bool) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit (tau_hat, residual) from a nuisance predictor."""
    mu0, mu1, e = nuisances.predict(dataset.x)
    tau_hat = np.asarray(mu1) - np.asarray(mu0)
    if orthogonal:
        resid = dr_score(dataset.t, dataset.y, mu0, mu1, e) - tau_hat
    else:
        resid = np.zeros(len(dataset))
    return tau_hat, resid


def _labels_for(pairs: np.ndarray, tau_hat: np.ndarray, resid: np.ndarray, config: RankConfig) -> np.ndarray:
    i, j = pairs[:, 0], pairs[:, 1]
    return pseudo_labels(tau_hat[i], resid[i], tau_hat[j], resid[j], config.kappa, config.clip_eps_label)


def _train_pairwise(
    stage2_train: Dataset,
    stage2_val: Dataset,
    nuisances,
    config: RankConfig,
    orthogonal: bool,
) -> ScoringModel:
    tcfg = config.train
    n_tr = len(stage2_train)
    n_val = len(stage2_val)
    if n_tr < 2 or n_val < 2:
        raise InvalidInputError("need at least 2 train and 2 validation units")

    tau_tr, resid_tr = _unit_tables(stage2_train, nuisances, orthogonal)
    tau_val, resid_val = _unit_tables(stage2_val, nuisances, orthogonal)

    init_seed = derive_seed(tcfg.seed, 10)
    pair_rng = make_rng(derive_seed(tcfg.seed, 11))
    val_rng = make_rng(derive_seed(tcfg.seed, 12))

    n_val_pairs = min(_VAL_PAIRS_PER_UNIT * n_val, n_val * n_val - n_val)
    val_pairs = sample_pairs(n_val, n_val_pairs / (n_val * n_val), val_rng)
    val_batch = PairBatch(val_pairs, _labels_for(val_pairs, tau_val, resid_val, config))

    params = nn.init(stage2_train.d, tcfg.hidden, nn.REGRESSION, init_seed)
    state = nn.init_adam(params)
    scorer = ScoringModel(params)

    best = params.copy()
    best_val = np.inf
    stale = 0
    for epoch in range(1, tcfg.max_epochs + 1):
        pairs = sample_pairs(n_tr, config.pair_fraction, pair_rng)
        labels = _labels_for(pairs, tau_tr, resid_tr, config)
        for start in range(0, pairs.shape[0], tcfg.batch_size):
            sl = slice(start, start + tcfg.batch_size)
            batch = PairBatch(pairs[sl], labels[sl])
            loss, grads = pairwise_loss_and_grad(scorer, stage2_train.x, batch, tcfg.weight_decay)
            if not np.isfinite(loss):
                raise TrainingDivergedError("pairwise training loss diverged", epoch)
            params, state = nn.adam_step(params, grads, state, tcfg.learning_rate)
            scorer = ScoringModel(params)

        val_loss = _pairwise_data_loss(params, stage2_val.x, val_batch)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError("pairwise validation loss diverged", epoch)
        if val_loss < best_val:
            best_val = val_loss
            best = params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= tcfg.patience:
                break

    return ScoringModel(best)


def train_rank_learner(
    stage2_train: Dataset,
    stage2_val: Dataset,
    nuisances,
    config: RankConfig,
) -> ScoringModel:
    """Second-stage scorer trained on orthogonal pseudo labels.

    ``nuisances`` is any object with ``predict(x) -> (mu0, mu1, e)``; pairs
    are resampled every epoch and early stopping uses a fixed seeded sample
    of validation pairs labelled the same way.
    """
    return _train_pairwise(stage2_train, stage2_val, nuisances, config, orthogonal=True)


def train_plugin_ranker(
    stage2_train: Dataset,
    stage2_val: Dataset,
    nuisances,
    config: RankConfig,
) -> ScoringModel:
    """Non-orthogonal reference: identical training, labels are plain soft targets."""
    return _train_pairwise(stage2_train, stage2_val, nuisances, config, orthogonal=False)


def save_scores(scores: np.ndarray, path) -> None:
    """Write per-unit scores as CSV ``index,score``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "score"])
        for i, s in enumerate(np.asarray(scores, dtype=float)):
            writer.writerow([i, "%.17g" % s])


def load_scores(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["index", "score"]:
            raise ParseError(f"{path}: expected header index,score", line=1)
        values = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"{path}: expected 2 fields", line=lineno)
            try:
                idx, val = int(row[0]), float(row[1])
            except ValueError:
                raise ParseError(f"{path}: bad row {row!r}", line=lineno)
            if idx != len(values):
                raise ParseError(f"{path}: indices must be consecutive from 0", line=lineno, column="index")
            values.append(val)
    return np.asarray(values, dtype=float)
