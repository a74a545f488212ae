"""Ranking quality metrics for treatment prioritization.

The central curve ranks units by score and tracks, for every cutoff k, how
much the mean effect among the top-k exceeds the population mean. Its area
summarizes how well a ranking concentrates benefit at the top; it is zero in
expectation for a random ranking, maximal for the effect-sorted ranking, and
invariant under strictly increasing transforms of the scores. The same area
computed on doubly robust scores instead of true effects is the feasible
validation-time surrogate used for model selection.

Sorting is deterministic: descending by score, ties broken by ascending
index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .dgp import Dataset
from .errors import InvalidInputError
from .nuisance import dr_score


@dataclass(frozen=True)
class TocCurve:
    """Top-k uplift values at cutoffs k = 1..m; the last entry is zero."""

    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class EvalReport:
    autoc: float
    mean_policy_value: float
    spearman_vs_truth: float


def _ranking(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    m = scores.shape[0]
    # lexsort: primary key last -> descending score, then ascending index
    return np.lexsort((np.arange(m), -scores))


def _check_aligned(scores, effects) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=float)
    effects = np.asarray(effects, dtype=float)
    if scores.ndim != 1 or scores.shape != effects.shape:
        raise InvalidInputError("scores and effects must be equal-length vectors")
    if scores.shape[0] < 1:
        raise InvalidInputError("need at least one unit")
    return scores, effects


def toc(scores, effects) -> TocCurve:
    """Cumulative top-k mean effect minus the overall mean, for k = 1..m."""
    scores, effects = _check_aligned(scores, effects)
    order = _ranking(scores)
    m = scores.shape[0]
    cum = np.cumsum(effects[order])
    ks = np.arange(1, m + 1, dtype=float)
    return TocCurve(cum / ks - cum[-1] / m)


def autoc(scores, effects) -> float:
    """Area under the top-k uplift curve: the uniform average over cutoffs."""
    return float(np.mean(toc(scores, effects).values))


def approx_autoc(scores, dr_scores) -> float:
    """Same area with doubly robust scores standing in for the true effects."""
    return autoc(scores, dr_scores)


def mean_policy_value(scores, tau, mu0) -> float:
    """Mean outcome under treat-top-k policies, averaged over k = 0..m.

    For cutoff k the implied policy treats the k highest-scored units, so
    its population outcome is mean(mu0) + (1/m) * sum of their effects;
    averaging includes both the treat-nobody and treat-all endpoints.
    """
    scores, tau = _check_aligned(scores, tau)
    mu0 = np.asarray(mu0, dtype=float)
    if mu0.shape != scores.shape:
        raise InvalidInputError("mu0 must be aligned with scores")
    order = _ranking(scores)
    m = scores.shape[0]
    cum = np.concatenate([[0.0], np.cumsum(tau[order])])  # k = 0..m
    return float(np.mean(mu0) + np.mean(cum) / m)


def spearman(a, b) -> float:
    """Rank correlation with average ranks on ties."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.shape[0] < 2:
        raise InvalidInputError("need two equal-length vectors with at least 2 entries")
    ra = rankdata(a)
    rb = rankdata(b)
    if np.all(ra == ra[0]) or np.all(rb == rb[0]):
        raise InvalidInputError("rank correlation undefined for constant input")
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    return float(np.dot(ra, rb) / np.sqrt(np.dot(ra, ra) * np.dot(rb, rb)))


def select_best(candidates: Sequence[tuple], val_units: Dataset, val_nuisances) -> tuple:
    """Pick the candidate whose validation DR-score area is largest.

    ``candidates`` holds (config, scorer) tuples; ties keep the earliest
    candidate, so selection is deterministic.
    """
    if len(candidates) == 0:
        raise InvalidInputError("no candidates to select from")
    mu0, mu1, e = val_nuisances.predict(val_units.x)
    phi = dr_score(val_units.t, val_units.y, mu0, mu1, e)
    best_idx = 0
    best_value = -np.inf
    for idx, (_, scorer) in enumerate(candidates):
        value = approx_autoc(scorer.scores(val_units.x), phi)
        if value > best_value:
            best_value = value
            best_idx = idx
    return candidates[best_idx]


def evaluate_scores(scores, tau, mu0) -> EvalReport:
    """Oracle evaluation of a score vector against known ground truth."""
    return EvalReport(
        autoc=autoc(scores, tau),
        mean_policy_value=mean_policy_value(scores, tau, mu0),
        spearman_vs_truth=spearman(scores, tau),
    )
