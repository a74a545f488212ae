"""Learning treatment-effect rankings from observational data.

The package pairs a first stage of cross-fitted nuisance estimation with a
second-stage pairwise ranking objective whose labels carry a doubly-robust
correction, making the learned ordering first-order insensitive to nuisance
estimation error. It ships the synthetic benchmark generator, magnitude-based
baseline rankers, ranking metrics, and exact finite-support verification of
the objective's orthogonality and minimizer properties.
"""

from .dgp import (
    Dataset,
    DgpConfig,
    GroundTruth,
    Observation,
    generate,
    latent_score,
    load_dataset,
    load_ground_truth,
    overlap_measure,
    partition,
    save_dataset,
    save_ground_truth,
    true_cate,
    true_mu0,
    true_propensity,
)
from .errors import (
    CausalRankError,
    DegenerateSplitError,
    InvalidInputError,
    ParseError,
    StepTooLargeError,
    TrainingDivergedError,
)
from .nn import FitResult, ModelParams, TrainConfig, fit, forward, init, load_model, save_model
from .nuisance import NuisanceEstimates, OracleNuisances, cross_fit, dr_score, predict_nuisances
from .ranker import (
    PairBatch,
    RankConfig,
    ScoringModel,
    correction_weight,
    pseudo_label,
    sample_pairs,
    soft_target,
    train_plugin_ranker,
    train_rank_learner,
)
from .baselines import TLearnerScorer, train_dr_learner, train_t_learner
from .metrics import (
    EvalReport,
    TocCurve,
    approx_autoc,
    autoc,
    evaluate_scores,
    mean_policy_value,
    select_best,
    spearman,
    toc,
)
from .orthocheck import (
    DiscretePopulation,
    Direction,
    NuisanceTables,
    cross_derivative,
    load_golden_population,
    loss_gradient_g,
    population_loss,
    verify_minimizer,
    verify_orthogonality,
)

__version__ = "0.1.0"
