"""Single-hidden-layer feedforward nets trained with Adam, from scratch in numpy.

Regression heads emit the raw linear output; binary heads pass it through a
logistic sigmoid. Binary targets may be soft (any value in [0, 1]), which the
pairwise ranking stage relies on. All losses are computed from logits in
numerically stable form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import InvalidInputError, TrainingDivergedError
from .rng import SeedLike, make_rng, spawn

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Keep binary outputs strictly inside (0, 1) even where expit saturates.
_P_EPS = 1e-12

REGRESSION = "regression"
BINARY = "binary"


@dataclass(frozen=True)
class ModelParams:
    w1: np.ndarray  # (hidden, d)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float
    task: str

    def __post_init__(self):
        if self.task not in (REGRESSION, BINARY):
            raise InvalidInputError(f"unknown task {self.task!r}")
        hidden, d = self.w1.shape
        if hidden < 1 or d < 1:
            raise InvalidInputError("hidden and input dimensions must be >= 1")
        if self.b1.shape != (hidden,) or self.w2.shape != (hidden,):
            raise InvalidInputError("parameter shapes are inconsistent")
        for a in (self.w1, self.b1, self.w2):
            if not np.all(np.isfinite(a)):
                raise InvalidInputError("parameters contain non-finite values")
        if not np.isfinite(self.b2):
            raise InvalidInputError("parameters contain non-finite values")

    @property
    def d(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2, self.task)


@dataclass
class Grads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float


@dataclass
class AdamState:
    m: Grads
    v: Grads
    t: int = 0


def zeros_like_params(params: ModelParams) -> Grads:
    return Grads(np.zeros_like(params.w1), np.zeros_like(params.b1), np.zeros_like(params.w2), 0.0)


def init_adam(params: ModelParams) -> AdamState:
    return AdamState(zeros_like_params(params), zeros_like_params(params), 0)


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 128
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be > 0")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1 or self.hidden < 1:
            raise InvalidInputError("hidden, batch_size, patience, max_epochs must be >= 1")


def init(d: int, hidden: int, task: str, seed: SeedLike) -> ModelParams:
    """Glorot-uniform weights, zero biases; deterministic in seed."""
    if d < 1 or hidden < 1:
        raise InvalidInputError("d and hidden must be >= 1")
    rng = make_rng(seed)
    lim1 = np.sqrt(6.0 / (d + hidden))
    lim2 = np.sqrt(6.0 / (hidden + 1))
    w1 = rng.uniform(-lim1, lim1, size=(hidden, d))
    w2 = rng.uniform(-lim2, lim2, size=hidden)
    return ModelParams(w1, np.zeros(hidden), w2, 0.0, task)


def _check_x(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.d:
        raise InvalidInputError(f"input must have {params.d} features, got shape {x.shape}")
    return x


def raw_scores(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Pre-head output w2 . relu(w1 x + b1) + b2 for a batch."""
    x = _check_x(params, x)
    h = np.maximum(x @ params.w1.T + params.b1, 0.0)
    return h @ params.w2 + params.b2


def forward(params: ModelParams, x: np.ndarray) -> np.ndarray | float:
    """Model output for one vector or a batch; binary heads map into (0, 1)."""
    single = np.ndim(x) == 1
    z = raw_scores(params, x)
    if params.task == BINARY:
        z = np.clip(expit(z), _P_EPS, 1.0 - _P_EPS)
    return float(z[0]) if single else z


def hidden_activations(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """ReLU layer output, exposed for gradient computation by other losses."""
    x = _check_x(params, x)
    return np.maximum(x @ params.w1.T + params.b1, 0.0)


def backprop_from_output(
    params: ModelParams,
    x: np.ndarray,
    h: np.ndarray,
    dz: np.ndarray,
    weight_decay: float = 0.0,
    include_b2: bool = True,
) -> Grads:
    """Exact gradients given d(loss)/d(raw output) per row.

    ``include_b2=False`` is for losses built on score differences, where the
    output bias cancels identically and its gradient is exactly zero.
    """
    x = _check_x(params, x)
    dw2 = h.T @ dz
    db2 = float(np.sum(dz)) if include_b2 else 0.0
    dh = dz[:, None] * params.w2[None, :]
    dz1 = dh * (h > 0.0)
    dw1 = dz1.T @ x
    db1 = dz1.sum(axis=0)
    if weight_decay:
        dw1 = dw1 + weight_decay * params.w1
        dw2 = dw2 + weight_decay * params.w2
    return Grads(dw1, db1, dw2, db2)


def data_loss(params: ModelParams, x: np.ndarray, y: np.ndarray, task: str) -> float:
    """Mean loss without the weight-decay penalty (used for validation)."""
    y = np.asarray(y, dtype=float)
    z = raw_scores(params, x)
    if task == REGRESSION:
        return float(np.mean((z - y) ** 2))
    # BCE from logits: softplus(z) - y * z, valid for soft targets in [0, 1].
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def loss_and_grad(
    params: ModelParams,
    x: np.ndarray,
    y: np.ndarray,
    task: str,
    weight_decay: float = 0.0,
) -> tuple[float, Grads]:
    """Mean loss over the batch plus L2 penalty on weights (biases excluded)."""
    x = _check_x(params, x)
    y = np.asarray(y, dtype=float)
    if x.shape[0] == 0:
        raise InvalidInputError("batch must be non-empty")
    if y.shape != (x.shape[0],):
        raise InvalidInputError("targets not aligned with batch")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("targets contain non-finite values")
    if task == BINARY and (np.any(y < 0.0) or np.any(y > 1.0)):
        raise InvalidInputError("binary targets must lie in [0, 1]")

    n = x.shape[0]
    h = np.maximum(x @ params.w1.T + params.b1, 0.0)
    z = h @ params.w2 + params.b2
    if task == REGRESSION:
        loss = float(np.mean((z - y) ** 2))
        dz = 2.0 * (z - y) / n
    elif task == BINARY:
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        dz = (expit(z) - y) / n
    else:
        raise InvalidInputError(f"unknown task {task!r}")
    if weight_decay:
        loss += 0.5 * weight_decay * (float(np.sum(params.w1**2)) + float(np.sum(params.w2**2)))
    if not np.isfinite(loss):
        raise InvalidInputError("loss is non-finite; inputs or parameters are degenerate")
    return loss, backprop_from_output(params, x, h, dz, weight_decay)


def adam_step(params: ModelParams, grads: Grads, state: AdamState, lr: float) -> tuple[ModelParams, AdamState]:
    """Bias-corrected Adam update; returns fresh params and state."""
    t = state.t + 1
    new_m = Grads(*[ADAM_BETA1 * m + (1 - ADAM_BETA1) * g for m, g in _zip_blocks(state.m, grads)])
    new_v = Grads(*[ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g for v, g in _zip_blocks(state.v, grads)])
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    updates = [lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS) for m, v in _zip_blocks(new_m, new_v)]
    new_params = ModelParams(
        params.w1 - updates[0],
        params.b1 - updates[1],
        params.w2 - updates[2],
        params.b2 - float(updates[3]),
        params.task,
    )
    return new_params, AdamState(new_m, new_v, t)


def _zip_blocks(a: Grads, b: Grads):
    return zip((a.w1, a.b1, a.w2, a.b2), (b.w1, b.b1, b.w2, b.b2))


@dataclass
class FitResult:
    params: ModelParams
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int
    best_val_loss: float


def fit(
    train_x: np.ndarray,
    train_y: np.ndarray,
    val_x: np.ndarray,
    val_y: np.ndarray,
    task: str,
    config: TrainConfig,
) -> FitResult:
    """Mini-batch Adam with early stopping on validation loss.

    Batches are reshuffled every epoch (seeded). Training stops once the
    validation loss has not improved for ``patience`` consecutive epochs or
    at ``max_epochs``; the parameters with the lowest validation loss seen
    are returned.
    """
    train_x = np.asarray(train_x, dtype=float)
    val_x = np.asarray(val_x, dtype=float)
    if train_x.shape[0] == 0 or val_x.shape[0] == 0:
        raise InvalidInputError("train and validation sets must be non-empty")

    init_seed, shuffle_seed = spawn(config.seed, 2)
    params = init(train_x.shape[1], config.hidden, task, seed=init_seed)
    shuffle_rng = make_rng(shuffle_seed)
    state = init_adam(params)

    n = train_x.shape[0]
    best = params.copy()
    best_val = np.inf
    best_epoch = 0
    stale = 0
    train_losses: list[float] = []
    val_losses: list[float] = []

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = loss_and_grad(params, train_x[idx], train_y[idx], task, config.weight_decay)
            if not np.isfinite(loss):
                raise TrainingDivergedError("training loss diverged", epoch)
            params, state = adam_step(params, grads, state, config.learning_rate)
            epoch_losses.append(loss)
        train_losses.append(float(np.mean(epoch_losses)))

        val_loss = data_loss(params, val_x, val_y, task)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError("validation loss diverged", epoch)
        val_losses.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best = params.copy()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    return FitResult(best, train_losses, val_losses, best_epoch, best_val)


CHECKPOINT_VERSION = 1


def save_model(params: ModelParams, path) -> None:
    """Versioned binary checkpoint; round-trips exactly."""
    np.savez(
        path,
        version=np.int64(CHECKPOINT_VERSION),
        task=np.str_(params.task),
        w1=params.w1,
        b1=params.b1,
        w2=params.w2,
        b2=np.float64(params.b2),
    )


def load_model(path) -> ModelParams:
    with np.load(path, allow_pickle=False) as blob:
        version = int(blob["version"])
        if version != CHECKPOINT_VERSION:
            raise InvalidInputError(f"unsupported checkpoint version {version}")
        return ModelParams(blob["w1"], blob["b1"], blob["w2"], float(blob["b2"]), str(blob["task"]))
