"""Mini-batch training loop for the inversion network.

Fully deterministic given (config, dataset): parameter initialization
uses child_seed(config.seed, 0), the batch order of epoch e comes from
stream(config.seed, 1, e), and the loss for step s of epoch e draws its
dropout masks under child_seed(config.seed, 2, e, s).  Optimizer steps
apply the mean gradient over the batch.

Validation metrics (when a validation set is supplied) use
deterministic-mode forward passes: ``val_mse`` is the mean pixel MSE
against labels (nan for unlabeled data) and ``val_physics`` the mean
per-sample observation residual |g - A net(g)|^2.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .datagen import Dataset
from .errors import DivergenceError, NumericFailure
from .losses import LossBreakdown, LossWeights, loss_supervised, loss_unsupervised
from .network import EvalMode, forward, load_checkpoint, init_params, save_checkpoint
from .operators import fit_to_shape
from .rng import child_seed, stream

__all__ = [
    "AdamState",
    "EpochRecord",
    "TrainConfig",
    "TrainHistory",
    "evaluate",
    "load_checkpoint",
    "optimizer_step",
    "save_checkpoint",
    "split_dataset",
    "train",
]

HISTORY_COLUMNS = (
    "epoch",
    "total",
    "label_fit",
    "physics_fit",
    "prior_fit",
    "weight_penalty",
    "val_mse",
    "val_physics",
)

DIVERGENCE_FACTOR = 10.0


@dataclass(frozen=True)
class TrainConfig:
    mode: str
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 8
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    split_fraction: float = 0.8

    def __post_init__(self):
        if self.mode not in ("supervised", "unsupervised"):
            raise ValueError(f"mode must be supervised or unsupervised, got {self.mode!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if not (self.learning_rate > 0):
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 < self.split_fraction < 1.0):
            raise ValueError(f"split_fraction must be in (0, 1), got {self.split_fraction}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: LossBreakdown
    val_mse: float
    val_physics: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def to_table(self):
        """Tab-separated table, one row per epoch, nan for absent metrics."""
        lines = ["\t".join(HISTORY_COLUMNS)]
        for r in self.records:
            loss = r.train_loss
            lines.append(
                "\t".join(
                    [str(r.epoch)]
                    + [
                        format(v, ".17g")
                        for v in (
                            loss.total,
                            loss.label_fit,
                            loss.physics_fit,
                            loss.prior_fit,
                            loss.weight_penalty,
                            r.val_mse,
                            r.val_physics,
                        )
                    ]
                )
            )
        return "\n".join(lines) + "\n"


def split_dataset(ds, fraction, seed):
    """Seeded shuffle, then an exact partition at round(fraction * N)."""
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    n = len(ds)
    if n == 0:
        raise ValueError("dataset is empty")
    n_train = int(math.floor(fraction * n + 0.5))
    if n_train == 0 or n_train == n:
        raise ValueError(
            f"split of {n} samples at fraction {fraction} leaves one side empty"
        )
    perm = stream(seed).permutation(n)
    train_samples = tuple(ds.samples[i] for i in perm[:n_train])
    test_samples = tuple(ds.samples[i] for i in perm[n_train:])
    return (
        replace(ds, samples=train_samples),
        replace(ds, samples=test_samples),
    )


@dataclass
class AdamState:
    """First/second moment accumulators with bias correction; the decay
    rates 0.9/0.999 and epsilon 1e-8 are fixed."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size):
        return cls(m=np.zeros(size), v=np.zeros(size), step=0)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


def optimizer_step(state, params, grads, lr):
    """One parameter update in place; ``state`` None selects plain SGD,
    an AdamState selects Adam.  Returns the (possibly updated) state."""
    if grads.flat.shape != params.flat.shape:
        raise ValueError("gradient shape does not match parameters")
    if state is None:
        update = lr * grads.flat
    else:
        state.step += 1
        state.m = ADAM_BETA1 * state.m + (1 - ADAM_BETA1) * grads.flat
        state.v = ADAM_BETA2 * state.v + (1 - ADAM_BETA2) * grads.flat**2
        m_hat = state.m / (1 - ADAM_BETA1**state.step)
        v_hat = state.v / (1 - ADAM_BETA2**state.step)
        update = lr * m_hat / (np.sqrt(v_hat) + ADAM_EPSILON)
    if not np.isfinite(update).all():
        raise NumericFailure("non-finite optimizer update")
    params.flat -= update
    return state


def evaluate(layers, params, ds, op):
    """Deterministic-mode metrics over a dataset: (mean pixel MSE vs
    labels or nan, mean per-sample physics residual)."""
    mode = EvalMode.deterministic()
    mse_total = 0.0
    physics_total = 0.0
    for sample in ds.samples:
        net_in = fit_to_shape(sample.g, op.input_shape)
        output, _ = forward(layers, params, net_in, mode)
        f_net = output.reshape(op.input_shape)
        residual = op.apply(f_net) - sample.g
        physics_total += float(np.sum(residual**2))
        if sample.f is not None:
            mse_total += float(np.mean((f_net - sample.f) ** 2))
    n = len(ds)
    val_mse = mse_total / n if ds.supervised else float("nan")
    return val_mse, physics_total / n


def train(layers, config, ds, op, prior_mean=None, val=None):
    """Run the configured optimization; returns (params, history).

    Aborts with DivergenceError when an epoch's mean loss exceeds 10x
    the first epoch's mean loss.
    """
    if not isinstance(ds, Dataset):
        raise ValueError("train expects a Dataset")
    if len(ds) == 0:
        raise ValueError("training dataset is empty")
    supervised = config.mode == "supervised"
    if supervised and not ds.supervised:
        raise ValueError("supervised training requires a labeled dataset")
    if not supervised and ds.supervised:
        raise ValueError("unsupervised training requires an unlabeled dataset")
    layers = tuple(layers)
    params = init_params(layers, child_seed(config.seed, 0))
    state = AdamState.zeros(params.size) if config.optimizer == "adam" else None
    history = TrainHistory()
    initial_loss = None
    n = len(ds)
    for epoch in range(config.epochs):
        perm = stream(config.seed, 1, epoch).permutation(n)
        total = np.zeros(5)
        for step, start in enumerate(range(0, n, config.batch_size)):
            indices = perm[start : start + config.batch_size]
            seed = child_seed(config.seed, 2, epoch, step)
            if supervised:
                batch = [(ds.samples[i].g, ds.samples[i].f) for i in indices]
                breakdown, grads = loss_supervised(
                    layers, params, batch, op, prior_mean, config.loss_weights, seed
                )
            else:
                batch = [ds.samples[i].g for i in indices]
                breakdown, grads = loss_unsupervised(
                    layers, params, batch, op, config.loss_weights, seed
                )
            grads.flat /= len(indices)
            state = optimizer_step(state, params, grads, config.learning_rate)
            total += (
                breakdown.total,
                breakdown.label_fit,
                breakdown.physics_fit,
                breakdown.prior_fit,
                breakdown.weight_penalty,
            )
        mean_loss = LossBreakdown(*(total / n))
        if initial_loss is None:
            initial_loss = mean_loss.total
        elif initial_loss > 0 and mean_loss.total > DIVERGENCE_FACTOR * initial_loss:
            raise DivergenceError(epoch, mean_loss.total, initial_loss)
        if val is not None:
            val_mse, val_physics = evaluate(layers, params, val, op)
        else:
            val_mse = val_physics = float("nan")
        history.records.append(
            EpochRecord(epoch=epoch, train_loss=mean_loss,
                        val_mse=val_mse, val_physics=val_physics)
        )
    return params, history
