"""
Training of unfolded networks.

End-to-end training of all layers with ADAM and an exponentially
decaying step size. The loss is the squared error between the
normalized network output and the unit-norm ground truth, which is the
linear NMSE. The all-layers loss averages that error over the
normalized output of every layer, so truncated networks are trained too.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .errors import Divergence, InvalidArgument, ZeroOutput
from .network import (
    LayerGradient,
    UnfoldedModel,
    backward,
    forward_readouts,
    forward_with_cache,
)
from .signals import Dataset, SparseSignal, Stream, mean_nmse_db, nmse_db_batch, substream
from .solvers import backprojection

logger = logging.getLogger(__name__)

HISTORY_FIELDS = ["step", "epoch", "effective_lr", "train_loss", "val_nmse_db"]

# "mse_normalized" scores the final output only; "mse_all_layers" averages
# the score of every layer's normalized readout.
LOSSES = ("mse_normalized", "mse_all_layers")


@dataclass
class TrainConfig:
    """Training schedule. batch_size must not exceed the number of training samples."""
    epochs: int = 1000
    batch_size: int = 25
    seed: int = 0
    loss: str = "mse_normalized"
    validation_fraction: float = 0.0
    straight_through: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise InvalidArgument(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidArgument(f"batch_size must be positive, got {self.batch_size}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise InvalidArgument(
                f"validation_fraction must be in [0, 1), got {self.validation_fraction}"
            )
        if self.loss not in LOSSES:
            raise InvalidArgument(f"unknown loss {self.loss!r}, expected one of {LOSSES}")

    def to_dict(self) -> dict:
        """Convert to dictionary for serialization."""
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "loss": self.loss,
            "validation_fraction": self.validation_fraction,
            "straight_through": self.straight_through,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        """Create from dictionary."""
        return cls(
            epochs=int(d["epochs"]),
            batch_size=int(d["batch_size"]),
            seed=int(d["seed"]),
            loss=d.get("loss", "mse_normalized"),
            validation_fraction=float(d.get("validation_fraction", 0.0)),
            straight_through=bool(d.get("straight_through", False)),
        )


@dataclass
class AdamState:
    """
    ADAM optimizer state with an exponentially decaying step size.

    The step size at a given step is lr0 * decay_rate ** (step / decay_every).
    Moments are stored per distinct parameter set of the model.
    """
    lr0: float = 1e-3
    decay_rate: float = 0.9
    decay_every: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: List[LayerGradient] = field(default_factory=list)
    second_moment: List[LayerGradient] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.lr0 < 0:
            raise InvalidArgument(f"lr0 must be nonnegative, got {self.lr0}")
        if not 0.0 < self.decay_rate <= 1.0:
            raise InvalidArgument(f"decay_rate must be in (0, 1], got {self.decay_rate}")
        if self.decay_every < 1:
            raise InvalidArgument(f"decay_every must be positive, got {self.decay_every}")

    @property
    def effective_lr(self) -> float:
        return self.lr0 * self.decay_rate ** (self.step / self.decay_every)

    def _init_moments(self, model: UnfoldedModel) -> None:
        def zeros() -> List[LayerGradient]:
            return [
                LayerGradient(A=np.zeros_like(p.A), Bbar=np.zeros_like(p.Bbar))
                for p in model.parameters()
            ]
        self.first_moment = zeros()
        self.second_moment = zeros()

    def apply(self, model: UnfoldedModel, grads: List[LayerGradient]) -> float:
        """
        Take one optimizer step on the model in place.

        Args:
            model: Model whose parameters() match grads
            grads: Gradients from backward()

        Returns:
            The step size used
        """
        params = model.parameters()
        if len(grads) != len(params):
            raise InvalidArgument(f"got {len(grads)} gradients for {len(params)} parameter sets")
        if not self.first_moment:
            self._init_moments(model)

        lr = self.effective_lr
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step
        c2 = 1.0 - b2 ** self.step

        for p, g, m, v in zip(params, grads, self.first_moment, self.second_moment):
            for name in ("A", "Bbar"):
                grad = getattr(g, name)
                m_arr = getattr(m, name)
                v_arr = getattr(v, name)
                m_arr *= b1
                m_arr += (1.0 - b1) * grad
                v_arr *= b2
                v_arr += (1.0 - b2) * grad * grad
                getattr(p, name)[...] -= lr * (m_arr / c1) / (np.sqrt(v_arr / c2) + self.epsilon)
            m.nu = b1 * m.nu + (1.0 - b1) * g.nu
            v.nu = b2 * v.nu + (1.0 - b2) * g.nu * g.nu
            p.nu = max(p.nu - lr * (m.nu / c1) / (math.sqrt(v.nu / c2) + self.epsilon), 0.0)
        return lr

    def constants(self) -> dict:
        """Hyperparameters only (no moments), for provenance."""
        return {
            "lr0": self.lr0,
            "decay_rate": self.decay_rate,
            "decay_every": self.decay_every,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
        }


@dataclass
class EpochRecord:
    """Summary of one training epoch."""
    step: int
    epoch: int
    effective_lr: float
    train_loss: float
    val_nmse_db: float = math.nan


@dataclass
class TrainHistory:
    """Per-epoch training records."""
    records: List[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [r.train_loss for r in self.records]

    def write_csv(self, path: Path, append: bool = True) -> None:
        """Write (or append) the records as step,epoch,effective_lr,train_loss,val_nmse_db."""
        path = Path(path)
        new_file = not (append and path.exists())
        with open(path, "w" if new_file else "a", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            if new_file:
                writer.writerow(HISTORY_FIELDS)
            for r in self.records:
                writer.writerow([r.step, r.epoch, repr(r.effective_lr), repr(r.train_loss), repr(r.val_nmse_db)])


def loss(xstar: np.ndarray, truth) -> float:
    """
    Squared error ||x* - x||^2 between an estimate and a unit-norm truth.

    For an N x L matrix the mean over columns is returned.
    """
    ref = np.asarray(truth.values if isinstance(truth, SparseSignal) else truth, dtype=float)
    diff = np.asarray(xstar, dtype=float) - ref
    if diff.ndim == 1:
        return float(np.sum(diff * diff))
    return float(np.mean(np.sum(diff * diff, axis=0)))


def split_indices(count: int, validation_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded (train, validation) split of range(count)."""
    n_val = int(math.floor(validation_fraction * count + 0.5))
    perm = substream(seed, Stream.SHUFFLE, 0).permutation(count)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def evaluate_model(model: UnfoldedModel, dataset: Dataset) -> np.ndarray:
    """Per-sample NMSE (dB) of the model on every column of a dataset."""
    y = dataset.measurements.signs
    xstar, _ = forward_with_cache(model, y, backprojection(dataset.phi, y))
    return nmse_db_batch(xstar, dataset.signals.values)


def evaluate_readouts(model: UnfoldedModel, dataset: Dataset) -> List[np.ndarray]:
    """Per-sample NMSE (dB) of the network truncated after each layer."""
    y = dataset.measurements.signs
    readouts = forward_readouts(model, y, backprojection(dataset.phi, y))
    return [nmse_db_batch(x, dataset.signals.values) for x in readouts]


def _batch_step(
    model: UnfoldedModel,
    cfg: TrainConfig,
    y: np.ndarray,
    x0: np.ndarray,
    truth: np.ndarray,
) -> Tuple[float, List[LayerGradient]]:
    """Loss and gradients of one mini-batch under cfg.loss."""
    batch = y.shape[1]
    if cfg.loss == "mse_normalized":
        xstar, cache = forward_with_cache(model, y, x0)
        diff = xstar - truth
        batch_loss = float(np.mean(np.sum(diff * diff, axis=0)))
        return batch_loss, backward(model, cache, 2.0 * diff / batch, cfg.straight_through)

    xstar, cache = forward_with_cache(model, y, x0, readouts=True)
    diffs = [x - truth for x in cache.readouts()] + [xstar - truth]
    scale = 1.0 / (batch * len(diffs))
    batch_loss = sum(float(np.sum(d * d)) for d in diffs) * scale
    grads = backward(
        model,
        cache,
        2.0 * scale * diffs[-1],
        cfg.straight_through,
        readout_upstreams=[2.0 * scale * d for d in diffs[:-1]],
    )
    return batch_loss, grads


def train(
    model: UnfoldedModel,
    dataset: Dataset,
    cfg: TrainConfig,
    adam: Optional[AdamState] = None,
) -> Tuple[UnfoldedModel, TrainHistory]:
    """
    Train all layers of a model jointly, in place.

    Args:
        model: Model to train (owned exclusively during training)
        dataset: Training data; its sensing matrix gives the start points
        cfg: Training schedule
        adam: Optimizer state (a fresh default state if None)

    Returns:
        (the trained model, per-epoch history)

    Raises:
        InvalidArgument: If dimensions or batch size do not fit the dataset
        Divergence: If the loss becomes non-finite or an estimate collapses
            to zero (the error carries the step and effective step size)
    """
    if (model.n, model.m) != (dataset.n, dataset.m):
        raise InvalidArgument(
            f"model is {model.n}x{model.m} but dataset is {dataset.n}x{dataset.m}"
        )
    adam = adam if adam is not None else AdamState()
    train_idx, val_idx = split_indices(len(dataset), cfg.validation_fraction, cfg.seed)
    if cfg.batch_size > len(train_idx):
        raise InvalidArgument(
            f"batch_size {cfg.batch_size} exceeds the {len(train_idx)} training samples"
        )

    y_all = dataset.measurements.signs
    x_all = dataset.signals.values
    x0_all = backprojection(dataset.phi, y_all)
    val_set = dataset.subset(val_idx) if len(val_idx) else None
    history = TrainHistory()
    log_every = max(1, cfg.epochs // 10)

    for epoch in range(cfg.epochs):
        order = substream(cfg.seed, Stream.SHUFFLE, epoch + 1).permutation(train_idx)
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            cols = order[start:start + cfg.batch_size]
            try:
                batch_loss, grads = _batch_step(
                    model, cfg, y_all[:, cols], x0_all[:, cols], x_all[:, cols]
                )
            except ZeroOutput as exc:
                raise Divergence(
                    step=adam.step, effective_lr=adam.effective_lr, reason=str(exc)
                ) from exc
            if not math.isfinite(batch_loss):
                raise Divergence(step=adam.step, effective_lr=adam.effective_lr)
            adam.apply(model, grads)
            total += batch_loss * len(cols)

        record = EpochRecord(
            step=adam.step,
            epoch=epoch,
            effective_lr=adam.effective_lr,
            train_loss=total / len(order),
        )
        if val_set is not None:
            record.val_nmse_db = mean_nmse_db(evaluate_model(model, val_set))
        history.records.append(record)

        if epoch % log_every == 0 or epoch == cfg.epochs - 1:
            logger.info(
                "epoch %d step %d lr %.3g loss %.5f val %.2f dB",
                epoch, record.step, record.effective_lr, record.train_loss, record.val_nmse_db,
            )
    return model, history
