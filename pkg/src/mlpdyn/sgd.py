"""Plain SGD and recording of per-sample weight changes."""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ShapeError
from .mlp import updated_running_stats


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    batch_size: int = 100
    epochs: int = 1
    shuffle_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError(f"learning rate must lie in (0, 1], got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


def sgd_step(params, grads, config, iteration=None, trace=None):
    """Return new params after ``W <- W - lr * mean_grad``.

    ``grads`` is a :class:`~mlpdyn.mlp.BackwardTrace` (or anything with
    ``weight_grads``/``scale_grads``/``shift_grads``). Passing the train-mode
    ``trace`` also folds its batch statistics into the running estimates.
    """
    lr = config.learning_rate
    new = params.copy()
    if len(grads.weight_grads) != len(params.weights):
        raise ShapeError("gradient list does not match the number of layers")
    for i, (w, g) in enumerate(zip(params.weights, grads.weight_grads)):
        if g.shape != w.shape:
            raise ShapeError(f"layer {i + 1}: gradient {g.shape} vs weight {w.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in layer {i + 1} at iteration {iteration}")
        new.weights[i] = w - lr * g
    for i, g in enumerate(grads.scale_grads):
        if not np.all(np.isfinite(g)) or not np.all(np.isfinite(grads.shift_grads[i])):
            raise NumericalError(
                f"non-finite batchnorm gradient in layer {i + 1} at iteration {iteration}")
        new.scale[i] = params.scale[i] - lr * g
        new.shift[i] = params.shift[i] - lr * grads.shift_grads[i]
    if trace is not None and params.running_mean:
        for i, (mu, std) in enumerate(zip(trace.batch_mean, trace.batch_std)):
            new.running_mean[i], new.running_var[i] = updated_running_stats(
                params.running_mean[i], params.running_var[i], mu, std)
    return new


@dataclass
class WeightChangeRecord:
    """Weight changes ``-lr * delta(x) F(l-1)(x)^T`` for tracked samples.

    ``per_sample[l]`` has shape (n_tracked, h, d); ``aggregate[l]`` is the sum
    over the whole batch, i.e. ``-lr * batch_size * mean_grad``.
    """

    epoch: int
    iteration: int
    sample_ids: np.ndarray
    per_sample: dict = field(default_factory=dict)
    aggregate: dict = field(default_factory=dict)


def per_sample_weight_change(trace, back, lr, layer, rows=None):
    """Stack of rank-1 changes for linear layer ``layer`` (1-based)."""
    delta = back.deltas[layer - 1]
    feats = trace.features[layer - 1]
    if rows is not None:
        delta = delta[rows]
        feats = feats[rows]
    return -lr * delta[:, :, None] * feats[:, None, :]


def record_weight_changes(trace, back, lr, tracked, layers, epoch=0, iteration=0,
                          sample_ids=None):
    """Per-sample and batch-aggregate weight changes.

    ``tracked`` are row positions inside the batch; ``sample_ids`` (defaults
    to ``tracked``) are stored alongside for bookkeeping.
    """
    rows = np.asarray(tracked, dtype=np.int64)
    if rows.size and (rows.min() < 0 or rows.max() >= trace.batch_size):
        raise IndexError("tracked rows must lie inside the batch")
    ids = rows if sample_ids is None else np.asarray(sample_ids)
    rec = WeightChangeRecord(epoch=epoch, iteration=iteration, sample_ids=ids)
    batch = trace.batch_size
    for layer in layers:
        rec.per_sample[layer] = per_sample_weight_change(trace, back, lr, layer, rows)
        rec.aggregate[layer] = -lr * batch * back.weight_grads[layer - 1]
    return rec
