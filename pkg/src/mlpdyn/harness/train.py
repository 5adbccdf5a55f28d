"""Training loop with per-epoch instrumentation.

Epochs are 0-based: "epoch t" is the t-th pass over the training set and
every per-epoch quantity is measured on the parameters at its end.

Run directory layout::

    config.txt            effective configuration
    tracked.npz           tracked sample ids, labels and inputs
    train_log.csv         one row per epoch: losses and per-category accuracy
    checkpoints/ckpt_NNNN.mlpd   state after NNNN completed epochs
    records/epoch_NNNN.npz       probe pass on the tracked samples
"""

import csv
import logging
from pathlib import Path

import numpy as np

from ..data import BatchPlan, batches, load_cifar10_bin, load_mnist_idx, mnist_paths
from ..data import synth_blobs
from ..errors import DataError, NumericalError
from ..metrics import per_category_accuracy
from ..mlp import backward_batch, forward_batch, init_params, predict, softmax_cross_entropy
from ..sgd import sgd_step
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig

log = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 7919


def fmt(x):
    """17 significant digits; NaN becomes an empty field."""
    x = float(x)
    return "" if np.isnan(x) else f"{x:.17g}"


def load_datasets(config: ExperimentConfig):
    """``(train, eval)`` datasets for a config; ``eval`` is None when MNIST
    test files are absent."""
    if config.dataset == "synth":
        args = (config.synth_classes, config.synth_dim)
        train = synth_blobs(*args, config.synth_per_class, config.synth_spread,
                            config.synth_seed, name="blobs-train")
        held = synth_blobs(*args, config.synth_eval_per_class, config.synth_spread,
                           config.synth_seed, noise_seed=config.synth_seed + EVAL_SEED_OFFSET,
                           name="blobs-eval")
        return train, held
    root = Path(config.resolved_data_dir())
    if config.dataset == "mnist":
        for p in mnist_paths(root, "train"):
            if not p.exists():
                raise DataError(f"missing MNIST file {p}")
        train = load_mnist_idx(*mnist_paths(root, "train"), limit=config.train_limit)
        test_paths = mnist_paths(root, "test")
        if not all(p.exists() for p in test_paths):
            log.warning("no MNIST test files in %s; eval columns stay empty", root)
            return train, None
        return train, load_mnist_idx(*test_paths, name="mnist-test")
    base = root / "cifar-10-batches-bin"
    names = [base / f"data_batch_{i}.bin" for i in range(1, 6)]
    for p in names + [base / "test_batch.bin"]:
        if not p.exists():
            raise DataError(f"missing CIFAR-10 file {p}")
    train = load_cifar10_bin(names, limit=config.train_limit)
    return train, load_cifar10_bin([base / "test_batch.bin"], name="cifar10-test")


def select_tracked(labels, per_class, seed, num_classes):
    """Seeded choice of ``per_class`` sample ids per category, sorted."""
    rng = np.random.default_rng(seed)
    picked = []
    for c in range(num_classes):
        ids = np.flatnonzero(labels == c)
        if ids.size < per_class:
            raise DataError(f"category {c} has {ids.size} samples, {per_class} requested")
        picked.append(np.sort(rng.choice(ids, size=per_class, replace=False)))
    return np.concatenate(picked)


def mean_loss(spec, params, data, chunk=2048):
    total = 0.0
    for start in range(0, len(data), chunk):
        x = data.inputs[start:start + chunk]
        trace = forward_batch(spec, params, x, "eval")
        losses, _ = softmax_cross_entropy(trace.logits, data.labels[start:start + chunk])
        total += float(losses.sum())
    return total / len(data)


def probe(spec, params, inputs, labels):
    """Train-mode forward/backward pass over the tracked samples."""
    trace = forward_batch(spec, params, inputs, "train")
    back = backward_batch(spec, params, trace, labels)
    return trace, back


def save_record(path, epoch, trace, back, aggregate):
    arrays = {"epoch": np.array(epoch)}
    for l in range(1, len(trace.features)):
        arrays[f"F{l}"] = trace.features[l]
        arrays[f"open{l}"] = trace.gates[l - 1] == 1.0
        arrays[f"Fdot{l}"] = back.feature_grads[l]
    for l in range(1, len(back.deltas) + 1):
        arrays[f"delta{l}"] = back.deltas[l - 1]
        arrays[f"dW{l}"] = aggregate[l - 1]
    arrays["losses"] = back.losses
    np.savez(path, **arrays)


def log_header(num_classes):
    return ["epoch", "train_loss", "eval_loss", "eval_accuracy"] + [
        f"train_acc_c{c}" for c in range(num_classes)]


def _read_log_rows(path, before):
    if not path.exists():
        return []
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [r for r in rows if int(r[0]) < before]


def ckpt_path(run_dir, completed):
    return Path(run_dir) / "checkpoints" / f"ckpt_{completed:04d}.mlpd"


def run_train(config: ExperimentConfig, resume=None):
    """Train per ``config``; ``resume`` is a checkpoint path to continue from.

    Returns the run directory.
    """
    run_dir = Path(config.output_dir)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (run_dir / "records").mkdir(exist_ok=True)
    (run_dir / "config.txt").write_text(config.to_text())

    train, held = load_datasets(config)
    spec = config.mlp_spec()
    if train.dim != spec.layer_widths[0]:
        raise DataError(f"dataset dim {train.dim} does not match input width {spec.layer_widths[0]}")
    sgd = config.sgd_config()
    if spec.normalization != "none" and len(train) % sgd.batch_size == 1:
        raise ValueError("the last batch would hold a single sample, which normalisation rejects")

    tracked = select_tracked(train.labels, config.tracked_per_class, config.seed,
                             train.num_classes)
    t_inputs = train.inputs[tracked]
    t_labels = train.labels[tracked]
    np.savez(run_dir / "tracked.npz", ids=tracked, labels=t_labels, inputs=t_inputs)

    if resume is None:
        params = init_params(spec)
        start = 0
        plan = BatchPlan(len(train), sgd.batch_size, sgd.shuffle_seed)
    else:
        ckpt = load_checkpoint(resume)
        if ckpt.spec != spec:
            raise DataError(f"{resume}: checkpoint architecture differs from the config")
        params, start = ckpt.params, ckpt.epoch
        plan = BatchPlan(len(train), sgd.batch_size, sgd.shuffle_seed, start, ckpt.rng_state)

    log_path = run_dir / "train_log.csv"
    rows = _read_log_rows(log_path, start)
    iteration = start * -(-len(train) // sgd.batch_size)

    for epoch in range(start, sgd.epochs):
        w_start = [w.copy() for w in params.weights]
        loss_sum = 0.0
        for idx in batches(train, plan, epoch):
            trace = forward_batch(spec, params, train.inputs[idx], "train")
            back = backward_batch(spec, params, trace, train.labels[idx])
            if not np.isfinite(back.loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, iteration {iteration}")
            params = sgd_step(params, back, sgd, iteration, trace)
            loss_sum += float(back.losses.sum())
            iteration += 1
        train_loss = loss_sum / len(train)
        eval_loss = eval_acc = float("nan")
        if held is not None:
            eval_loss = mean_loss(spec, params, held)
            eval_acc = float(np.mean(predict(spec, params, held.inputs) == held.labels))
        accs = per_category_accuracy(predict(spec, params, train.inputs), train.labels,
                                     train.num_classes)
        rows.append([str(epoch), fmt(train_loss), fmt(eval_loss), fmt(eval_acc)] + [
            fmt(accs.get(c, float("nan"))) for c in range(train.num_classes)])
        log.info("epoch %d train loss %.4f eval acc %.3f", epoch, train_loss, eval_acc)

        if epoch % config.cadence == 0 or epoch == sgd.epochs - 1:
            trace, back = probe(spec, params, t_inputs, t_labels)
            aggregate = [w - w0 for w, w0 in zip(params.weights, w_start)]
            save_record(run_dir / "records" / f"epoch_{epoch:04d}.npz", epoch, trace, back,
                        aggregate)
            save_checkpoint(ckpt_path(run_dir, epoch + 1),
                            Checkpoint(spec, params, epoch + 1, plan.state_before(epoch + 1)))
        with log_path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(log_header(train.num_classes))
            writer.writerows(rows)
    return run_dir


def latest_checkpoint(run_dir):
    found = sorted((Path(run_dir) / "checkpoints").glob("ckpt_*.mlpd"))
    return found[-1] if found else None
