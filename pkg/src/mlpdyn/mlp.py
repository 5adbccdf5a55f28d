"""Bias-free ReLU MLP with gating capture and per-sample feature gradients.

Layer numbering follows the analysis code: linear layers are ``l = 1..L``,
``F(0)`` is the input and ``F(l)`` the output of the ``l``-th activation.
Internally lists are 0-based, so ``weights[l - 1]`` is ``W(l)``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

NORM_EPS = 1e-5
BN_MOMENTUM = 0.9

ACTIVATIONS = ("relu", "leaky_relu")
NORMALIZATIONS = ("none", "norm1", "batchnorm")


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple
    activation: str = "relu"
    negative_slope: float = 0.1
    normalization: str = "none"
    init_seed: int = 0
    init_gain: float = float(np.sqrt(2.0))

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ValueError("an MLP needs at least 2 linear layers")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive: {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not 0.0 < self.negative_slope < 1.0:
            raise ValueError("leaky ReLU slope must lie in (0, 1)")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if not (np.isfinite(self.init_gain) and self.init_gain > 0):
            raise ValueError(f"init gain must be positive, got {self.init_gain}")

    @property
    def num_layers(self):
        return len(self.layer_widths) - 1

    @property
    def num_classes(self):
        return self.layer_widths[-1]

    @property
    def hidden_layers(self):
        return list(range(1, self.num_layers))

    @property
    def gate_floor(self):
        return self.negative_slope if self.activation == "leaky_relu" else 0.0


@dataclass
class MlpParams:
    weights: list
    scale: list = field(default_factory=list)
    shift: list = field(default_factory=list)
    running_mean: list = field(default_factory=list)
    running_var: list = field(default_factory=list)

    def copy(self):
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            scale=[s.copy() for s in self.scale],
            shift=[s.copy() for s in self.shift],
            running_mean=[m.copy() for m in self.running_mean],
            running_var=[v.copy() for v in self.running_var],
        )

    def weight(self, layer):
        return self.weights[layer - 1]


def init_params(spec):
    """Gaussian weights N(0, gain^2 / fan_in) drawn from ``spec.init_seed``.

    The default gain sqrt(2) is He initialisation.
    """
    rng = np.random.default_rng(spec.init_seed)
    widths = spec.layer_widths
    weights = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) * (spec.init_gain / np.sqrt(fan_in)))
    hidden = widths[1:-1]
    params = MlpParams(weights=weights)
    if spec.normalization != "none":
        params.running_mean = [np.zeros(h) for h in hidden]
        params.running_var = [np.ones(h) for h in hidden]
    if spec.normalization == "batchnorm":
        params.scale = [np.ones(h) for h in hidden]
        params.shift = [np.zeros(h) for h in hidden]
    return params


def apply_norm1(z, eps=NORM_EPS):
    """Standardise each column of ``z`` over the batch, no affine part.

    Returns the normalised values plus the batch mean and std (population
    variance, ``eps`` under the square root).
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] < 2:
        raise ValueError("batch statistics need at least 2 samples")
    mu = z.mean(axis=0)
    centred = z - mu
    std = np.sqrt((centred * centred).mean(axis=0) + eps)
    return centred / std, mu, std


def apply_batchnorm(z, scale, shift, mode="train", running_mean=None, running_var=None,
                    eps=NORM_EPS):
    """Batch normalisation; returns ``(out, normalized, mean, std)``.

    In train mode the statistics come from the batch; the caller folds them
    into the running estimates with :func:`updated_running_stats`. In eval
    mode ``running_mean``/``running_var`` are used.
    """
    z = np.asarray(z, dtype=np.float64)
    if mode == "train":
        xhat, mu, std = apply_norm1(z, eps)
    else:
        mu = running_mean
        std = np.sqrt(running_var + eps)
        xhat = (z - mu) / std
    return scale * xhat + shift, xhat, mu, std


def updated_running_stats(running_mean, running_var, batch_mean, batch_std, eps=NORM_EPS):
    batch_var = batch_std * batch_std - eps
    new_mean = BN_MOMENTUM * running_mean + (1.0 - BN_MOMENTUM) * batch_mean
    new_var = BN_MOMENTUM * running_var + (1.0 - BN_MOMENTUM) * batch_var
    return new_mean, new_var


def norm_backward(dxhat, xhat, std):
    """Gradient through ``(z - mean) / std`` with batch statistics.

    ``dxhat`` may carry any per-sample scaling; the map is linear so the
    scaling passes through unchanged.
    """
    m1 = dxhat.mean(axis=0)
    m2 = (dxhat * xhat).mean(axis=0)
    return (dxhat - m1 - xhat * m2) / std


@dataclass
class ForwardTrace:
    """Per-layer arrays for one batch, one row per sample.

    ``features[l]`` is F(l) for ``l = 0..L-1``; ``linear[l-1]`` is W(l) F(l-1);
    ``pre[l-1]`` is the activation input (after normalisation, if any) and
    ``gates[l-1]`` the diagonal of D(l), so ``features[l] == gates[l-1] * pre[l-1]``.
    """

    mode: str
    features: list
    linear: list
    pre: list
    gates: list
    normalized: list
    batch_mean: list
    batch_std: list
    logits: np.ndarray

    @property
    def batch_size(self):
        return self.logits.shape[0]

    def feature(self, layer):
        return self.features[layer]

    def gate(self, layer):
        return self.gates[layer - 1]


@dataclass
class BackwardTrace:
    """Gradients for one batch.

    ``feature_grads[l]`` is dLoss_x/dF(l) per sample (not divided by the batch
    size); ``deltas[l-1]`` is the same for the output of linear layer ``l``,
    equal to D(l) * feature_grads[l] without normalisation. ``weight_grads``
    are batch means, ready for an SGD step.
    """

    losses: np.ndarray
    feature_grads: list
    deltas: list
    weight_grads: list
    scale_grads: list
    shift_grads: list

    @property
    def loss(self):
        return float(self.losses.mean())

    def delta(self, layer):
        return self.deltas[layer - 1]

    def feature_grad(self, layer):
        return self.feature_grads[layer]


def _gates(spec, pre):
    # Gate is closed at exactly zero.
    return np.where(pre > 0.0, 1.0, spec.gate_floor)


def forward_batch(spec, params, inputs, mode="train"):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"expected a non-empty batch of vectors, got shape {x.shape}")
    if x.shape[1] != spec.layer_widths[0]:
        raise ShapeError(f"input dim {x.shape[1]} != {spec.layer_widths[0]}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', not {mode!r}")
    if mode == "train" and spec.normalization != "none" and x.shape[0] < 2:
        raise ValueError("normalisation in train mode needs a batch of at least 2")
    features = [x]
    linear, pre, gates, normalized, means, stds = [], [], [], [], [], []
    f = x
    for i in range(spec.num_layers - 1):
        z = f @ params.weights[i].T
        linear.append(z)
        if spec.normalization == "none":
            a = z
            normalized.append(None)
            means.append(None)
            stds.append(None)
        else:
            if spec.normalization == "batchnorm":
                a, xhat, mu, std = apply_batchnorm(
                    z, params.scale[i], params.shift[i], mode,
                    params.running_mean[i], params.running_var[i])
            elif mode == "train":
                xhat, mu, std = apply_norm1(z)
                a = xhat
            else:
                mu = params.running_mean[i]
                std = np.sqrt(params.running_var[i] + NORM_EPS)
                xhat = (z - mu) / std
                a = xhat
            normalized.append(xhat)
            means.append(mu)
            stds.append(std)
        d = _gates(spec, a)
        pre.append(a)
        gates.append(d)
        f = d * a
        features.append(f)
    logits = f @ params.weights[-1].T
    linear.append(logits)
    return ForwardTrace(mode, features, linear, pre, gates, normalized, means, stds, logits)


def softmax_cross_entropy(logits, labels):
    """Per-sample losses and dLoss/dlogits (softmax minus one-hot)."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(len(labels))
    losses = -logp[rows, labels]
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return losses, grad


def _check_labels(labels, num_classes, batch):
    y = np.asarray(labels)
    if y.shape != (batch,):
        raise ShapeError(f"expected {batch} labels, got shape {y.shape}")
    if np.any(y < 0) or np.any(y >= num_classes):
        bad = y[(y < 0) | (y >= num_classes)][0]
        raise ValueError(f"label {bad} outside [0, {num_classes})")
    return y.astype(np.int64)


def backward_batch(spec, params, trace, labels):
    """Backpropagate mean softmax cross-entropy through a train-mode trace."""
    batch = trace.batch_size
    y = _check_labels(labels, spec.num_classes, batch)
    losses, delta = softmax_cross_entropy(trace.logits, y)
    L = spec.num_layers
    deltas = [None] * L
    feature_grads = [None] * L
    weight_grads = [None] * L
    scale_grads = [None] * (L - 1) if spec.normalization == "batchnorm" else []
    shift_grads = [None] * (L - 1) if spec.normalization == "batchnorm" else []
    for i in range(L - 1, -1, -1):
        deltas[i] = delta
        weight_grads[i] = delta.T @ trace.features[i] / batch
        fdot = delta @ params.weights[i]
        feature_grads[i] = fdot
        if i == 0:
            break
        da = trace.gates[i - 1] * fdot
        if spec.normalization == "none":
            delta = da
            continue
        xhat = trace.normalized[i - 1]
        if spec.normalization == "batchnorm":
            scale_grads[i - 1] = (da * xhat).sum(axis=0) / batch
            shift_grads[i - 1] = da.sum(axis=0) / batch
            dxhat = da * params.scale[i - 1]
        else:
            dxhat = da
        if trace.mode == "train":
            delta = norm_backward(dxhat, xhat, trace.batch_std[i - 1])
        else:
            delta = dxhat / trace.batch_std[i - 1]
    return BackwardTrace(losses, feature_grads, deltas, weight_grads, scale_grads, shift_grads)


def batch_loss(spec, params, inputs, labels, mode="train"):
    trace = forward_batch(spec, params, inputs, mode)
    y = _check_labels(labels, spec.num_classes, trace.batch_size)
    losses, _ = softmax_cross_entropy(trace.logits, y)
    return float(losses.mean())


def predict(spec, params, inputs, chunk=4096):
    """Eval-mode argmax predictions."""
    x = np.asarray(inputs, dtype=np.float64)
    out = []
    for start in range(0, len(x), chunk):
        out.append(forward_batch(spec, params, x[start:start + chunk], "eval").logits.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
