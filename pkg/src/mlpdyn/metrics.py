"""Epoch-level diagnostics: similarity curves, alignment scores and phase detection."""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .linalg import cosine_similarity, row_cosines


@dataclass(frozen=True)
class SimilarityStat:
    mean: float
    std: float
    count: int


def _stat(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return SimilarityStat(float("nan"), float("nan"), 0)
    return SimilarityStat(float(values.mean()), float(values.std()), int(values.size))


def _choose(i, j, n_pairs, seed):
    if n_pairs is None or len(i) <= n_pairs:
        return i, j
    pick = np.sort(np.random.default_rng(seed).choice(len(i), size=n_pairs, replace=False))
    return i[pick], j[pick]


def cross_category_pairs(labels, n_pairs=500, seed=0):
    """Seeded pairs ``(i, j)``, ``i < j``, of samples with different labels."""
    y = np.asarray(labels)
    if np.unique(y).size < 2:
        raise ValueError("cross-category pairs need at least 2 categories")
    i, j = np.triu_indices(len(y), k=1)
    keep = y[i] != y[j]
    return _choose(i[keep], j[keep], n_pairs, seed)


def within_category_pairs(labels, n_pairs=500, seed=0):
    """Seeded pairs ``(i, j)``, ``i < j``, of samples sharing a label."""
    y = np.asarray(labels)
    i, j = np.triu_indices(len(y), k=1)
    keep = y[i] == y[j]
    if not np.any(keep):
        raise ValueError("within-category pairs need a category with at least 2 samples")
    return _choose(i[keep], j[keep], n_pairs, seed)


def _paired_cosines(vectors, pairs):
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2:
        raise ShapeError(f"expected one vector per row, got shape {v.shape}")
    i, j = pairs
    return row_cosines(v[i], v[j])


def feature_similarity_cross_category(features, labels, pairs=None, n_pairs=500, seed=0):
    """Mean/std cosine of ``F(l)`` between samples of different categories."""
    if pairs is None:
        pairs = cross_category_pairs(labels, n_pairs, seed)
    return _stat(_paired_cosines(features, pairs))


def gradient_similarity_within_category(feature_grads, labels, pairs=None, n_pairs=500, seed=0):
    """Mean/std cosine of ``dLoss/dF(l)`` between samples of the same category."""
    if pairs is None:
        pairs = within_category_pairs(labels, n_pairs, seed)
    return _stat(_paired_cosines(feature_grads, pairs))


def gating_similarity_within_category(gates, labels, pairs=None, n_pairs=500, seed=0):
    """Mean fraction of identical gate entries over same-category pairs."""
    g = np.asarray(gates)
    if pairs is None:
        pairs = within_category_pairs(labels, n_pairs, seed)
    i, j = pairs
    return _stat(np.mean(g[i] == g[j], axis=1))


def pseudoneuron_weight_change_similarity(delta_w, n_pairs=500, seed=0):
    """Cosine between pseudo-neurons (rows of ``dW^T``, i.e. columns of ``dW``)."""
    rows = np.asarray(delta_w, dtype=np.float64).T
    if rows.shape[0] < 2:
        raise ValueError("need at least 2 pseudo-neurons")
    i, j = np.triu_indices(rows.shape[0], k=1)
    i, j = _choose(i, j, n_pairs, seed)
    return _stat(row_cosines(rows[i], rows[j]))


def o_value(delta_v, f_prev, v, delta_f):
    """``cos(dV(x), F(l-1)(x)) * cos(V, dF(l-1)(x))``."""
    return cosine_similarity(delta_v, f_prev) * cosine_similarity(v, delta_f)


def o_values(delta_v, f_prev, v, delta_f):
    """Row-wise :func:`o_value` for per-sample arrays; ``v`` is shared."""
    delta_f = np.asarray(delta_f, dtype=np.float64)
    vv = np.broadcast_to(np.asarray(v, dtype=np.float64), delta_f.shape)
    return row_cosines(delta_v, f_prev) * row_cosines(vv, delta_f)


@dataclass(frozen=True)
class AlphaConsistency:
    sign: int
    fraction: float
    count: int


def alpha_consistency(cosines):
    """Majority sign of per-sample cosines and the fraction sharing it.

    Exact zeros are left out of both counts. Ties resolve to +1.
    """
    c = np.asarray(cosines, dtype=np.float64).ravel()
    pos = int(np.sum(c > 0))
    neg = int(np.sum(c < 0))
    total = pos + neg
    if total == 0:
        return AlphaConsistency(sign=1, fraction=float("nan"), count=0)
    sign = 1 if pos >= neg else -1
    return AlphaConsistency(sign=sign, fraction=max(pos, neg) / total, count=total)


def dominance_check(v, c, eps, gated_grad):
    """Magnitudes of the kept and ignored terms of the feature-alignment update.

    ``v`` (d,) and ``eps`` (d, h) come from ``W^T = V C^T + eps``; ``gated_grad``
    is ``D F_dot`` (h,) or a stack (n, h). Returns
    ``(|V^T V C^T D F_dot|, |V^T eps D F_dot|)``, averaged over rows for a stack.
    """
    v = np.asarray(v, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    g = np.atleast_2d(np.asarray(gated_grad, dtype=np.float64))
    kept = np.abs((v @ v) * (g @ c))
    ignored = np.abs(g @ (np.asarray(eps, dtype=np.float64).T @ v))
    return float(kept.mean()), float(ignored.mean())


def per_category_accuracy(predictions, labels, num_classes):
    """Accuracy per category present in ``labels``; absent categories are omitted."""
    pred = np.asarray(predictions)
    y = np.asarray(labels)
    if pred.shape != y.shape:
        raise ShapeError(f"{pred.shape} predictions for {y.shape} labels")
    out = {}
    for c in range(num_classes):
        mask = y == c
        if np.any(mask):
            out[c] = float(np.mean(pred[mask] == c))
    return out


PHASE_RULE = "ma5-maxdrop-2pct-plateau"


@dataclass
class PhaseReport:
    transition_epoch: int
    detected: bool
    smoothed: np.ndarray
    rule: str = PHASE_RULE


def detect_phase_transition(losses, window=5, threshold=0.02, plateau=0.5):
    """Locate the sudden loss drop that ends the initial plateau.

    The loss is smoothed with a centred moving average (only full windows).
    The candidate is the largest one-step decrease of the smoothed curve, and
    it counts as a transition when

    * it exceeds ``threshold`` times the total fall of the smoothed curve, and
    * the very first decrease is at most ``plateau`` times as large, i.e.
      training started on a plateau rather than dropping straight away.

    Ties in the largest decrease resolve to the middle of the first tied run.
    Epochs are indices into ``losses``; without a transition the last index
    is reported.
    """
    loss = np.asarray(losses, dtype=np.float64)
    if loss.ndim != 1 or loss.size < 10:
        raise ValueError("phase detection needs at least 10 epochs of loss")
    last = loss.size - 1
    half = window // 2
    smooth = np.convolve(loss, np.ones(window) / window, mode="valid")
    drops = smooth[:-1] - smooth[1:]
    scale = smooth[0] - smooth.min()
    best = float(drops.max())
    none = PhaseReport(transition_epoch=last, detected=False, smoothed=smooth)
    if scale <= 0.0 or best <= threshold * scale or drops[0] > plateau * best:
        return none
    # Drops equal up to rounding count as tied; shifting the loss by a large
    # constant adds rounding noise proportional to its magnitude.
    tol = 1e-12 * scale + 64 * np.finfo(float).eps * float(np.abs(smooth).max())
    first = int(np.argmax(drops >= best - tol))
    end = first
    while end + 1 < drops.size and drops[end + 1] >= best - tol:
        end += 1
    i = (first + end) // 2
    # drops[i] is the fall from smoothed epoch i + half into i + half + 1.
    return PhaseReport(transition_epoch=min(i + half + 1, last), detected=True, smoothed=smooth)
