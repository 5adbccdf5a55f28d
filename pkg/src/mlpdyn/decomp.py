"""Common-direction analysis of weight changes.

Shapes follow the weight layout ``W(l)`` in R^{h x d}: a common direction
``C`` lives in R^h (the output side of the layer) and coefficient vectors
``V``/``dV`` live in R^d, one entry per pseudo-neuron (row of ``W^T``).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .linalg import frobenius_norm, svd


def _check_direction(c, h):
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (h,):
        raise ShapeError(f"direction has shape {c.shape}, expected ({h},)")
    cc = float(c @ c)
    if cc <= 0.0:
        raise ValueError("common direction must be non-zero")
    return c, cc


@dataclass(frozen=True)
class Projection:
    """``M^T = coeffs C^T + residual`` with ``residual @ C == 0``."""

    coeffs: np.ndarray
    residual: np.ndarray
    direction: np.ndarray

    def reconstruct_transpose(self):
        return np.outer(self.coeffs, self.direction) + self.residual


def _project(m, c):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {m.shape}")
    c, cc = _check_direction(c, m.shape[0])
    mt = m.T
    coeffs = mt @ c / cc
    residual = mt - np.outer(coeffs, c)
    return Projection(coeffs=coeffs, residual=residual, direction=c)


def project_lemma1(delta_w, c):
    """Split a weight change ``dW`` (h x d) along ``C``: ``dW^T = dV C^T + d_eps``.

    ``dV = dW^T C / C^T C`` is the least-squares coefficient, so the residual
    is orthogonal to ``C`` and has the smallest possible Frobenius norm.
    """
    return _project(delta_w, c)


def project_lemma2(w, c):
    """Same split for a weight matrix: ``W^T = V C^T + eps``."""
    return _project(w, c)


def project_many(stack, c):
    """Coefficients of a stack (n, h, d) along ``C``; returns (n, d)."""
    stack = np.asarray(stack, dtype=np.float64)
    c, cc = _check_direction(c, stack.shape[1])
    return np.einsum("nhd,h->nd", stack, c) / cc


@dataclass(frozen=True)
class CommonDirection:
    layer: int
    vector: np.ndarray
    window: tuple = (None, None)


def _as_stack(records):
    if isinstance(records, np.ndarray):
        stack = np.asarray(records, dtype=np.float64)
        if stack.ndim == 2:
            stack = stack[None]
    else:
        mats = [np.asarray(r, dtype=np.float64) for r in records]
        if not mats:
            raise ValueError("need at least one weight-change record")
        shape = mats[0].shape
        for r in mats:
            if r.shape != shape:
                raise ShapeError(f"records have mixed shapes {shape} and {r.shape}")
        stack = np.stack(mats)
    if stack.ndim != 3 or stack.shape[0] == 0:
        raise ValueError("need at least one weight-change record")
    return stack


def fix_sign(v):
    """Flip ``v`` so its largest-magnitude entry is non-negative."""
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def gram(records):
    """Sum of ``dW dW^T`` over records, an h x h matrix."""
    stack = _as_stack(records)
    flat = stack.transpose(1, 0, 2).reshape(stack.shape[1], -1)
    return flat @ flat.T


def residual_objective(records, c):
    """Sum over records of ``||dW^T - dW^T C C^T / C^T C||_F^2``."""
    stack = _as_stack(records)
    c, cc = _check_direction(c, stack.shape[1])
    coeffs = np.einsum("nhd,h->nd", stack, c) / cc
    resid = stack - c[None, :, None] * coeffs[:, None, :]
    return float(np.sum(resid * resid))


def estimate_common_direction(records, layer=0, window=(None, None)):
    """Direction minimising the summed residual of rank-1 fits along it.

    The objective equals ``sum ||dW||^2 - C^T M C`` for unit ``C`` with
    ``M = sum dW dW^T``, so the minimiser is the top eigenvector of ``M``.
    """
    return direction_from_gram(gram(records), layer, window)


def direction_from_gram(m, layer=0, window=(None, None)):
    """Top eigenvector of a summed Gram matrix ``sum dW dW^T``."""
    m = np.asarray(m, dtype=np.float64)
    if not np.any(m):
        raise ValueError("all weight-change records are zero")
    _, vecs = np.linalg.eigh(m)
    c = fix_sign(vecs[:, -1])
    return CommonDirection(layer=layer, vector=c / np.linalg.norm(c), window=window)


def rank1_gram(cols, rows, scale=1.0):
    """``sum_x dW(x) dW(x)^T`` for rank-1 records ``dW(x) = scale * cols[x] rows[x]^T``."""
    cols = np.asarray(cols, dtype=np.float64)
    w = scale * scale * np.sum(np.asarray(rows, dtype=np.float64) ** 2, axis=1)
    return (cols * w[:, None]).T @ cols


@dataclass
class DirectionBasis:
    """Orthonormal directions ``C_1..C_k`` and per-record coefficients.

    ``directions`` has shape (k, h), ``coeffs`` (k, n, d) and ``residual``
    (n, h, d) is what remains after removing all k components.
    """

    directions: np.ndarray
    coeffs: np.ndarray
    residual: np.ndarray
    requested: int = 0
    layer: int = 0
    window: tuple = field(default=(None, None))

    @property
    def k(self):
        return self.directions.shape[0]

    def strengths(self):
        """``s_i`` per record, shape (k, n)."""
        return np.sqrt(np.sum(self.coeffs * self.coeffs, axis=2))

    def reconstruct(self, upto=None):
        """Records rebuilt from the first ``upto`` directions (all by default)
        plus the final residual; with ``upto < k`` the dropped components are
        simply absent."""
        upto = self.k if upto is None else upto
        out = self.residual.copy()
        for i in range(min(upto, self.k)):
            out = out + self.directions[i][None, :, None] * self.coeffs[i][:, None, :]
        return out


DEGENERATE_REL = 1e-10


def deflate_directions(records, k, layer=0, window=(None, None)):
    """Recursive estimation: estimate ``C_i``, strip its component, repeat.

    Stops early (fewer than ``k`` directions) once the remaining records are
    numerically zero relative to the input.
    """
    stack = _as_stack(records).copy()
    h = stack.shape[1]
    if k > h:
        raise ValueError(f"cannot extract {k} directions from width {h}")
    total = float(np.sum(stack * stack))
    if total == 0.0:
        raise ValueError("all weight-change records are zero")
    dirs, coeffs = [], []
    for _ in range(k):
        left = float(np.sum(stack * stack))
        if left <= (DEGENERATE_REL ** 2) * total:
            break
        c = estimate_common_direction(stack).vector
        dv = np.einsum("nhd,h->nd", stack, c)
        stack = stack - c[None, :, None] * dv[:, None, :]
        dirs.append(c)
        coeffs.append(dv)
    n, _, d = stack.shape
    return DirectionBasis(
        directions=np.array(dirs).reshape(len(dirs), h),
        coeffs=np.array(coeffs).reshape(len(dirs), n, d),
        residual=stack,
        requested=k,
        layer=layer,
        window=window,
    )


def direction_strength(c, dv):
    """``||C dV^T||_F``; for unit ``C`` this is ``||dV||``."""
    return frobenius_norm(np.outer(c, dv))


@dataclass
class SampleDecomposition:
    """Terms of one sample's weight change at layer ``l``.

    ``primary`` is the part carried by the next layer's common direction;
    ``terms[i]`` the part carried by the i-th singular component of the next
    layer's residual weights.
    """

    primary: np.ndarray
    terms: list
    primary_strength: float
    term_strengths: np.ndarray
    reconstruction_error: float
    max_orthogonality: float


@dataclass
class _NextLayer:
    direction: np.ndarray
    cc: float
    coeffs: np.ndarray       # V, shape (h,)
    residual: np.ndarray     # eps, shape (h, h')
    svd: object


def next_layer_split(w_next, c_next):
    """Lemma-2 split of ``W(l+1)`` plus the SVD of its residual."""
    proj = project_lemma2(w_next, c_next)
    return _NextLayer(
        direction=proj.direction,
        cc=float(proj.direction @ proj.direction),
        coeffs=proj.coeffs,
        residual=proj.residual,
        svd=svd(proj.residual),
    )


def _decomp_parts(split, delta_w_next, f_l, gate_l):
    f_l = np.asarray(f_l, dtype=np.float64)
    nf2 = float(f_l @ f_l)
    if nf2 <= 0.0:
        raise ValueError("feature F(l) has zero norm; sample carries no decomposition")
    dproj = project_lemma1(delta_w_next, split.direction)
    gate_l = np.asarray(gate_l, dtype=np.float64)
    # gamma(x) = D V C^T C dV^T F / ||F||^2, an h-vector.
    gamma = gate_l * split.coeffs * split.cc * float(dproj.coeffs @ f_l) / nf2
    # d_eps^T F, projected on each right singular vector.
    r = dproj.residual.T @ f_l
    weights = split.svd.S * (split.svd.Vt @ r) / nf2
    return gamma, weights, nf2


def theorem1_decompose(delta_w, w_next, c_next, delta_w_next, f_l, f_prev, gate_l,
                       split=None):
    """Decompose ``dW(l)(x)`` into a primary term plus one term per singular
    component of the next layer's residual weights.

    Parameters
    ----------
    delta_w : (h, d) weight change of layer l made by sample x.
    w_next : (h', h) weights of layer l+1.
    c_next : (h',) common direction of layer l+1.
    delta_w_next : (h', h) weight change of layer l+1 made by x.
    f_l, f_prev : features F(l)(x) (h,) and F(l-1)(x) (d,).
    gate_l : (h,) diagonal of D(l)(x).
    split : optional precomputed :func:`next_layer_split` result.
    """
    if split is None:
        split = next_layer_split(w_next, c_next)
    f_prev = np.asarray(f_prev, dtype=np.float64)
    gamma, weights, _ = _decomp_parts(split, delta_w_next, f_l, gate_l)
    gate_l = np.asarray(gate_l, dtype=np.float64)
    primary = np.outer(gamma, f_prev)
    du = gate_l[:, None] * split.svd.U
    terms = [np.outer(weights[i] * du[:, i], f_prev) for i in range(len(weights))]
    total = primary + (np.sum(terms, axis=0) if terms else 0.0)
    dw = np.asarray(delta_w, dtype=np.float64)
    denom = frobenius_norm(dw)
    err = frobenius_norm(dw - total) / denom if denom > 0 else frobenius_norm(total)
    return SampleDecomposition(
        primary=primary,
        terms=terms,
        primary_strength=frobenius_norm(primary),
        term_strengths=np.array([frobenius_norm(t) for t in terms]),
        reconstruction_error=err,
        max_orthogonality=component_orthogonality(split),
    )


def component_orthogonality(split):
    """Largest ``|v_i^T C| / ||C||`` over residual components with non-zero
    singular value; these components never carry the common direction."""
    s = split.svd.S
    if s.size == 0 or s[0] == 0.0:
        return 0.0
    live = s > s[0] * 1e-10
    dots = np.abs(split.svd.Vt[live] @ split.direction) / np.sqrt(split.cc)
    return float(dots.max()) if dots.size else 0.0


def theorem1_strengths(split, delta_w_next, f_l, f_prev, gate_l, k=None):
    """Frobenius norms of the primary term and the first ``k`` component terms
    without materialising the matrices."""
    gamma, weights, _ = _decomp_parts(split, delta_w_next, f_l, gate_l)
    nprev = float(np.linalg.norm(f_prev))
    gate_l = np.asarray(gate_l, dtype=np.float64)
    k = len(weights) if k is None else min(k, len(weights))
    col = np.linalg.norm(gate_l[:, None] * split.svd.U[:, :k], axis=0)
    return float(np.linalg.norm(gamma) * nprev), np.abs(weights[:k]) * col * nprev


def gamma_epsilon_split(w_next, c_next, delta_w_next, f_l, f_prev, gate_l, split=None):
    """Return ``(gamma, eps_term)`` with ``dW(l)(x) = gamma F(l-1)^T + eps_term``.

    ``gamma`` is an h-vector (the column factor of a rank-1 matrix) and
    ``eps_term`` is the h x d matrix ``D eps d_eps^T F F(l-1)^T / ||F||^2``.
    """
    if split is None:
        split = next_layer_split(w_next, c_next)
    gamma, _, nf2 = _decomp_parts(split, delta_w_next, f_l, gate_l)
    dproj = project_lemma1(delta_w_next, split.direction)
    f_l = np.asarray(f_l, dtype=np.float64)
    col = np.asarray(gate_l, dtype=np.float64) * (split.residual @ (dproj.residual.T @ f_l)) / nf2
    return gamma, np.outer(col, np.asarray(f_prev, dtype=np.float64))


def chain_weight_change(gate_l, w_next, delta_w_next, f_l, f_prev):
    """``D W(l+1)^T dW(l+1)(x) F F(l-1)^T / ||F||^2``, the backprop identity
    that ties a sample's weight change at layer l to the one at layer l+1."""
    f_l = np.asarray(f_l, dtype=np.float64)
    col = np.asarray(gate_l) * (np.asarray(w_next).T @ (np.asarray(delta_w_next) @ f_l))
    return np.outer(col / float(f_l @ f_l), f_prev)


@dataclass
class StrengthStats:
    primary_mean: float
    primary_std: float
    term_mean: np.ndarray
    term_std: np.ndarray
    count: int


def strength_statistics(primary, terms):
    """Mean and population std of strengths pooled over epochs and samples.

    ``primary`` is a 1-D array of ``||dW_primary||_F`` values and ``terms`` an
    (n, k) array of component strengths for the same records.
    """
    primary = np.asarray(primary, dtype=np.float64).ravel()
    if primary.size == 0:
        raise ValueError("no decompositions to summarise")
    terms = np.asarray(terms, dtype=np.float64).reshape(primary.size, -1)
    return StrengthStats(
        primary_mean=float(primary.mean()),
        primary_std=float(primary.std()),
        term_mean=terms.mean(axis=0),
        term_std=terms.std(axis=0),
        count=int(primary.size),
    )
