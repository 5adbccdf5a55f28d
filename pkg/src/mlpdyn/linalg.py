"""Dense float64 helpers: products, norms, cosines and a one-sided Jacobi SVD.

Matrices and vectors are plain ``numpy.ndarray`` objects in float64.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, NumericalError, ShapeError

COSINE_EPS = 1e-12
JACOBI_MAX_SWEEPS = 100
JACOBI_TOL = 1e-12


def as_matrix(m, name="matrix"):
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{name} has non-finite entries")
    return a


def as_vector(v, name="vector"):
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{name} has non-finite entries")
    return a


def matmul(a, b):
    """Matrix product with an explicit shape check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius_norm(m):
    a = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


def cosine_similarity(u, v):
    """Cosine of the angle between ``u`` and ``v``.

    Returns 0 when either vector has norm below ``COSINE_EPS``; a dead-ReLU
    sample then contributes a neutral value instead of NaN.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ShapeError(f"cosine of vectors with dims {u.size} and {v.size}")
    # Work on copies scaled by their largest entry: no overflow in the norms,
    # and dividing by sqrt(uu * vv) makes identical inputs give exactly 1.
    su, sv = np.abs(u).max(initial=0.0), np.abs(v).max(initial=0.0)
    if su == 0.0 or sv == 0.0:
        return 0.0
    u, v = u / su, v / sv
    if su * np.sqrt(u @ u) < COSINE_EPS or sv * np.sqrt(v @ v) < COSINE_EPS:
        return 0.0
    c = float((u @ v) / np.sqrt((u @ u) * (v @ v)))
    return min(1.0, max(-1.0, c))


def row_cosines(a, b):
    """Row-wise cosine between equally shaped 2-D arrays, same zero convention."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"row cosines of {a.shape} and {b.shape}")
    sa = np.abs(a).max(axis=1, initial=0.0)
    sb = np.abs(b).max(axis=1, initial=0.0)
    a = a / np.where(sa > 0, sa, 1.0)[:, None]
    b = b / np.where(sb > 0, sb, 1.0)[:, None]
    aa, bb = np.sum(a * a, axis=1), np.sum(b * b, axis=1)
    dead = (sa * np.sqrt(aa) < COSINE_EPS) | (sb * np.sqrt(bb) < COSINE_EPS)
    denom = np.where(dead, 1.0, np.sqrt(aa * bb))
    c = np.sum(a * b, axis=1) / denom
    c[dead] = 0.0
    return np.clip(c, -1.0, 1.0)


@dataclass(frozen=True)
class SvdResult:
    U: np.ndarray
    S: np.ndarray
    Vt: np.ndarray

    def reconstruct(self):
        return (self.U * self.S) @ self.Vt


def _round_robin(n):
    """Pairings for a cyclic tournament over ``n`` (even) players.

    Each round pairs every index once, so the rotations inside a round touch
    disjoint columns and can be applied together.
    """
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _complete_basis(u, m):
    """Extend orthonormal columns ``u`` (m x r) to m x k with Gram-Schmidt on e_j."""
    cols = [u[:, j] for j in range(u.shape[1])]
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        for _ in range(2):
            for c in cols:
                e -= (c @ e) * c
        nrm = np.sqrt(e @ e)
        if nrm > 1e-3:
            cols.append(e / nrm)
    return np.column_stack(cols) if cols else np.zeros((m, 0))


def _jacobi_columns(a):
    """One-sided Jacobi on a tall matrix; returns (A V, V) with orthogonal columns."""
    m, n = a.shape
    work = a.copy()
    v = np.eye(n)
    if n < 2:
        return work, v
    padded = n + (n % 2)
    if padded != n:
        work = np.hstack([work, np.zeros((m, 1))])
        v = np.pad(v, ((0, 1), (0, 1)))
    schedule = _round_robin(padded)
    # Columns below the rank threshold hold rounding noise whose direction
    # never settles; they count as zero.
    floor = (np.finfo(float).eps * max(m, n) * np.sqrt(np.sum(a * a))) ** 2
    off = np.inf
    for _ in range(JACOBI_MAX_SWEEPS):
        off = 0.0
        for p, q in schedule:
            ap = work[:, p]
            aq = work[:, q]
            alpha = np.sum(ap * ap, axis=0)
            beta = np.sum(aq * aq, axis=0)
            gamma = np.sum(ap * aq, axis=0)
            scale = np.sqrt(alpha * beta)
            live = (alpha > floor) & (beta > floor)
            rel = np.zeros_like(gamma)
            rel[live] = np.abs(gamma[live]) / scale[live]
            if rel.size:
                off = max(off, float(rel.max()))
            rot = rel > JACOBI_TOL
            if not np.any(rot):
                continue
            p, q = p[rot], q[rot]
            alpha, beta, gamma = alpha[rot], beta[rot], gamma[rot]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            ap = work[:, p]
            aq = work[:, q]
            work[:, p] = c * ap - s * aq
            work[:, q] = s * ap + c * aq
            vp = v[:, p]
            vq = v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if off <= JACOBI_TOL:
            return work[:, :n], v[:n, :n]
    raise ConvergenceError(
        f"Jacobi SVD did not converge in {JACOBI_MAX_SWEEPS} sweeps "
        f"(max relative off-diagonal {off:.3e})",
        residual=off,
    )


def svd(m):
    """Thin SVD by one-sided Jacobi rotations.

    Parameters
    ----------
    m : array_like, shape (r, c)

    Returns
    -------
    SvdResult
        ``U`` is r x k, ``S`` has k = min(r, c) descending entries and ``Vt``
        is k x c. Each column of ``U`` has its largest-magnitude entry
        non-negative, which pins the otherwise arbitrary signs.
    """
    a = as_matrix(m)
    rows, cols = a.shape
    transposed = rows < cols
    if transposed:
        a = a.T
    mrows, n = a.shape
    if n == 0:
        return SvdResult(np.zeros((rows, 0)), np.zeros(0), np.zeros((0, cols)))
    av, v = _jacobi_columns(a)
    s = np.sqrt(np.sum(av * av, axis=0))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    av = av[:, order]
    v = v[:, order]
    # Same cut-off as the zero-column test inside the rotations.
    tiny = np.finfo(float).eps * max(mrows, n) * np.sqrt(np.sum(a * a))
    rank = int(np.sum(s > tiny))
    u = av[:, :rank] / s[:rank]
    if rank < n:
        u = _complete_basis(u, mrows)[:, :n]
        s[rank:] = 0.0
    if transposed:
        u, v = v, u
    # Sign convention on the left vectors of the original matrix.
    lead = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[lead, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    u = u * signs
    v = v * signs
    return SvdResult(U=u, S=s, Vt=v.T)
