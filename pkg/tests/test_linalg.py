import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlpdyn.errors import ConvergenceError, NumericalError, ShapeError
from mlpdyn.linalg import cosine_similarity, frobenius_norm, matmul, row_cosines, svd
import mlpdyn.linalg as linalg


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        m = np.arange(9.0).reshape(3, 3)
        np.testing.assert_array_equal(matmul(np.eye(3), m), m)

    def test_hand_checked(self):
        np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[0], [1]]), [[2], [4]])

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
        np.testing.assert_allclose(matmul(a, b), triple_loop(a, b), atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_rejects_non_finite(self):
        with pytest.raises(NumericalError):
            matmul([[np.nan]], [[1.0]])

    def test_associativity(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a, b, c = (rng.standard_normal((6, 6)) for _ in range(3))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            assert frobenius_norm(left - right) <= 1e-10 * frobenius_norm(left)


class TestCosine:
    def test_identical(self):
        assert cosine_similarity([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == pytest.approx(1.0)

    def test_antipodal(self):
        assert cosine_similarity([1.0, -2.0], [-1.0, 2.0]) == pytest.approx(-1.0)

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_zero_vector_convention(self):
        assert cosine_similarity([0.0, 0.0], [1.0, 2.0]) == 0.0
        assert cosine_similarity([1e-13, 0.0], [1.0, 2.0]) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            cosine_similarity([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_row_cosines_match_scalar(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal((10, 4)), rng.standard_normal((10, 4))
        a[3] = 0.0
        expected = [cosine_similarity(x, y) for x, y in zip(a, b)]
        np.testing.assert_allclose(row_cosines(a, b), expected, atol=1e-15)

    @given(st.lists(st.floats(-10, 10), min_size=3, max_size=3),
           st.lists(st.floats(-10, 10), min_size=3, max_size=3),
           st.floats(0.1, 10) | st.floats(-10, -0.1),
           st.floats(0.1, 10) | st.floats(-10, -0.1))
    def test_scale_invariance(self, u, v, alpha, beta):
        u, v = np.array(u), np.array(v)
        if np.linalg.norm(u) < 1e-3 or np.linalg.norm(v) < 1e-3:
            return
        scaled = cosine_similarity(alpha * u, beta * v)
        assert scaled == pytest.approx(np.sign(alpha * beta) * cosine_similarity(u, v), abs=1e-12)


class TestFrobenius:
    def test_values(self):
        assert frobenius_norm(np.zeros((3, 2))) == 0.0
        assert frobenius_norm(np.eye(2)) == pytest.approx(np.sqrt(2.0))
        assert frobenius_norm([[3.0, 4.0]]) == 5.0


def gram_eigen_oracle(m):
    """Singular values via power iteration with deflation on M^T M."""
    g = m.T @ m
    vals = []
    rng = np.random.default_rng(99)
    for _ in range(g.shape[0]):
        v = rng.standard_normal(g.shape[0])
        lam = 0.0
        for _ in range(5000):
            w = g @ v
            nrm = np.linalg.norm(w)
            if nrm == 0:
                break
            v = w / nrm
            new = v @ g @ v
            if abs(new - lam) <= 1e-15 * max(abs(new), 1.0):
                lam = new
                break
            lam = new
        vals.append(max(lam, 0.0))
        g = g - lam * np.outer(v, v)
    return np.sqrt(np.sort(vals)[::-1])


class TestSvd:
    def test_diagonal(self):
        res = svd(np.diag([3.0, 1.0]))
        np.testing.assert_allclose(res.S, [3.0, 1.0])

    def test_rank_one(self):
        u, v = np.array([1.0, 2.0, 2.0]), np.array([3.0, 4.0])
        res = svd(np.outer(u, v))
        np.testing.assert_allclose(res.S, [15.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(res.reconstruct(), np.outer(u, v), atol=1e-12)

    def test_random_6x4_against_gram_oracle(self):
        m = np.random.default_rng(3).standard_normal((6, 4))
        res = svd(m)
        assert frobenius_norm(res.reconstruct() - m) <= 1e-10 * frobenius_norm(m)
        np.testing.assert_allclose(res.S, gram_eigen_oracle(m), atol=1e-8)

    def test_zero_matrix(self):
        res = svd(np.zeros((3, 2)))
        np.testing.assert_array_equal(res.S, [0.0, 0.0])
        np.testing.assert_allclose(res.U.T @ res.U, np.eye(2), atol=1e-12)

    def test_sign_convention(self):
        res = svd(np.random.default_rng(4).standard_normal((5, 5)))
        for j in range(res.U.shape[1]):
            col = res.U[:, j]
            assert col[np.argmax(np.abs(col))] >= 0

    def test_invariants_on_many_random_shapes(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            r, c = rng.integers(1, 65, size=2)
            m = rng.standard_normal((r, c))
            if rng.random() < 0.2:
                m[:, : c // 2] = 0.0
            res = svd(m)
            k = min(r, c)
            assert res.U.shape == (r, k) and res.Vt.shape == (k, c)
            assert np.all(res.S >= 0) and np.all(np.diff(res.S) <= 0)
            np.testing.assert_allclose(res.U.T @ res.U, np.eye(k), atol=1e-10)
            np.testing.assert_allclose(res.Vt @ res.Vt.T, np.eye(k), atol=1e-10)
            assert frobenius_norm(res.reconstruct() - m) <= 1e-10 * max(frobenius_norm(m), 1.0)

    def test_wide_matrix(self):
        m = np.random.default_rng(6).standard_normal((3, 8))
        res = svd(m)
        np.testing.assert_allclose(res.reconstruct(), m, atol=1e-12)
        np.testing.assert_allclose(res.S, np.linalg.svd(m, compute_uv=False), atol=1e-12)

    def test_deterministic(self):
        m = np.random.default_rng(7).standard_normal((9, 7))
        a, b = svd(m), svd(m)
        assert a.U.tobytes() == b.U.tobytes() and a.S.tobytes() == b.S.tobytes()

    def test_iteration_cap_reports_residual(self, monkeypatch):
        monkeypatch.setattr(linalg, "JACOBI_MAX_SWEEPS", 1)
        with pytest.raises(ConvergenceError) as info:
            svd(np.random.default_rng(8).standard_normal((20, 20)))
        assert info.value.residual > linalg.JACOBI_TOL
        assert "1 sweeps" in str(info.value)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 10_000))
    def test_property_reconstruction(self, r, c, seed):
        m = np.random.default_rng(seed).standard_normal((r, c))
        res = svd(m)
        assert frobenius_norm(res.reconstruct() - m) <= 1e-10 * max(frobenius_norm(m), 1.0)
