import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import unitary_group

from qpskbf.linalg import (ConvergenceError, HermitianMatrix, LinalgError, SingularMatrixError,
                           hermitian_eigenvalues, loaded_solve, quadratic_form)

from conftest import random_psd


class TestHermitianMatrix:
    def test_symmetrizes_and_zeroes_diagonal_imag(self):
        m = np.array([[1 + 1e-13j, 2 - 1j], [2 + 1j + 1e-13, 3]])
        h = HermitianMatrix(m)
        assert h.array[0, 0].imag == 0.0
        assert np.array_equal(h.array, h.array.conj().T)

    def test_rejects_asymmetric(self):
        with pytest.raises(LinalgError, match="not Hermitian"):
            HermitianMatrix([[1, 2], [3, 1]])

    def test_rejects_complex_diagonal(self):
        with pytest.raises(LinalgError):
            HermitianMatrix([[1 + 1e-6j, 0], [0, 1]])

    def test_rejects_nonfinite_and_nonsquare(self):
        with pytest.raises(LinalgError):
            HermitianMatrix([[np.nan, 0], [0, 1]])
        with pytest.raises(LinalgError):
            HermitianMatrix(np.ones((2, 3)))

    def test_read_only(self):
        h = HermitianMatrix.identity(2)
        with pytest.raises(ValueError):
            h.array[0, 0] = 5

    def test_large_scale_roundoff_accepted(self, rng):
        # jammer-dominated covariances carry entries ~1e7; relative round-off must pass
        x = 1e3 * (rng.standard_normal((64, 6)) + 1j * rng.standard_normal((64, 6)))
        m = x.T @ x.conj() / 64
        m[0, 1] += 1e-9
        HermitianMatrix(m)


class TestQuadraticForm:
    def test_identity(self):
        assert quadratic_form(HermitianMatrix.identity(2), [1, 0]) == 1.0

    def test_unit_norm_vector(self):
        w = [(1 + 1j) / 2, (1 - 1j) / 2]
        assert quadratic_form(HermitianMatrix.identity(2), w) == pytest.approx(1.0, abs=1e-15)

    def test_rank_one(self):
        x = np.array([1, 1j])
        assert quadratic_form(HermitianMatrix(np.outer(x, x.conj())), [1, 0]) == pytest.approx(1.0)

    def test_matches_double_loop(self, rng):
        for n in (1, 2, 5, 16):
            a = random_psd(rng, n)
            w = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            ref = sum(np.conj(w[i]) * a.array[i, j] * w[j] for i in range(n) for j in range(n))
            assert quadratic_form(a, w) == pytest.approx(ref.real, rel=1e-10)

    def test_psd_nonnegative(self, rng):
        a = random_psd(rng, 6, rank=2)
        for _ in range(50):
            w = rng.standard_normal(6) + 1j * rng.standard_normal(6)
            assert quadratic_form(a, w) >= -1e-9 * a.trace()

    def test_errors(self):
        with pytest.raises(LinalgError, match="dimension"):
            quadratic_form(HermitianMatrix.identity(2), [1, 0, 0])
        with pytest.raises(LinalgError):
            quadratic_form(HermitianMatrix.identity(2), [np.inf, 0])


class TestLoadedSolve:
    def test_identity(self):
        np.testing.assert_allclose(loaded_solve(HermitianMatrix.identity(2), [2, 0], 0.0), [2, 0])

    def test_loading_only(self):
        np.testing.assert_allclose(loaded_solve(HermitianMatrix(np.zeros((2, 2))), [1, 1], 1.0), [1, 1])

    def test_diagonal(self):
        x = loaded_solve(HermitianMatrix(np.diag([1.0, 3.0])), [1, 3], 1.0)
        np.testing.assert_allclose(x, [0.5, 0.75])

    def test_singular_raises(self):
        with pytest.raises(SingularMatrixError):
            loaded_solve(HermitianMatrix(np.zeros((3, 3))), [1, 0, 0], 0.0)
        x = np.array([1, 1j])
        with pytest.raises(SingularMatrixError):
            loaded_solve(HermitianMatrix(np.outer(x, x.conj())), [1, 0], 0.0)

    def test_negative_loading_rejected(self):
        with pytest.raises(LinalgError):
            loaded_solve(HermitianMatrix.identity(2), [1, 0], -1.0)

    def test_residual_bound_random(self, rng):
        for i in range(1000):
            n = 1 + i % 16
            a = random_psd(rng, n, rank=max(1, n // 2))
            eps = 1e-6 * a.trace() / n
            b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            x = loaded_solve(a, b, eps)
            res = (a.array + eps * np.eye(n)) @ x - b
            assert np.linalg.norm(res) <= 1e-8 * np.linalg.norm(b)


class TestEigenvalues:
    def test_identity(self):
        np.testing.assert_allclose(hermitian_eigenvalues(HermitianMatrix.identity(3)), [1, 1, 1])

    def test_rank_one(self):
        x = np.array([1, 1j])
        np.testing.assert_allclose(hermitian_eigenvalues(HermitianMatrix(np.outer(x, x.conj()))),
                                   [2, 0], atol=1e-14)

    def test_real_symmetric(self):
        np.testing.assert_allclose(hermitian_eigenvalues(HermitianMatrix([[2, 1], [1, 2]])), [3, 1])

    def test_against_lapack(self, rng):
        for n in range(1, 17):
            a = random_psd(rng, n)
            ev = hermitian_eigenvalues(a)
            assert np.all(np.diff(ev) <= 0)
            np.testing.assert_allclose(ev, np.linalg.eigvalsh(a.array)[::-1],
                                       atol=1e-10 * max(1.0, ev[0]))
            assert abs(ev.sum() - a.trace()) <= 1e-8 * (1 + abs(a.trace()))

    def test_psd_lower_bound(self, rng):
        for n in (2, 4, 8):
            a = random_psd(rng, n, rank=1)
            assert hermitian_eigenvalues(a).min() >= -1e-9 * a.trace()

    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
    def test_unitary_invariance(self, n, seed):
        rng = np.random.default_rng(seed)
        a = random_psd(rng, n)
        u = unitary_group.rvs(n, random_state=rng) if n > 1 else np.array([[1j]])
        b = HermitianMatrix(u.conj().T @ a.array @ u)
        np.testing.assert_allclose(hermitian_eigenvalues(a), hermitian_eigenvalues(b), atol=1e-7)

    def test_sweep_budget_exhausted(self, rng):
        a = random_psd(rng, 6)
        with pytest.raises(ConvergenceError, match="off-diagonal"):
            hermitian_eigenvalues(a, max_sweeps=1)
