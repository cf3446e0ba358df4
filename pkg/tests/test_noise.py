import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import numeric_gradient, orthogonal_rows, rel_error
from hope.errors import InvalidArgumentError, SingularProjectionError
from hope.noise import (
    SIGMA2_FLOOR,
    jacobian_term,
    l2_gradient_u,
    l2_value,
    residual_energy,
    sigma2_update,
)

HALF_PAIR = np.array([[0.0, 0.5], [0.0, -0.5]])


def orthonormal(M, D, rng):
    return np.linalg.qr(rng.normal(size=(D, M)))[0].T


class TestL2Value:
    def test_batch_inside_row_space(self):
        rng = np.random.default_rng(0)
        U = orthonormal(3, 7, rng)
        X = rng.normal(size=(5, 3)) @ U
        np.testing.assert_allclose(residual_energy(U, X), 0.0, atol=1e-12)
        expected = -0.5 * 5 * (7 - 3) * np.log(0.3)
        assert l2_value(U, 0.3, X) == pytest.approx(expected, abs=1e-10)

    def test_two_point_example(self):
        U = np.array([[1.0, 0.0]])
        assert residual_energy(U, HALF_PAIR).sum() == pytest.approx(0.5, abs=1e-15)
        expected = -0.5 * 2 * 1 * np.log(0.25) - 0.5 / (2 * 0.25)
        assert l2_value(U, 0.25, HALF_PAIR) == pytest.approx(expected, abs=1e-12)

    @given(st.integers(1, 4), st.integers(0, 2**31 - 1))
    def test_energy_modes_agree_for_orthonormal_rows(self, M, seed):
        rng = np.random.default_rng(seed)
        U = orthonormal(M, 6, rng)
        X = rng.normal(size=(8, 6))
        np.testing.assert_allclose(
            residual_energy(U, X, "free-norm"), residual_energy(U, X), atol=1e-10
        )

    def test_modes_agree_at_unit_variance(self):
        # the log-variance prefactors differ, so the values coincide at s2 = 1
        rng = np.random.default_rng(1)
        U = orthonormal(3, 8, rng)
        X = rng.normal(size=(10, 8))
        assert l2_value(U, 1.0, X, "free-norm") == pytest.approx(l2_value(U, 1.0, X), abs=1e-10)

    @given(st.integers(0, 2**31 - 1))
    def test_energy_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        U = rng.normal(size=(3, 6))
        X = rng.normal(size=(4, 6))
        assert np.all(residual_energy(U, X, "free-norm") >= -1e-10)
        assert np.all(residual_energy(U / np.linalg.norm(U, axis=1, keepdims=True), X) >= 0)

    def test_zero_projection_keeps_everything(self):
        X = np.random.default_rng(2).normal(size=(5, 4))
        np.testing.assert_allclose(residual_energy(np.zeros((2, 4)), X), np.sum(X**2, axis=1))

    def test_singular_gram_in_free_norm_mode(self):
        U = np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        with pytest.raises(SingularProjectionError):
            l2_value(U, 1.0, np.ones((2, 3)), "free-norm")

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(InvalidArgumentError):
            l2_value(np.eye(2)[:1], 0.0, np.ones((1, 2)))

    def test_unknown_mode(self):
        with pytest.raises(InvalidArgumentError):
            residual_energy(np.eye(2)[:1], np.ones((1, 2)), "whitened")


class TestL2Gradient:
    @pytest.mark.parametrize("mode", ["orthonormal", "free-norm"])
    def test_finite_differences_at_non_unit_rows(self, mode):
        rng = np.random.default_rng(3)
        for trial in range(20):
            U = orthogonal_rows(3, 7, rng, lengths=rng.uniform(0.5, 2.0, size=3))
            U += 0.05 * rng.normal(size=U.shape)
            X = rng.normal(size=(6, 7))
            num = numeric_gradient(lambda: l2_value(U, 0.7, X, mode), U)
            assert rel_error(l2_gradient_u(U, 0.7, X, mode), num) < 1e-4, trial

    def test_zero_inside_row_space(self):
        rng = np.random.default_rng(4)
        U = orthonormal(3, 6, rng)
        X = rng.normal(size=(5, 3)) @ U
        np.testing.assert_allclose(l2_gradient_u(U, 0.5, X), 0.0, atol=1e-8)

    def test_free_norm_rows_span(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            # fewer samples than latent dims, so the span is a proper subspace
            U = rng.normal(size=(4, 7))
            X = rng.normal(size=(2, 7))
            G = l2_gradient_u(U, 1.3, X, "free-norm")
            W = np.linalg.solve(U @ U.T, U @ X.T)  # columns (U U^T)^-1 U x_n
            # each column of G (a vector in R^M) lies in span of the (U U^T)^-1 U x_n
            coef, *_ = np.linalg.lstsq(W, G, rcond=None)
            np.testing.assert_allclose(W @ coef, G, atol=1e-10)


class TestSigma2Update:
    def test_two_point_example(self):
        assert sigma2_update(np.array([[1.0, 0.0]]), HALF_PAIR) == pytest.approx(0.25)

    def test_row_space_batch_gives_floor(self):
        U = np.array([[1.0, 0.0]])
        assert sigma2_update(U, np.array([[3.0, 0.0], [-1.0, 0.0]])) == SIGMA2_FLOOR

    def test_full_rank_projection_gives_floor(self):
        assert sigma2_update(np.eye(3), np.ones((2, 3))) == SIGMA2_FLOOR

    @pytest.mark.parametrize("mode", ["orthonormal", "free-norm"])
    def test_grid_and_first_order_condition(self, mode):
        rng = np.random.default_rng(6)
        U = orthonormal(2, 5, rng)
        X = rng.normal(size=(20, 5))
        s2 = sigma2_update(U, X, mode)
        best = l2_value(U, s2, X, mode)
        assert best > l2_value(U, 1.1 * s2, X, mode)
        assert best > l2_value(U, 0.9 * s2, X, mode)
        N, (M, D) = len(X), U.shape
        dof = N * (D - M) if mode == "orthonormal" else N
        energy = residual_energy(U, X, mode).sum()
        derivative = -0.5 * dof / s2 + energy / (2 * s2**2)
        assert abs(derivative) < 1e-8

    def test_empty_batch(self):
        with pytest.raises(InvalidArgumentError):
            sigma2_update(np.eye(2)[:1], np.zeros((0, 2)))


class TestJacobianTerm:
    def test_unit_rows_give_zero(self):
        value, _ = jacobian_term(orthonormal(3, 5, np.random.default_rng(7)), 10)
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_rows_with_norms_two_and_four(self):
        U = np.array([[2.0, 0.0, 0.0], [0.0, 4.0, 0.0]])
        value, grad = jacobian_term(U, 7)
        assert value == pytest.approx(-7 * (np.log(2) + np.log(4)), abs=1e-12)
        np.testing.assert_allclose(grad, -7 * np.linalg.inv(U @ U.T) @ U, atol=1e-12)
        np.testing.assert_allclose(grad, [[-3.5, 0, 0], [0, -1.75, 0]], atol=1e-12)

    def test_finite_differences_at_orthogonal_rows(self):
        rng = np.random.default_rng(8)
        for trial in range(20):
            U = orthogonal_rows(3, 6, rng, lengths=rng.uniform(0.5, 3.0, size=3))
            num = numeric_gradient(lambda: jacobian_term(U, 5)[0], U)
            assert rel_error(jacobian_term(U, 5)[1], num) < 1e-4, trial

    def test_singular(self):
        with pytest.raises(SingularProjectionError):
            jacobian_term(np.array([[1.0, 1.0], [2.0, 2.0]]), 3)


class TestTotalObjective:
    def test_unit_row_free_norm_path_matches_orthonormal_path(self):
        # the Jacobian vanishes for unit rows and both energies agree, so
        # L2 + J of the free-norm path equals L2 of the orthonormal path at s2 = 1
        rng = np.random.default_rng(9)
        U = orthonormal(4, 9, rng)
        X = rng.normal(size=(12, 9))
        free = l2_value(U, 1.0, X, "free-norm") + jacobian_term(U, len(X))[0]
        assert free == pytest.approx(l2_value(U, 1.0, X), abs=1e-8)
