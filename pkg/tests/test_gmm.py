import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import numeric_gradient, rel_error
from hope.errors import InvalidArgumentError, NumericError
from hope.gmm import (
    DiagonalGmm,
    gmm_gradients,
    gmm_log_likelihood,
    gmm_occupancy,
    init_gmm,
)
from hope.projection import penalty, penalty_gradient


def random_gmm(K, M, rng):
    return DiagonalGmm(
        rng.dirichlet(np.ones(K)), rng.normal(size=(K, M)), rng.uniform(0.3, 2.0, size=(K, M))
    )


def naive_density(model, z):
    total = 0.0
    for pi, mu, var in zip(model.weights, model.means, model.variances):
        norm = np.prod(1.0 / np.sqrt(2 * np.pi * var))
        total += pi * norm * np.exp(-0.5 * np.sum((z - mu) ** 2 / var))
    return total


class TestLogLikelihood:
    def test_standard_normal_at_mode(self):
        model = DiagonalGmm([1.0], [[0.0, 0.0]], [[1.0, 1.0]])
        value = gmm_log_likelihood(model, np.eye(2), np.zeros((1, 2)))
        assert value == pytest.approx(-np.log(2 * np.pi), abs=1e-12)
        assert value == pytest.approx(-1.837877, abs=1e-6)

    def test_symmetric_pair_at_origin(self):
        m = np.array([1.5, -0.5])
        model = DiagonalGmm([0.5, 0.5], [m, -m], [[1.0, 2.0], [1.0, 2.0]])
        single = DiagonalGmm([1.0], [m], [[1.0, 2.0]])
        x = np.zeros((1, 2))
        assert gmm_log_likelihood(model, np.eye(2), x) == pytest.approx(
            gmm_log_likelihood(single, np.eye(2), x), abs=1e-12
        )

    def test_matches_naive_density_sum(self):
        rng = np.random.default_rng(0)
        model = random_gmm(3, 2, rng)
        U = rng.normal(size=(2, 4))
        X = rng.normal(size=(5, 4))
        expected = sum(np.log(naive_density(model, U @ x)) for x in X)
        assert gmm_log_likelihood(model, U, X) == pytest.approx(expected, abs=1e-10)

    def test_far_points_do_not_underflow(self):
        model = DiagonalGmm([0.5, 0.5], [[0.0], [1.0]], [[1e-4], [1e-4]])
        value = gmm_log_likelihood(model, np.eye(1), np.array([[50.0]]))
        assert np.isfinite(value)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        model = random_gmm(5, 3, rng)
        U, X = rng.normal(size=(3, 6)), rng.normal(size=(10, 6))
        p = rng.permutation(5)
        permuted = DiagonalGmm(model.weights[p], model.means[p], model.variances[p])
        assert gmm_log_likelihood(permuted, U, X) == pytest.approx(
            gmm_log_likelihood(model, U, X), abs=1e-12
        )

    def test_empty_batch(self):
        model = random_gmm(2, 2, np.random.default_rng(2))
        with pytest.raises(InvalidArgumentError):
            gmm_log_likelihood(model, np.eye(2), np.zeros((0, 2)))

    def test_non_finite_batch(self):
        model = random_gmm(2, 2, np.random.default_rng(2))
        with pytest.raises(NumericError):
            gmm_log_likelihood(model, np.eye(2), np.array([[np.nan, 0.0]]))

    def test_dimension_mismatch(self):
        model = random_gmm(2, 2, np.random.default_rng(2))
        with pytest.raises(InvalidArgumentError):
            gmm_log_likelihood(model, np.eye(2), np.zeros((3, 5)))


class TestOccupancy:
    def test_single_component(self):
        model = DiagonalGmm([1.0], [[0.3, 0.1]], [[1.0, 1.0]])
        np.testing.assert_array_equal(gmm_occupancy(model, np.array([5.0, -2.0])), [1.0])

    def test_identical_components(self):
        model = DiagonalGmm([0.5, 0.5], [[1.0, 1.0], [1.0, 1.0]], np.ones((2, 2)))
        np.testing.assert_allclose(gmm_occupancy(model, np.array([0.2, 3.0])), [0.5, 0.5])

    def test_matches_density_ratio(self):
        rng = np.random.default_rng(3)
        model = random_gmm(4, 3, rng)
        z = rng.normal(size=3)
        terms = np.array([
            DiagonalGmm([1.0], [mu], [v]).weights[0] * pi
            * naive_density(DiagonalGmm([1.0], [mu], [v]), z)
            for pi, mu, v in zip(model.weights, model.means, model.variances)
        ])
        np.testing.assert_allclose(gmm_occupancy(model, z), terms / terms.sum(), atol=1e-12)

    @given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**31 - 1), st.floats(-1e3, 1e3))
    def test_sums_to_one(self, K, M, seed, shift):
        rng = np.random.default_rng(seed)
        model = random_gmm(K, M, rng)
        gamma = gmm_occupancy(model, rng.normal(size=M) + shift)
        assert np.all(np.isfinite(gamma))
        assert np.all((gamma >= 0) & (gamma <= 1))
        assert abs(gamma.sum() - 1.0) < 1e-10


class TestGradients:
    def setup_method(self):
        rng = np.random.default_rng(4)
        self.model = random_gmm(3, 2, rng)
        self.U = rng.normal(size=(2, 5))
        self.X = rng.normal(size=(6, 5))

    def objective(self):
        return gmm_log_likelihood(self.model, self.U, self.X)

    def test_means(self):
        g = gmm_gradients(self.model, self.U, self.X)
        assert rel_error(g.means, numeric_gradient(self.objective, self.model.means)) < 1e-4

    def test_variances(self):
        g = gmm_gradients(self.model, self.U, self.X)
        num = numeric_gradient(self.objective, self.model.variances)
        assert rel_error(g.variances, num) < 1e-4

    def test_log_variances(self):
        g = gmm_gradients(self.model, self.U, self.X)
        logv = np.log(self.model.variances)

        def f():
            self.model.variances = np.exp(logv)
            return self.objective()

        num = numeric_gradient(f, logv)
        self.model.variances = np.exp(logv)
        assert rel_error(g.variances * self.model.variances, num) < 1e-4

    def test_projection(self):
        g = gmm_gradients(self.model, self.U, self.X)
        assert rel_error(g.projection, numeric_gradient(self.objective, self.U)) < 1e-4

    def test_weights_on_simplex_tangent(self):
        g = gmm_gradients(self.model, self.U, self.X)
        rng = np.random.default_rng(5)
        for _ in range(5):
            v = rng.normal(size=3)
            v -= v.mean()
            h = 1e-6
            w = self.model.weights.copy()
            self.model.weights = w + h * v
            fp = self.objective()
            self.model.weights = w - h * v
            fm = self.objective()
            self.model.weights = w
            assert abs(g.weights @ v - (fp - fm) / (2 * h)) < 1e-4 * np.abs(g.weights).max()

    def test_stationary_at_batch_mean(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(8, 2))
        model = DiagonalGmm([1.0], [X.mean(axis=0)], [[0.7, 1.3]])
        np.testing.assert_allclose(gmm_gradients(model, np.eye(2), X).means, 0.0, atol=1e-10)

    def test_separated_components_at_a_mean(self):
        model = DiagonalGmm([0.5, 0.5], [[0.0, 0.0], [100.0, 100.0]], np.ones((2, 2)))
        g = gmm_gradients(model, np.eye(2), np.zeros((1, 2)))
        np.testing.assert_allclose(g.means, 0.0, atol=1e-10)

    def test_first_order_ascent(self):
        rng = np.random.default_rng(7)
        beta, step = 1.0, 1e-4
        for _ in range(50):
            model = random_gmm(3, 2, rng)
            U, X = rng.normal(size=(2, 4)), rng.normal(size=(5, 4))
            before = gmm_log_likelihood(model, U, X) - beta * penalty(U)
            g = gmm_gradients(model, U, X)
            gw = g.weights - g.weights.mean()
            stepped = DiagonalGmm(
                model.weights + step * gw,
                model.means + step * g.means,
                np.exp(np.log(model.variances) + step * g.variances * model.variances),
            )
            U2 = U + step * (g.projection - beta * penalty_gradient(U))
            after = gmm_log_likelihood(stepped, U2, X) - beta * penalty(U2)
            assert after - before >= -1e-9


class TestInit:
    def test_means_are_projected_points(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(20, 5))
        U = rng.normal(size=(2, 5))
        model = init_gmm(U, X, 4, np.random.default_rng(0))
        projected = X @ U.T
        for mu in model.means:
            assert np.min(np.linalg.norm(projected - mu, axis=1)) < 1e-12
        np.testing.assert_allclose(model.weights, 0.25)
        np.testing.assert_array_equal(model.variances, 1.0)

    def test_too_many_components(self):
        with pytest.raises(InvalidArgumentError):
            init_gmm(np.eye(2), np.zeros((3, 2)), 4, np.random.default_rng(0))

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(InvalidArgumentError):
            DiagonalGmm([1.0], [[0.0]], [[0.0]])
