import math

import numpy as np
import pytest

from precond_lab import oracles
from precond_lab.errors import ValidationError
from precond_lab.linalg import extend
from precond_lab.models import (MLP, Dataset, LinearRegression, LogisticRegression, MLPSpec,
                                Quadratic, fd_gradient, fd_hessian, grad_hessian_row_proxy,
                                gradient, hessian_full, layer_hessian, loss)


def regression_data(rng, n=3, N=25, m=1):
    return Dataset(rng.standard_normal((n, N)) * 2.0, rng.standard_normal((m, N)))


def binary_data(rng, n=3, N=25):
    return Dataset(rng.standard_normal((n, N)), (rng.random((1, N)) < 0.5).astype(float))


def model_instances(seed):
    """(model, data, p) for every model type."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((4, 4))
    yield Quadratic(A @ A.T + np.eye(4), rng.standard_normal(4)), None, rng.standard_normal(4)
    lin = LinearRegression(3, 2)
    yield lin, regression_data(rng, m=2), rng.standard_normal(lin.num_params)
    log = LogisticRegression(3)
    yield log, binary_data(rng), rng.standard_normal(log.num_params)
    for act in ("tanh", "sigmoid", "softplus"):
        mlp = MLP(MLPSpec((3, 4, 2), act, "squared_error"))
        yield mlp, regression_data(rng, m=2), mlp.init_params(rng, scale=0.8)
    mlp = MLP(MLPSpec((3, 3, 2, 1), "tanh", "cross_entropy"))
    yield mlp, binary_data(rng), mlp.init_params(rng, scale=0.8)


class TestLossAndGradient:
    def test_quadratic_examples(self):
        q = Quadratic(np.diag([1.0, 2.0]))
        assert loss(q, np.zeros(2)) == 0.0
        assert np.allclose(gradient(q, np.ones(2)), [1.0, 2.0])

    def test_logistic_at_zero_is_ln2(self):
        data = Dataset(np.random.default_rng(0).standard_normal((2, 10)), [[0, 1] * 5])
        assert loss(LogisticRegression(2), np.zeros(3), data) == pytest.approx(math.log(2))

    def test_linear_regression_optimum(self):
        rng = np.random.default_rng(1)
        data = regression_data(rng, N=40)
        model = LinearRegression(3)
        p_star = model.optimum(data)
        Xe = extend(data.inputs)
        coef = np.linalg.solve(Xe @ Xe.T, Xe @ data.targets[0])
        residual = data.targets[0] - coef @ Xe
        assert loss(model, p_star, data) == pytest.approx(residual @ residual / (2 * 40), rel=1e-12)
        assert np.linalg.norm(gradient(model, p_star, data)) <= 1e-8

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_check(self, seed):
        for model, data, p in model_instances(seed):
            g = gradient(model, p, data)
            fd = fd_gradient(model, p, data)
            assert np.linalg.norm(g - fd) <= 1e-6 * max(np.linalg.norm(fd), 1.0), type(model)

    def test_shape_errors(self):
        mlp = MLP(MLPSpec((3, 2, 1)))
        data = regression_data(np.random.default_rng(0))
        with pytest.raises(ValidationError):
            mlp.loss(np.zeros(mlp.num_params + 1), data)
        with pytest.raises(ValidationError):
            mlp.loss(np.zeros(mlp.num_params), regression_data(np.random.default_rng(0), n=4))

    def test_dataset_validation(self):
        with pytest.raises(ValidationError):
            Dataset(np.zeros((2, 3)), np.zeros((1, 4)))
        with pytest.raises(ValidationError):
            Dataset([[np.inf, 1.0]], [[0.0, 1.0]])


class TestSpec:
    def test_bad_activation(self):
        with pytest.raises(ValidationError):
            MLPSpec((2, 1), activation="relu")

    def test_bad_widths(self):
        with pytest.raises(ValidationError):
            MLPSpec((2,))
        with pytest.raises(ValidationError):
            MLPSpec((2, 0, 1))

    def test_layout(self):
        mlp = MLP(MLPSpec((2, 3, 1)))
        p = np.arange(mlp.num_params, dtype=float)
        (W1, b1), (W2, b2) = mlp.unflatten(p)
        assert np.array_equal(W1, [[0, 1], [2, 3], [4, 5]]) and np.array_equal(b1, [6, 7, 8])
        assert np.array_equal(W2, [[9, 10, 11]]) and np.array_equal(b2, [12])
        assert np.array_equal(mlp.flatten(mlp.unflatten(p)), p)
        assert list(mlp.unit_indices(1, 2)) == [8, 4, 5]
        assert list(mlp.unit_indices(2, 0)) == [12, 9, 10, 11]

    def test_unit_index_errors(self):
        mlp = MLP(MLPSpec((2, 3, 1)))
        for layer, unit in ((0, 0), (3, 0), (1, 3), (2, -1)):
            with pytest.raises(ValidationError):
                mlp.unit_indices(layer, unit)


class TestHessians:
    def test_quadratic_constant(self):
        A = np.array([[3.0, 1.0], [1.0, 2.0]])
        q = Quadratic(A)
        assert np.array_equal(hessian_full(q, np.zeros(2)), A)
        assert np.array_equal(hessian_full(q, np.ones(2) * 7), A)

    def test_linear_regression_matches_fd(self):
        rng = np.random.default_rng(2)
        model, data = LinearRegression(3), regression_data(rng)
        p = rng.standard_normal(model.num_params)
        H = hessian_full(model, p, data)
        assert np.allclose(H, fd_hessian(model, p, data), atol=1e-6)
        idx = model.unit_indices(1, 0)
        Xe = extend(data.inputs)
        assert np.allclose(H[np.ix_(idx, idx)], Xe @ Xe.T / data.num_samples, rtol=1e-14)

    def test_logistic_at_zero(self):
        rng = np.random.default_rng(3)
        model, data = LogisticRegression(3), binary_data(rng)
        Xe = extend(data.inputs)
        H = hessian_full(model, np.zeros(4), data)
        idx = model.unit_indices(1, 0)
        assert np.allclose(H[np.ix_(idx, idx)], Xe @ Xe.T / (4 * data.num_samples), rtol=1e-14)

    def test_logistic_matches_fd(self):
        rng = np.random.default_rng(4)
        model, data = LogisticRegression(3), binary_data(rng)
        p = rng.standard_normal(4)
        assert np.allclose(hessian_full(model, p, data), fd_hessian(model, p, data), atol=1e-6)


class TestLayerHessian:
    def test_linear_regression_exact(self):
        rng = np.random.default_rng(5)
        model, data = LinearRegression(4), regression_data(rng, n=4, N=30)
        parts = layer_hessian(model, rng.standard_normal(5), data, 1, 0)
        Xe = extend(data.inputs)
        analytic = Xe @ Xe.T / 30
        assert np.linalg.norm(parts.hessian - analytic) <= 1e-10 * np.linalg.norm(analytic)
        assert np.allclose(parts.S, 1 / 30, rtol=1e-8)

    def test_logistic_exact(self):
        rng = np.random.default_rng(6)
        model, data = LogisticRegression(3), binary_data(rng, N=30)
        p = rng.standard_normal(4)
        parts = layer_hessian(model, p, data, 1, 0)
        y = model.predict(p, data.inputs)[0]
        assert np.allclose(parts.S, y * (1 - y) / 30, rtol=1e-6, atol=0)
        assert np.all(parts.S > 0) and np.all(parts.S <= 1 / (4 * 30) * (1 + 1e-6))

    @pytest.mark.parametrize("layer,unit", [(1, 0), (1, 3), (2, 0)])
    def test_mlp_block_matches_fd(self, layer, unit):
        rng = np.random.default_rng(10 * layer + unit)
        mlp = MLP(MLPSpec((3, 4, 1), "tanh"))
        data = regression_data(rng, N=12)
        p = mlp.init_params(rng, scale=1.0)
        parts = layer_hessian(mlp, p, data, layer, unit)
        idx = mlp.unit_indices(layer, unit)
        block = fd_hessian(mlp, p, data)[np.ix_(idx, idx)]
        assert np.linalg.norm(parts.hessian - block) <= 1e-4 * np.linalg.norm(block)
        assert np.array_equal(parts.hessian, parts.hessian.T)
        structured = parts.H_e @ np.diag(parts.S) @ parts.H_e.T
        assert np.allclose(parts.hessian, structured, rtol=1e-12, atol=1e-15)

    def test_inputs_from_previous_layer(self):
        rng = np.random.default_rng(11)
        mlp = MLP(MLPSpec((2, 3, 1), "tanh"))
        data = regression_data(rng, n=2, N=5)
        p = mlp.init_params(rng)
        parts = layer_hessian(mlp, p, data, 2, 0)
        _, inputs = mlp.forward(p, data.inputs)
        assert np.array_equal(parts.H_e, extend(inputs[1]))

    def test_bad_indices(self):
        mlp = MLP(MLPSpec((2, 3, 1)))
        data = regression_data(np.random.default_rng(0), n=2)
        with pytest.raises(ValidationError):
            layer_hessian(mlp, np.zeros(mlp.num_params), data, 3, 0)


class TestGradientProxy:
    def setup_method(self):
        self.model = Quadratic(np.diag([1.0, 10.0, 100.0]))

    def test_correlation(self):
        avg, rows = grad_hessian_row_proxy(self.model, np.zeros(3), num_samples=500,
                                           radius=1e-3, seed=0)
        assert np.allclose(rows, [1.0, 10.0, 100.0])
        assert oracles.pearson(avg, rows) >= 0.99

    def test_orthogonal_single_sample(self):
        avg, rows = grad_hessian_row_proxy(self.model, np.zeros(3), directions=[[1.0, 1.0, 0.0]])
        assert avg[2] < 1e-12 * rows[2] and rows[2] > 0

    def test_linear_in_radius(self):
        a, _ = grad_hessian_row_proxy(self.model, np.zeros(3), num_samples=50, radius=1e-3, seed=1)
        b, _ = grad_hessian_row_proxy(self.model, np.zeros(3), num_samples=50, radius=1e-4, seed=1)
        assert np.allclose(a, 10 * b, rtol=1e-10)

    def test_non_stationary(self):
        with pytest.raises(ValidationError):
            grad_hessian_row_proxy(self.model, np.ones(3))
