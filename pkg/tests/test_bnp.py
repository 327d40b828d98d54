import math

import numpy as np
import pytest

from precond_lab.bnp import (RUNNING, BatchStats, BNParams, BNPOperator, BNPPreconditioner,
                             batch_stats, bn_forward, bn_reparameterize, bnp_apply, bnp_matrices,
                             bnp_precondition, bnp_step, layer_conditioning_report,
                             update_running_stats)
from precond_lab.errors import SingularityError, ValidationError
from precond_lab.harness.data import generate_synthetic
from precond_lab.linalg import extend, standardize
from precond_lab.models import MLP, Dataset, LinearRegression, MLPSpec
from precond_lab.optim import gd_step


def random_stats(rng, width):
    return BatchStats(rng.standard_normal(width) * 3, 10.0 ** rng.uniform(-2, 1, size=width))


class TestStats:
    def test_batch_stats(self):
        s = batch_stats([[1.0, 3.0]])
        assert s.mu == pytest.approx([2.0]) and s.sigma == pytest.approx([1.0]) and s.count == 2

    def test_constant(self):
        assert batch_stats([[5.0, 5.0, 5.0]]).sigma[0] == 0.0

    def test_validation(self):
        with pytest.raises(ValidationError):
            BatchStats([0.0, 1.0], [1.0])
        with pytest.raises(ValidationError):
            BatchStats([0.0], [-1.0])
        with pytest.raises(ValidationError):
            BNPPreconditioner(sigma_floor=0.0)
        with pytest.raises(ValidationError):
            BNPPreconditioner(averaging=RUNNING)


class TestBatchNorm:
    def test_gamma_zero(self):
        stats = BatchStats([1.0, 2.0], [1.0, 3.0])
        params = BNParams([0.0, 0.0], [0.5, -1.0])
        assert np.allclose(bn_forward([7.0, -3.0], stats, params), [0.5, -1.0])

    def test_at_mean(self):
        stats = BatchStats([1.0, 2.0], [1.0, 3.0])
        params = BNParams([2.0, 3.0], [0.5, -1.0])
        assert np.allclose(bn_forward(stats.mu, stats, params), params.beta)

    def test_reparameterize_examples(self):
        W, b = np.array([[1.0, 2.0]]), np.array([0.0])
        Wh, bh = bn_reparameterize(W, b, BNParams([1.0, 1.0], [0.0, 0.0]))
        assert np.array_equal(Wh, W) and np.array_equal(bh, b)
        Wh, bh = bn_reparameterize(W, b, BNParams([2.0, 3.0], [1.0, 1.0]))
        assert np.array_equal(Wh, [[2.0, 6.0]]) and np.array_equal(bh, [3.0])

    @pytest.mark.parametrize("seed", range(100))
    def test_reparameterize_forward_agrees(self, seed):
        rng = np.random.default_rng(seed)
        n_in, n_out = rng.integers(1, 6, size=2)
        W, b = rng.standard_normal((n_out, n_in)), rng.standard_normal(n_out)
        params = BNParams(rng.standard_normal(n_in), rng.standard_normal(n_in))
        stats = random_stats(rng, n_in)
        h = rng.standard_normal((n_in, 7))
        Wh, bh = bn_reparameterize(W, b, params)
        neutral = BNParams(np.ones(n_in), np.zeros(n_in))
        lhs = np.tanh(Wh @ bn_forward(h, stats, neutral) + bh[:, None])
        rhs = np.tanh(W @ bn_forward(h, stats, params) + b[:, None])
        assert np.allclose(lhs, rhs, rtol=0, atol=1e-12)


class TestPreconditioner:
    def test_neutral_is_identity(self):
        _, _, P = bnp_matrices(BatchStats.neutral(3))
        assert np.array_equal(P, np.eye(4))

    def test_example(self):
        _, _, P = bnp_matrices(BatchStats([2.0], [4.0]))
        assert np.allclose(P, [[1.0, -0.5], [0.0, 0.25]])

    def test_standardizes_batch(self):
        rng = np.random.default_rng(0)
        H = rng.standard_normal((4, 30)) * 5 + 3
        stats = batch_stats(H)
        _, _, P = bnp_matrices(stats)
        G = (H - stats.mu[:, None]) / stats.sigma[:, None]
        assert np.allclose(P.T @ extend(H), extend(G), atol=1e-12)
        assert np.allclose(G.sum(axis=1), 0, atol=1e-10)
        assert np.allclose(np.linalg.norm(G, axis=1), math.sqrt(30), atol=1e-10)

    def test_floor_keeps_invertible(self):
        _, _, P = bnp_matrices(BatchStats([1.0], [0.0]), sigma_floor=1e-3)
        assert np.isfinite(np.linalg.cond(P)) and P[1, 1] == pytest.approx(1e3)

    @pytest.mark.parametrize("seed", range(25))
    def test_apply_matches_dense(self, seed):
        rng = np.random.default_rng(seed)
        width = 7
        stats = random_stats(rng, width)
        g = rng.standard_normal(width + 1)
        _, _, P = bnp_matrices(stats)
        out_b, out_w = bnp_apply(g[0], g[1:], stats)
        assert np.allclose(np.concatenate([[out_b], out_w]), P @ P.T @ g, rtol=1e-12, atol=1e-12)

    def test_apply_trivial(self):
        stats = BatchStats.neutral(3)
        b, w = bnp_apply(1.5, np.array([1.0, 2.0, 3.0]), stats)
        assert b == 1.5 and np.array_equal(w, [1.0, 2.0, 3.0])
        b, w = bnp_apply(0.0, np.zeros(3), random_stats(np.random.default_rng(1), 3))
        assert b == 0.0 and np.array_equal(w, np.zeros(3))

    def test_apply_layer_at_once(self):
        rng = np.random.default_rng(2)
        stats = random_stats(rng, 4)
        g_b, g_W = rng.standard_normal(3), rng.standard_normal((3, 4))
        out_b, out_W = bnp_apply(g_b, g_W, stats)
        for i in range(3):
            b, w = bnp_apply(g_b[i], g_W[i], stats)
            assert out_b[i] == pytest.approx(b) and np.allclose(out_W[i], w)

    def test_apply_width_mismatch(self):
        with pytest.raises(ValidationError):
            bnp_apply(0.0, np.zeros(3), BatchStats.neutral(2))


class TestRunningStats:
    def test_momentum_extremes(self):
        old = BNPPreconditioner(BatchStats([1.0], [2.0]), averaging=RUNNING)
        batch = BatchStats([5.0], [3.0], 10)
        assert update_running_stats(old, batch, 0.0).stats.mu == pytest.approx([5.0])
        assert update_running_stats(old, batch, 0.0).stats.sigma == pytest.approx([3.0])
        kept = update_running_stats(old, batch, 1.0).stats
        assert kept.mu == pytest.approx([1.0]) and kept.sigma == pytest.approx([2.0])

    def test_geometric_convergence(self):
        pc = BNPPreconditioner(BatchStats([0.0], [1.0]), averaging=RUNNING, momentum=0.9)
        batch = BatchStats([4.0], [3.0])
        for t in range(1, 30):
            pc = update_running_stats(pc, batch)
            assert abs(pc.stats.mu[0] - 4.0) == pytest.approx(4.0 * 0.9 ** t)
            assert abs(pc.stats.sigma[0] ** 2 - 9.0) == pytest.approx(8.0 * 0.9 ** t)


class TestStep:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.mlp = MLP(MLPSpec((3, 4, 2), "tanh"))
        self.data = Dataset(rng.standard_normal((3, 10)) * 4 + 2, rng.standard_normal((2, 10)))
        self.p = self.mlp.init_params(rng)

    def test_neutral_stats_is_gd(self):
        neutral = [BNPPreconditioner(BatchStats.neutral(w), averaging=RUNNING)
                   for w in self.mlp.widths[:-1]]
        g = self.mlp.gradient(self.p, self.data)
        assert np.array_equal(bnp_step(self.mlp, self.p, self.data, 0.1, neutral),
                              gd_step(self.p, g, 0.1))

    def test_layers_share_stats(self):
        g = self.mlp.gradient(self.p, self.data)
        out = bnp_precondition(self.mlp, self.p, g, self.data)
        _, inputs = self.mlp.forward(self.p, self.data.inputs)
        for layer in (1, 2):
            stats = batch_stats(inputs[layer - 1])
            _, _, P = bnp_matrices(stats)
            for unit in range(self.mlp.widths[layer]):
                idx = self.mlp.unit_indices(layer, unit)
                assert np.allclose(out[idx], P @ P.T @ g[idx], rtol=1e-12, atol=1e-14)

    def test_operator_matrix_is_spd(self):
        M = BNPOperator(self.mlp, self.p, self.data).matrix
        assert np.allclose(M, M.T, atol=1e-12) and np.all(np.linalg.eigvalsh(M) > 0)

    def test_none_layer_untouched(self):
        g = self.mlp.gradient(self.p, self.data)
        out = bnp_precondition(self.mlp, self.p, g, self.data, [None, BNPPreconditioner()])
        first = np.concatenate([self.mlp.unit_indices(1, u) for u in range(4)])
        assert np.array_equal(out[first], g[first])

    def test_small_batch(self):
        with pytest.raises(ValidationError):
            bnp_step(self.mlp, self.p, self.data.subset([0]), 0.1)

    def test_standardized_linear_regression_is_gd(self):
        rng = np.random.default_rng(4)
        X = standardize(rng.standard_normal((3, 40)))[0]
        data = Dataset(X, rng.standard_normal((1, 40)))
        model = LinearRegression(3)
        p = rng.standard_normal(4)
        g = model.gradient(p, data)
        assert np.allclose(bnp_step(model, p, data, 0.2), gd_step(p, g, 0.2), rtol=0, atol=1e-10)


class TestConditioning:
    def test_ill_scaled_inputs_improve(self):
        data = generate_synthetic(2, 200, scales=[1.0, 100.0], means=[3.0, -2.0], seed=5)
        model = LinearRegression(2)
        raw, bnp = layer_conditioning_report(model, np.zeros(3), data, 1, 0)
        assert bnp < raw

    def test_standardized_inputs_unchanged(self):
        rng = np.random.default_rng(6)
        data = Dataset(standardize(rng.standard_normal((3, 50)))[0], rng.standard_normal((1, 50)))
        raw, bnp = layer_conditioning_report(LinearRegression(3), np.zeros(4), data, 1, 0)
        assert bnp == pytest.approx(raw, rel=1e-8)

    def test_log_spaced_scales(self):
        rng = np.random.default_rng(7)
        data = generate_synthetic(4, 200, np.logspace(0, 3, 4), rng.uniform(1, 10, 4), seed=7)
        raw, bnp = layer_conditioning_report(LinearRegression(4), np.zeros(5), data, 1, 0)
        assert bnp <= raw / 10

    def test_rank_deficient_hessian_raises(self):
        mlp = MLP(MLPSpec((2, 1), "identity", "squared_error"))
        data = Dataset(np.ones((2, 4)), np.zeros((1, 4)))
        with pytest.raises(SingularityError):
            layer_conditioning_report(mlp, np.zeros(3), data, 1, 0)
