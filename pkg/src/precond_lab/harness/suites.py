"""Verification suites: each checks one claim against an oracle.

A suite returns a SuiteResult holding one Case per check, with the observed
error (or ratio), the tolerance it was held to and whether it passed.
Every suite seeds its own generator, so suites are independent of each other
and of the order they run in.
"""
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from .. import oracles
from ..bnp import (BatchStats, BNPOperator, BNPPreconditioner, bnp_apply, bnp_matrices, bnp_step,
                   layer_conditioning_report)
from ..errors import DivergenceError, ValidationError
from ..linalg import (centering_inequality_check, extend, rect_condition_number, row_equilibrate,
                      standardize)
from ..models import (MLP, Dataset, LinearRegression, LogisticRegression, MLPSpec, Quadratic,
                      fd_hessian, grad_hessian_row_proxy, layer_hessian, sigmoid)
from ..optim import (FIRST_GRADIENT_INIT, FixedPreconditioner, OptimizerConfig, OptimizerState,
                     empirical_rate, gd_step, optimal_lr, precond_gd_step, rmsprop_closed_form,
                     rmsprop_step, run, theoretical_rate)
from ..regularize import (RegMode, make_reg_step, step_grad_reg_in_z, step_l2_in_z,
                          verify_no_equivalence)
from .data import generate_synthetic, random_spd

# Tolerances, one per claim.
RATE_KAPPA100_TOL = 0.01
RATE_REL_TOL = 0.02
RATE_RUNTIME_LIMIT = 1.0
PERFECT_PRECOND_TOL = 1e-10
LAYER_HESSIAN_FD_TOL = 1e-4
LAYER_HESSIAN_LINEAR_TOL = 1e-10
LAYER_HESSIAN_LOGISTIC_TOL = 1e-6
CENTERING_SLACK = 1e-10
STANDARDIZATION_TOL = 1e-10
L2_IN_Z_TOL = 1e-12
GRAD_REG_QUADRATIC_TOL = 1e-10
GRAD_REG_MLP_TOL = 1e-4
ADAMW_MIN_DISTANCE = 1e-3
GD_DECAY_MATCH_TOL = 1e-10
RMSPROP_TOL = 1e-12
BNP_DENSE_TOL = 1e-12
BNP_KAPPA_FACTOR = 10.0
PROXY_MIN_CORRELATION = 0.95
PROXY_ORTHOGONAL_RATIO = 1e-6


@dataclass
class Case:
    name: str
    observed: float
    tolerance: float
    passed: bool
    relation: str = "<="

    def line(self) -> str:
        mark = "ok  " if self.passed else "FAIL"
        return f"  [{mark}] {self.name}: {self.observed:.3e} {self.relation} {self.tolerance:.3e}"


@dataclass
class SuiteResult:
    name: str
    cases: List[Case] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.cases)

    def below(self, name, observed, tolerance):
        self.cases.append(Case(name, float(observed), tolerance, bool(observed <= tolerance)))

    def above(self, name, observed, threshold):
        self.cases.append(Case(name, float(observed), threshold, bool(observed > threshold), ">"))

    def at_least(self, name, observed, threshold):
        self.cases.append(Case(name, float(observed), threshold, bool(observed >= threshold), ">="))


def _rel(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def rate_law_steps(kappa: float) -> int:
    """Enough steps for the slowest modes to dominate, capped for runtime."""
    r = theoretical_rate(kappa)
    return int(min(max(50, math.log(1e-10) / math.log(r)), 3000))


def rate_law_run(kappa: float, n: int = 8, seed: int = 0):
    """(empirical, theoretical) contraction of GD at optimal_lr on a random SPD quadratic."""
    rng = np.random.default_rng(seed)
    A = random_spd(n, kappa, rng)
    model = Quadratic(A, rng.standard_normal(n))
    alpha = optimal_lr(1.0, kappa)
    record = run(model, None, "gd", OptimizerConfig(alpha=alpha), rate_law_steps(kappa),
                 p0=np.zeros(n))
    return empirical_rate(record), theoretical_rate(kappa)


def suite_rate_law(result: SuiteResult):
    started = time.perf_counter()
    emp, theo = rate_law_run(100.0)
    result.below("kappa=100 relative error vs 99/101", abs(emp - theo) / theo, RATE_KAPPA100_TOL)
    for kappa in (2.0, 9.0, 100.0, 1e4):
        emp, theo = rate_law_run(kappa, seed=int(kappa))
        result.below(f"kappa={kappa:g} relative rate error", abs(emp - theo) / theo, RATE_REL_TOL)
    result.below("runtime seconds", time.perf_counter() - started, RATE_RUNTIME_LIMIT)


def suite_perfect_preconditioning(result: SuiteResult):
    rng = np.random.default_rng(1)
    worst = 0.0
    for trial in range(50):
        n = int(rng.integers(1, 9))
        kappa = 10.0 ** rng.uniform(0, 6)
        A = random_spd(n, kappa, rng)
        c = rng.standard_normal(n) * 10.0 ** rng.uniform(-2, 2)
        model = Quadratic(A, c)
        A_inv = np.linalg.inv(A)
        M = FixedPreconditioner(0.5 * (A_inv + A_inv.T))
        record = run(model, None, "precond_gd", OptimizerConfig(alpha=1.0), 2,
                     p0=rng.standard_normal(n), M=M)
        worst = max(worst, float(record.dist_to_opt[-1]))
    result.below("max ||p_2 - p*|| over 50 quadratics", worst, PERFECT_PRECOND_TOL)


def suite_van_der_sluis(result: SuiteResult):
    rng = np.random.default_rng(2)
    worst = 0.0
    violations = 0
    for trial in range(200):
        m = int(rng.integers(2, 7))
        n = int(rng.integers(1, m + 1))
        A = rng.standard_normal((m, n)) * 10.0 ** rng.uniform(-2, 2, size=(m, 1))
        kappa = rect_condition_number(row_equilibrate(A) @ A)
        best = oracles.sampled_min_diag_condition(A, 10_000, rng)
        ratio = kappa / (math.sqrt(m) * best)
        worst = max(worst, ratio)
        violations += ratio > 1.0
    result.below("violations over 200 matrices", violations, 0)
    result.below("max kappa(DA) / (sqrt(m) * sampled min)", worst, 1.0)


def _random_mlp(rng):
    while True:
        depth = int(rng.integers(1, 4))
        widths = tuple(int(w) for w in rng.integers(1, 5, size=depth + 1))
        spec = MLPSpec(widths, str(rng.choice(["tanh", "sigmoid", "softplus", "identity"])),
                       "squared_error" if widths[-1] > 1 or rng.random() < 0.5 else "cross_entropy")
        mlp = MLP(spec)
        if mlp.num_params <= 60:
            return mlp


def suite_layer_hessian(result: SuiteResult):
    rng = np.random.default_rng(3)
    worst = 0.0
    for trial in range(20):
        mlp = _random_mlp(rng)
        N = int(rng.integers(3, 12))
        X = rng.standard_normal((mlp.widths[0], N))
        if mlp.spec.loss == "cross_entropy":
            Y = (rng.random((mlp.widths[-1], N)) < 0.5).astype(float)
        else:
            Y = rng.standard_normal((mlp.widths[-1], N))
        data = Dataset(X, Y)
        p = mlp.init_params(rng, scale=1.0)
        layer = int(rng.integers(1, mlp.num_layers + 1))
        unit = int(rng.integers(0, mlp.widths[layer]))
        idx = mlp.unit_indices(layer, unit)
        block = fd_hessian(mlp, p, data)[np.ix_(idx, idx)]
        worst = max(worst, _rel(layer_hessian(mlp, p, data, layer, unit).hessian, block))
    result.below("random MLPs: max relative Frobenius error vs fd block", worst, LAYER_HESSIAN_FD_TOL)

    worst_lin = worst_log = 0.0
    for trial in range(10):
        n, N = int(rng.integers(1, 6)), int(rng.integers(8, 40))
        X = rng.standard_normal((n, N)) * 10.0 ** rng.uniform(-1, 1, size=(n, 1))
        Xe = extend(X)
        lin = LinearRegression(n)
        data = Dataset(X, rng.standard_normal((1, N)))
        p = rng.standard_normal(lin.num_params)
        analytic = Xe @ Xe.T / N
        worst_lin = max(worst_lin, _rel(layer_hessian(lin, p, data, 1, 0).hessian, analytic))

        log = LogisticRegression(n)
        data = Dataset(X, (rng.random((1, N)) < 0.5).astype(float))
        b, w = p[-1], p[:-1]
        y_hat = sigmoid(w @ X + b)
        analytic = (Xe * (y_hat * (1 - y_hat) / N)) @ Xe.T
        worst_log = max(worst_log, _rel(layer_hessian(log, p, data, 1, 0).hessian, analytic))
    result.below("linear regression vs X_e X_e^T / N", worst_lin, LAYER_HESSIAN_LINEAR_TOL)
    result.below("logistic regression vs X_e diag(y(1-y)/N) X_e^T", worst_log, LAYER_HESSIAN_LOGISTIC_TOL)


def suite_centering(result: SuiteResult):
    rng = np.random.default_rng(4)
    worst_slack = -math.inf
    worst_eq = 0.0
    for trial in range(100):
        n = int(rng.integers(1, 6))
        N = int(rng.integers(n + 2, 40))
        X = (rng.standard_normal((n, N)) * 10.0 ** rng.uniform(-1, 1, size=(n, 1))
             + rng.uniform(-10, 10, size=(n, 1)))
        kc, kr = centering_inequality_check(X)
        worst_slack = max(worst_slack, kc - kr)
        Xc = X - X.mean(axis=1, keepdims=True)
        kc2, kr2 = centering_inequality_check(Xc)
        worst_eq = max(worst_eq, abs(kc2 - kr2) / kr2)
    result.below("max kappa_centered - kappa_raw", worst_slack, CENTERING_SLACK)
    result.below("pre-centered X: relative gap", worst_eq, CENTERING_SLACK)


def suite_standardization(result: SuiteResult):
    rng = np.random.default_rng(5)
    worst = 0.0
    for trial in range(100):
        n, N = int(rng.integers(1, 8)), int(rng.integers(2, 200))
        X = (rng.standard_normal((n, N)) * 10.0 ** rng.uniform(-3, 3, size=(n, 1))
             + rng.uniform(-100, 100, size=(n, 1)))
        norms = np.linalg.norm(extend(standardize(X)[0]), axis=1)
        worst = max(worst, float(np.max(np.abs(norms - math.sqrt(N)))))
    result.below("max | ||row|| - sqrt(N) |", worst, STANDARDIZATION_TOL)


def _small_mlp_problem(rng):
    mlp = MLP(MLPSpec((3, 4, 1), "tanh", "squared_error"))
    data = Dataset(rng.standard_normal((3, 16)), rng.standard_normal((1, 16)))
    return mlp, data, mlp.init_params(rng, scale=0.5)


def suite_reg_equivalence(result: SuiteResult):
    rng = np.random.default_rng(6)
    n, alpha, lam, steps = 6, 0.02, 0.3, 100
    model = Quadratic(random_spd(n, 10.0, rng), rng.standard_normal(n))
    diag = 10.0 ** rng.uniform(-0.5, 0.5, size=n)
    M = FixedPreconditioner(diagonal=diag)
    P = np.diag(np.sqrt(diag))
    p0 = rng.standard_normal(n)

    def path(step):
        p, out = p0.copy(), [p0.copy()]
        for _ in range(steps):
            p = step(p)
            out.append(p)
        return np.array(out)

    grad = lambda q: model.gradient(q)
    ours = path(lambda p: step_l2_in_z(p, grad(p), alpha, lam, M))
    ref = np.array(oracles.z_space_gd(oracles.l2_in_z_objective_grad(grad, P, lam), P, p0,
                                      alpha, steps))
    result.below("l2_in_z vs z-space GD, 100 steps", np.max(np.abs(ours - ref)), L2_IN_Z_TOL)

    lam_g = 0.01
    ours = path(lambda p: step_grad_reg_in_z(model, p, alpha, lam_g, M))
    ref = np.array(oracles.z_space_gd(
        oracles.grad_reg_in_z_objective_grad(grad, lambda q: model.A, P, lam_g), P, p0, alpha, steps))
    result.below("grad_reg_in_z vs z-space oracle, quadratic", np.max(np.abs(ours - ref)),
                 GRAD_REG_QUADRATIC_TOL)

    mlp, data, q0 = _small_mlp_problem(rng)
    diag = 10.0 ** rng.uniform(-0.5, 0.5, size=mlp.num_params)
    M = FixedPreconditioner(diagonal=diag)
    P = np.diag(np.sqrt(diag))
    p, ours = q0.copy(), [q0.copy()]
    for _ in range(20):
        p = step_grad_reg_in_z(mlp, p, 0.05, 0.05, M, data)
        ours.append(p)
    ref = oracles.z_space_gd(oracles.grad_reg_in_z_objective_grad(
        lambda q: mlp.gradient(q, data), lambda q: fd_hessian(mlp, q, data), P, 0.05),
        P, q0, 0.05, 20)
    result.below("grad_reg_in_z vs z-space oracle, MLP (fd HVP)",
                 np.max(np.abs(np.array(ours) - np.array(ref))), GRAD_REG_MLP_TOL)


def suite_adamw_inequivalence(result: SuiteResult):
    rng = np.random.default_rng(8)
    n = 6
    model = Quadratic(random_spd(n, 100.0, rng), rng.standard_normal(n))
    p0 = rng.standard_normal(n)
    alpha, lambda_w, steps = 0.05, 1.0, 50
    grid = np.logspace(-3, 1, 13)
    report = verify_no_equivalence(model, None, alpha, lambda_w, grid, steps, p0=p0)
    result.above("Adam+L2 vs AdamW: min trajectory distance over 13 lambdas",
                 report.min_distance, ADAMW_MIN_DISTANCE)
    gd = verify_no_equivalence(model, None, 0.005, lambda_w, [lambda_w / 2], steps, p0=p0,
                               optimizer="gd")
    result.below("GD: L2 with lambda_w/2 vs decoupled decay", gd.min_distance, GD_DECAY_MATCH_TOL)


def suite_rmsprop_closed_form(result: SuiteResult):
    rng = np.random.default_rng(9)
    worst = 0.0
    for trial in range(100):
        t, n = int(rng.integers(1, 21)), int(rng.integers(1, 6))
        rho = float(rng.uniform(0, 0.999))
        G = rng.standard_normal((t, n)) * 10.0 ** rng.uniform(-3, 3, size=(t, 1))
        config = OptimizerConfig(rho=rho, init_convention=FIRST_GRADIENT_INIT)
        state, p = OptimizerState.zeros(n), np.zeros(n)
        for g in G:
            state, p = rmsprop_step(state, p, g, config)
        worst = max(worst, _rel(state.r, rmsprop_closed_form(G, rho)))
    result.below("max relative error, recursion vs closed form", worst, RMSPROP_TOL)


def suite_bnp_vector_form(result: SuiteResult):
    rng = np.random.default_rng(10)
    worst = 0.0
    for trial in range(500):
        width = int(rng.integers(1, 10))
        stats = BatchStats(rng.standard_normal(width) * 3,
                           10.0 ** rng.uniform(-2, 1, size=width))
        g = rng.standard_normal(width + 1)
        _, _, P = bnp_matrices(stats)
        dense = P @ (P.T @ g)
        out_b, out_w = bnp_apply(g[0], g[1:], stats)
        worst = max(worst, _rel(np.concatenate([[out_b], out_w]), dense))
    result.below("bnp_apply vs dense P P^T g, 500 trials", worst, BNP_DENSE_TOL)

    mlp, data, p = _small_mlp_problem(rng)
    neutral = [BNPPreconditioner(BatchStats.neutral(w), averaging="running")
               for w in mlp.widths[:-1]]
    diff = np.max(np.abs(bnp_step(mlp, p, data, 0.1, neutral) - gd_step(p, mlp.gradient(p, data), 0.1)))
    result.below("bnp_step with stats (0,1) vs gd_step", diff, 0.0)


ALPHA_GRID = tuple(10.0 ** np.arange(-8, 0.01, 0.25))


def best_swept_loss(model, data, step_factory, steps=100):
    """Lowest final loss over ALPHA_GRID; diverged runs are skipped."""
    best = math.inf
    for alpha in ALPHA_GRID:
        try:
            rec = run(model, data, step_factory(alpha), steps=steps)
        except DivergenceError:
            continue
        best = min(best, float(rec.loss[-1]))
    return best


def bnp_conditioning_problem(seed=11):
    rng = np.random.default_rng(seed)
    n = 4
    scales = np.logspace(0, 3, n)
    means = rng.uniform(1, 10, size=n)
    return generate_synthetic(n, 200, scales, means, seed=seed)


def suite_bnp_conditioning(result: SuiteResult):
    data = bnp_conditioning_problem()
    model = LinearRegression(data.inputs.shape[0])
    p = np.zeros(model.num_params)
    kappa_raw, kappa_bnp = layer_conditioning_report(model, p, data, 1, 0)
    result.below("kappa_bnp / kappa_raw", kappa_bnp / kappa_raw, 1.0 / BNP_KAPPA_FACTOR)

    def gd(alpha):
        return make_reg_step(RegMode(), "gd", OptimizerConfig(alpha=alpha))

    def bnp(alpha):
        pcs = [BNPPreconditioner()]
        return make_reg_step(RegMode(), "precond_gd", OptimizerConfig(alpha=alpha), model, data,
                             M=lambda q: BNPOperator(model, q, data, pcs))

    loss_gd = best_swept_loss(model, data, gd)
    loss_bnp = best_swept_loss(model, data, bnp)
    result.below("best BNP loss - best GD loss after 100 steps", loss_bnp - loss_gd, 0.0)


def suite_gradient_proxy(result: SuiteResult):
    lambdas = np.array([1.0, 10.0, 100.0])
    model = Quadratic(np.diag(lambdas), np.zeros(3))
    p_star = model.optimum()
    avg, rows = grad_hessian_row_proxy(model, p_star, num_samples=500, radius=1e-3, seed=12)
    result.at_least("Pearson(avg |g_i|, ||h_i||)", oracles.pearson(avg, rows), PROXY_MIN_CORRELATION)

    rng = np.random.default_rng(12)
    worst = 0.0
    H = model.hessian()
    for i in range(3):
        d = rng.standard_normal(3)
        h = H[i] / np.linalg.norm(H[i])
        d -= (d @ h) * h
        single, _ = grad_hessian_row_proxy(model, p_star, radius=1e-3, directions=[d])
        worst = max(worst, single[i] / rows[i])
    result.below("orthogonal iterate: max |g_i| / ||h_i||", worst, PROXY_ORTHOGONAL_RATIO)


SUITES: Dict[str, Callable[[SuiteResult], None]] = {
    "rate-law": suite_rate_law,
    "perfect-preconditioning": suite_perfect_preconditioning,
    "van-der-sluis": suite_van_der_sluis,
    "theorem3-hessian": suite_layer_hessian,
    "theorem4-centering": suite_centering,
    "standardization": suite_standardization,
    "reg-equivalence": suite_reg_equivalence,
    "adamw-inequivalence": suite_adamw_inequivalence,
    "rmsprop-closed-form": suite_rmsprop_closed_form,
    "bnp-vector-form": suite_bnp_vector_form,
    "bnp-conditioning": suite_bnp_conditioning,
    "gradient-proxy": suite_gradient_proxy,
}


def run_suite(name: str) -> SuiteResult:
    if name not in SUITES:
        raise ValidationError(f"unknown suite {name!r}; choose from {', '.join(SUITES)} or 'all'")
    result = SuiteResult(name)
    started = time.perf_counter()
    SUITES[name](result)
    result.elapsed = time.perf_counter() - started
    return result


def run_suites(name: str = "all") -> List[SuiteResult]:
    names = list(SUITES) if name == "all" else [name]
    return [run_suite(n) for n in names]
