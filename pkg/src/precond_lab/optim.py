"""Optimizers written as preconditioned gradient descent.

Every optimizer here is an update p' = p - alpha * M g for some symmetric
positive definite M: the identity (plain GD), a fixed matrix, or the diagonal
matrices that AdaGrad, RMSProp and Adam build from gradient magnitudes.
Step functions are pure; state objects are immutable and replaced each step.
"""
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from .errors import DivergenceError, ValidationError
from .linalg import condition_number, sym_eigvals

ZERO_INIT = "zero_init_bias_corrected"
FIRST_GRADIENT_INIT = "first_gradient_init"
INIT_CONVENTIONS = (ZERO_INIT, FIRST_GRADIENT_INIT)

DIVERGENCE_LOSS = 1e12


@dataclass(frozen=True)
class OptimizerConfig:
    alpha: float = 0.01
    rho: float = 0.9
    rho_hat: float = 0.9
    epsilon: float = 1e-8
    init_convention: str = FIRST_GRADIENT_INIT

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")
        if not 0 <= self.rho < 1:
            raise ValidationError(f"rho must be in [0, 1), got {self.rho}")
        if not 0 <= self.rho_hat < 1:
            raise ValidationError(f"rho_hat must be in [0, 1), got {self.rho_hat}")
        if not self.epsilon >= 0:
            raise ValidationError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.init_convention not in INIT_CONVENTIONS:
            raise ValidationError(
                f"init_convention must be one of {INIT_CONVENTIONS}, got {self.init_convention!r}")


@dataclass(frozen=True)
class OptimizerState:
    t: int
    r: np.ndarray
    m: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "OptimizerState":
        return cls(0, np.zeros(n), np.zeros(n))


class FixedPreconditioner:
    """M = P P^T, symmetric positive definite, held dense or as a diagonal."""

    def __init__(self, M=None, diagonal=None):
        if (M is None) == (diagonal is None):
            raise ValidationError("give exactly one of M or diagonal")
        if diagonal is not None:
            d = np.asarray(diagonal, dtype=np.float64)
            if d.ndim != 1 or not np.all(np.isfinite(d)) or np.any(d <= 0):
                raise ValidationError("diagonal preconditioner needs finite positive entries")
            self.diagonal, self._M = d, None
            self.size = d.size
            return
        M = np.asarray(M, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValidationError(f"M must be square, got shape {M.shape}")
        if not np.all(np.isfinite(M)):
            raise ValidationError("M has non-finite entries")
        scale = np.max(np.abs(M), initial=0.0)
        if np.max(np.abs(M - M.T), initial=0.0) > 1e-12 * scale:
            raise ValidationError("M must be symmetric")
        M = 0.5 * (M + M.T)
        w = sym_eigvals(M).eigenvalues
        if w.size and w[0] <= 0:
            raise ValidationError(f"M must be positive definite (lambda_min = {w[0]:.3e})")
        self.diagonal, self._M = None, M
        self.size = M.shape[0]

    @classmethod
    def identity(cls, n: int) -> "FixedPreconditioner":
        return cls(diagonal=np.ones(n))

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.diagonal) if self._M is None else self._M.copy()

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.size,):
            raise ValidationError(f"vector has shape {v.shape}, preconditioner is {self.size}x{self.size}")
        return self.diagonal * v if self._M is None else self._M @ v

    def factor(self) -> np.ndarray:
        """A factor P with M = P P^T (Cholesky; diagonal square root when diagonal)."""
        if self._M is None:
            return np.diag(np.sqrt(self.diagonal))
        return np.linalg.cholesky(self._M)


def as_preconditioner(M, n: Optional[int] = None):
    """Coerce None (identity), a 1-D diagonal or a dense matrix.

    Anything already exposing ``apply(v)`` is passed through unchanged.
    """
    if hasattr(M, "apply"):
        return M
    if M is None:
        if n is None:
            raise ValidationError("identity preconditioner needs a dimension")
        return FixedPreconditioner.identity(n)
    M = np.asarray(M, dtype=np.float64)
    return FixedPreconditioner(diagonal=M) if M.ndim == 1 else FixedPreconditioner(M)


def gd_step(p, g, alpha):
    return np.asarray(p, dtype=np.float64) - alpha * np.asarray(g, dtype=np.float64)


def precond_gd_step(p, g, alpha, M):
    M = as_preconditioner(M, np.size(p))
    return np.asarray(p, dtype=np.float64) - alpha * M.apply(g)


def precond_kappa(M, hessian) -> float:
    """Condition number of M H, computed from the symmetric form P^T H P."""
    H = np.asarray(hessian, dtype=np.float64)
    P = as_preconditioner(M, H.shape[0]).factor()
    return condition_number(P.T @ H @ P)


def optimal_lr(lambda_min: float, lambda_max: float) -> float:
    if not 0 < lambda_min <= lambda_max:
        raise ValidationError(
            f"need 0 < lambda_min <= lambda_max, got {lambda_min}, {lambda_max}")
    return 2.0 / (lambda_min + lambda_max)


def theoretical_rate(kappa: float) -> float:
    if not kappa >= 1:
        raise ValidationError(f"condition number must be >= 1, got {kappa}")
    if math.isinf(kappa):
        return 1.0
    return (kappa - 1.0) / (kappa + 1.0)


def _bias_factor(rho, t):
    try:
        return 1.0 - rho ** t
    except OverflowError:
        return 1.0


def adagrad_step(state: OptimizerState, p, g, config: OptimizerConfig):
    g = np.asarray(g, dtype=np.float64)
    r = state.r + g * g
    p_new = np.asarray(p, dtype=np.float64) - config.alpha * g / (np.sqrt(r) + config.epsilon)
    return OptimizerState(state.t + 1, r, state.m), p_new


def _rms_accumulate(state, g, config):
    if state.t == 0 and config.init_convention == FIRST_GRADIENT_INIT:
        return g * g
    return config.rho * state.r + (1.0 - config.rho) * g * g


def rmsprop_step(state: OptimizerState, p, g, config: OptimizerConfig):
    g = np.asarray(g, dtype=np.float64)
    t = state.t + 1
    r = _rms_accumulate(state, g, config)
    r_hat = r / _bias_factor(config.rho, t) if config.init_convention == ZERO_INIT else r
    p_new = np.asarray(p, dtype=np.float64) - config.alpha * g / (np.sqrt(r_hat) + config.epsilon)
    return OptimizerState(t, r, state.m), p_new


def rmsprop_closed_form(g_sequence, rho: float) -> np.ndarray:
    """r_t written directly as a weighted average of g_1^2 .. g_t^2.

    Equals the RMSProp recursion started from r_1 = g_1^2.
    """
    G = np.atleast_2d(np.asarray(g_sequence, dtype=np.float64))
    t = G.shape[0]
    if t == 0:
        raise ValidationError("need at least one gradient")
    sq = G * G
    if t == 1:
        return sq[0].copy()
    weights = rho ** np.arange(t - 2, -1, -1, dtype=np.float64)  # rho^(t-i), i = 2..t
    avg = weights @ sq[1:] / weights.sum()
    lead = rho ** (t - 1)
    return lead * sq[0] + (1.0 - lead) * avg


def adam_step(state: OptimizerState, p, g, config: OptimizerConfig):
    g = np.asarray(g, dtype=np.float64)
    t = state.t + 1
    if state.t == 0 and config.init_convention == FIRST_GRADIENT_INIT:
        m, r = g.copy(), g * g
    else:
        m = config.rho_hat * state.m + (1.0 - config.rho_hat) * g
        r = config.rho * state.r + (1.0 - config.rho) * g * g
    if config.init_convention == ZERO_INIT:
        m_hat = m / _bias_factor(config.rho_hat, t)
        r_hat = r / _bias_factor(config.rho, t)
    else:
        m_hat, r_hat = m, r
    p_new = np.asarray(p, dtype=np.float64) - config.alpha * m_hat / (np.sqrt(r_hat) + config.epsilon)
    return OptimizerState(t, r, m), p_new


def adaptive_diagonal(state: OptimizerState, config: OptimizerConfig, kind: str) -> np.ndarray:
    """Diagonal of the preconditioner M_t an adaptive optimizer applied at its last step."""
    if kind == "adagrad":
        return 1.0 / (np.sqrt(state.r) + config.epsilon)
    r = state.r
    if config.init_convention == ZERO_INIT and state.t > 0:
        r = r / _bias_factor(config.rho, state.t)
    return 1.0 / (np.sqrt(r) + config.epsilon)


ADAPTIVE_STEPS = {"adagrad": adagrad_step, "rmsprop": rmsprop_step, "adam": adam_step}
OPTIMIZERS = ("gd", "precond_gd") + tuple(ADAPTIVE_STEPS)

StepFn = Callable[[OptimizerState, np.ndarray, np.ndarray], tuple]


def make_step(kind: str, config: OptimizerConfig, M=None) -> StepFn:
    """Uniform ``step(state, p, g) -> (state, p)`` for a named optimizer."""
    if kind == "gd":
        return lambda s, p, g: (replace(s, t=s.t + 1), gd_step(p, g, config.alpha))
    if kind == "precond_gd":
        if M is None:
            raise ValidationError("precond_gd needs a preconditioner M")
        pre = as_preconditioner(M)
        return lambda s, p, g: (replace(s, t=s.t + 1), precond_gd_step(p, g, config.alpha, pre))
    if kind in ADAPTIVE_STEPS:
        fn = ADAPTIVE_STEPS[kind]
        return lambda s, p, g: fn(s, p, g, config)
    raise ValidationError(f"unknown optimizer {kind!r}; choose from {OPTIMIZERS}")


@dataclass
class RunRecord:
    """One trajectory: rows for steps 0..T (row 0 is the starting point)."""

    step: np.ndarray
    loss: np.ndarray
    grad_norm: np.ndarray
    dist_to_opt: Optional[np.ndarray]
    p_final: np.ndarray
    summary: dict = field(default_factory=dict)

    def rows(self):
        for i in range(self.step.size):
            dist = None if self.dist_to_opt is None else float(self.dist_to_opt[i])
            yield int(self.step[i]), float(self.loss[i]), float(self.grad_norm[i]), dist


def run(model, data, optimizer: Union[str, StepFn], config: Optional[OptimizerConfig] = None,
        steps: int = 100, p0=None, p_star=None, M=None, state: Optional[OptimizerState] = None,
        gradient_fn=None) -> RunRecord:
    """Drive a step function for ``steps`` iterations and record the trajectory.

    ``p_star`` defaults to the model's closed-form optimum when it has one.
    ``gradient_fn(p)`` overrides the model gradient (e.g. a regularized loss).
    Raises DivergenceError (carrying the partial record) when the loss
    leaves the finite range or exceeds 1e12.
    """
    config = config or OptimizerConfig()
    step_fn = optimizer if callable(optimizer) else make_step(optimizer, config, M)
    p = model.check_params(np.zeros(model.num_params) if p0 is None else p0)
    if p_star is None:
        p_star = model.optimum(data)
    grad = gradient_fn or (lambda q: model.gradient(q, data))
    state = state or OptimizerState.zeros(p.size)
    losses, gnorms, dists = [], [], []
    started = time.perf_counter()

    def record():
        dist = None if p_star is None else np.asarray(dists)
        return RunRecord(np.arange(len(losses)), np.asarray(losses), np.asarray(gnorms),
                         dist, p.copy(), {"steps": len(losses) - 1})

    for t in range(steps + 1):
        value = model.loss(p, data)
        if not math.isfinite(value) or value > DIVERGENCE_LOSS:
            raise DivergenceError(
                f"loss {value:.6g} at step {t} (alpha={config.alpha:g}); run aborted",
                record=record())
        g = grad(p)
        losses.append(value)
        gnorms.append(float(np.linalg.norm(g)))
        if p_star is not None:
            dists.append(float(np.linalg.norm(p - p_star)))
        if t < steps:
            state, p_next = step_fn(state, p, g)
            if not np.all(np.isfinite(p_next)):
                raise DivergenceError(f"non-finite parameters after step {t + 1}", record=record())
            p = p_next

    rec = record()
    rec.summary.update(final_loss=losses[-1], wall_time=time.perf_counter() - started)
    return rec


def empirical_rate(record: RunRecord, tail_fraction: float = 0.5) -> float:
    """Geometric-mean contraction of ||p_t - p*|| over the trailing part of a run.

    Steps after the distance falls to 1e-12 of its starting value are
    ignored (round-off territory); a run that gets there in one step
    reports rate 0.
    """
    if record.dist_to_opt is None:
        raise ValidationError("record has no distances; p* unknown")
    if not 0 < tail_fraction <= 1:
        raise ValidationError(f"tail_fraction must be in (0, 1], got {tail_fraction}")
    d = np.asarray(record.dist_to_opt, dtype=np.float64)
    if d.size < 2 or d[0] == 0.0:
        return 0.0
    below = np.flatnonzero(d <= 1e-12 * d[0])
    if below.size:
        d = d[:below[0]]
    if d.size < 2:
        return 0.0
    k = max(1, int(tail_fraction * (d.size - 1)))
    tail = d[-k - 1:]
    ratios = tail[1:] / tail[:-1]
    if np.any(ratios >= 1.5):
        raise ValidationError(
            f"distances are not contracting over the tail (max ratio {ratios.max():.3g})")
    return float((tail[-1] / tail[0]) ** (1.0 / k))
