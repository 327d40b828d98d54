"""Regularization combined with preconditioning.

With p = P z and M = P P^T, a penalty can be written in the original
coordinates p or in the preconditioned coordinates z, and the two choices
give different p-space updates once M is not the identity. Four schemes are
provided (L2 and squared-gradient-norm, each in p or in z) plus AdamW-style
decoupled weight decay. Gradient regularization needs Hessian-vector
products, computed here by central differences of the gradient.
"""
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence

import numpy as np

from .errors import NumericalError, ValidationError
from .optim import (ADAPTIVE_STEPS, OptimizerConfig, OptimizerState, adam_step,
                    as_preconditioner, gd_step, make_step, precond_gd_step)

REG_KINDS = ("none", "l2_in_p", "l2_in_z", "grad_reg_in_p", "grad_reg_in_z",
             "decoupled_weight_decay")


@dataclass(frozen=True)
class RegMode:
    kind: str = "none"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in REG_KINDS:
            raise ValidationError(f"regularization kind must be one of {REG_KINDS}, got {self.kind!r}")
        if not self.lam >= 0:
            raise ValidationError(f"lambda must be >= 0, got {self.lam}")
        if self.kind == "none" and self.lam != 0:
            raise ValidationError("kind 'none' requires lambda = 0")


def hvp(model, p, v, data=None) -> np.ndarray:
    """Hessian-vector product by central differences of the gradient along v.

    Step h = 1e-5 / (1 + ||v||). Exact (up to round-off) for quadratics.
    """
    p = model.check_params(p)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != p.shape:
        raise ValidationError(f"v has shape {v.shape}, expected {p.shape}")
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return np.zeros_like(p)
    h = 1e-5 / (1.0 + norm)
    g_plus = model.gradient(p + h * v, data)
    g_minus = model.gradient(p - h * v, data)
    if not (np.all(np.isfinite(g_plus)) and np.all(np.isfinite(g_minus))):
        raise NumericalError("non-finite gradient while forming a Hessian-vector product")
    return (g_plus - g_minus) / (2.0 * h)


def step_l2_in_z(p, g, alpha, lam, M):
    """Penalty lam * ||z||^2: acts as weight decay, p' = p - alpha M g - 2 alpha lam p."""
    p = np.asarray(p, dtype=np.float64)
    M = as_preconditioner(M, p.size)
    return p - alpha * (M.apply(g) + 2.0 * lam * p)


def step_l2_in_p(p, g, alpha, lam, M):
    """Penalty lam * ||p||^2 with M applied to the whole regularized gradient."""
    p = np.asarray(p, dtype=np.float64)
    return precond_gd_step(p, np.asarray(g, dtype=np.float64) + 2.0 * lam * p, alpha, M)


def step_grad_reg_in_p(model, p, alpha, lam, M, data=None, g=None):
    """Penalty lam * ||grad_p L||^2: p' = p - alpha M (g + 2 lam H g)."""
    p = model.check_params(p)
    g = model.gradient(p, data) if g is None else np.asarray(g, dtype=np.float64)
    if lam == 0:
        return precond_gd_step(p, g, alpha, M)
    return precond_gd_step(p, g + 2.0 * lam * hvp(model, p, g, data), alpha, M)


def step_grad_reg_in_z(model, p, alpha, lam, M, data=None, g=None):
    """Penalty lam * ||grad_z L(P z)||^2: p' = p - alpha M g - 2 alpha lam M H M g."""
    p = model.check_params(p)
    M = as_preconditioner(M, p.size)
    g = model.gradient(p, data) if g is None else np.asarray(g, dtype=np.float64)
    Mg = M.apply(g)
    if lam == 0:
        return p - alpha * Mg
    return p - alpha * (Mg + 2.0 * lam * M.apply(hvp(model, p, Mg, data)))


def adamw_step(state: OptimizerState, p, g, alpha, lam, config: OptimizerConfig):
    """Adam step on the bare loss, then decay p by alpha * lam * p outside the preconditioner."""
    p = np.asarray(p, dtype=np.float64)
    state, p_adam = adam_step(state, p, g, replace(config, alpha=alpha))
    return state, p_adam - alpha * lam * p


def make_reg_step(mode: RegMode, optimizer: str, config: OptimizerConfig, model=None,
                  data=None, M=None):
    """Compose an optimizer with a regularization scheme into ``step(state, p, g)``.

    For 'precond_gd', ``M`` is a preconditioner or a callable returning one
    for the current iterate (e.g. BNP, whose statistics move with p).
    For adaptive optimizers, 'l2_in_p' feeds g + 2 lam p to the optimizer,
    'l2_in_z' subtracts 2 alpha lam p after the step and
    'decoupled_weight_decay' subtracts alpha lam p; gradient regularization
    needs a fixed M and is rejected.
    """
    alpha, lam = config.alpha, mode.lam
    kind = mode.kind if lam != 0 else "none"
    if optimizer in ADAPTIVE_STEPS:
        base = make_step(optimizer, config)
        if kind == "none":
            return base
        if kind == "l2_in_p":
            return lambda s, p, g: base(s, p, g + 2.0 * lam * p)
        decay = {"l2_in_z": 2.0 * alpha * lam, "decoupled_weight_decay": alpha * lam}.get(kind)
        if decay is None:
            raise ValidationError(f"{kind} needs a fixed preconditioner, not {optimizer!r}")

        def step(s, p, g):
            s, q = base(s, p, g)
            return s, q - decay * p
        return step

    if optimizer == "gd":
        fixed = None
    elif optimizer == "precond_gd":
        if M is None:
            raise ValidationError("precond_gd needs a preconditioner M")
        fixed = None if callable(M) and not hasattr(M, "apply") else as_preconditioner(M)
    else:
        raise ValidationError(f"unknown optimizer {optimizer!r}")

    def step(s, p, g):
        if optimizer == "gd":
            pre = as_preconditioner(None, p.size)
        else:
            pre = fixed if fixed is not None else M(p)
        if kind == "none":
            q = precond_gd_step(p, g, alpha, pre)
        elif kind == "decoupled_weight_decay":
            q = precond_gd_step(p, g, alpha, pre) - alpha * lam * p
        elif kind == "l2_in_p":
            q = step_l2_in_p(p, g, alpha, lam, pre)
        elif kind == "l2_in_z":
            q = step_l2_in_z(p, g, alpha, lam, pre)
        elif kind == "grad_reg_in_p":
            q = step_grad_reg_in_p(model, p, alpha, lam, pre, data, g=g)
        else:
            q = step_grad_reg_in_z(model, p, alpha, lam, pre, data, g=g)
        return replace(s, t=s.t + 1), q
    return step


@dataclass
class NoEquivalenceReport:
    optimizer: str
    lambda_w: float
    steps: int
    distances: Dict[float, float] = field(default_factory=dict)

    @property
    def min_distance(self) -> float:
        return min(self.distances.values()) if self.distances else 0.0

    @property
    def best_lambda(self) -> Optional[float]:
        if not self.distances:
            return None
        return min(self.distances, key=self.distances.get)


def verify_no_equivalence(model, data, alpha, lambda_w, lambda_grid: Sequence[float], steps: int,
                          p0=None, config: Optional[OptimizerConfig] = None,
                          optimizer: str = "adam") -> NoEquivalenceReport:
    """Compare decoupled decay against L2 regularization over a grid of lambdas.

    For each lambda, runs the optimizer on L + lambda ||p||^2 and the same
    optimizer on L with decay alpha * lambda_w * p, from the same start.
    The distance for a lambda is the largest ||p_t - p_t'|| over the run.
    ``optimizer`` is 'adam' or 'gd'; for 'gd' lambda = lambda_w / 2 gives
    identical trajectories.
    """
    if optimizer not in ("adam", "gd"):
        raise ValidationError(f"optimizer must be 'adam' or 'gd', got {optimizer!r}")
    config = replace(config or OptimizerConfig(), alpha=alpha)
    p0 = model.check_params(np.zeros(model.num_params) if p0 is None else p0)
    report = NoEquivalenceReport(optimizer, lambda_w, steps)

    def decoupled():
        state, p, path = OptimizerState.zeros(p0.size), p0.copy(), []
        for _ in range(steps):
            g = model.gradient(p, data)
            if optimizer == "adam":
                state, p = adamw_step(state, p, g, alpha, lambda_w, config)
            else:
                p = gd_step(p, g, alpha) - alpha * lambda_w * p
            path.append(p)
        return path

    reference = decoupled()
    for lam in lambda_grid:
        state, p, dist = OptimizerState.zeros(p0.size), p0.copy(), 0.0
        for t in range(steps):
            g = model.gradient(p, data) + 2.0 * lam * p
            if optimizer == "adam":
                state, p = adam_step(state, p, g, config)
            else:
                p = gd_step(p, g, alpha)
            dist = max(dist, float(np.linalg.norm(p - reference[t])))
        report.distances[float(lam)] = dist
    return report
