"""Batch normalization and batch normalization preconditioning (BNP).

BN standardizes a layer's inputs inside the network. BNP keeps the network
unchanged and instead preconditions each unit's [bias; weights] gradient
with M = P P^T, where P = U D is built from the mean and standard deviation
of the layer inputs. In z = P^{-1} w coordinates the unit's Hessian becomes
G_e S G_e^T with G the standardized inputs, which is what BN achieves.

Statistics are treated as constants: no gradient flows through them.
"""
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .linalg import condition_number
from .models import MLP, Dataset, layer_hessian

DEFAULT_SIGMA_FLOOR = 1e-3
PER_BATCH = "per_batch"
RUNNING = "running"


@dataclass(frozen=True)
class BatchStats:
    mu: np.ndarray
    sigma: np.ndarray
    count: int = 0

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=np.float64))
        if mu.shape != sigma.shape or mu.ndim != 1:
            raise ValidationError(f"mu {mu.shape} and sigma {sigma.shape} must be matching vectors")
        if np.any(sigma < 0) or not np.all(np.isfinite(sigma)) or not np.all(np.isfinite(mu)):
            raise ValidationError("sigma must be finite and nonnegative, mu finite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def neutral(cls, width: int) -> "BatchStats":
        """mu = 0, sigma = 1: the preconditioner is the identity."""
        return cls(np.zeros(width), np.ones(width), 0)

    @property
    def width(self) -> int:
        return self.mu.size


@dataclass(frozen=True)
class BNParams:
    gamma: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=np.float64))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        if gamma.shape != beta.shape:
            raise ValidationError("gamma and beta must have the same length")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "beta", beta)


@dataclass(frozen=True)
class BNPPreconditioner:
    """Per-layer BNP state.

    With ``averaging='per_batch'`` the statistics are recomputed from every
    batch and ``stats`` is ignored by ``bnp_step``; with ``'running'`` the
    stored ``stats`` are used and refreshed by ``update_running_stats``.
    """

    stats: Optional[BatchStats] = None
    sigma_floor: float = DEFAULT_SIGMA_FLOOR
    averaging: str = PER_BATCH
    momentum: float = 0.9

    def __post_init__(self):
        if not self.sigma_floor > 0:
            raise ValidationError(f"sigma_floor must be positive, got {self.sigma_floor}")
        if self.averaging not in (PER_BATCH, RUNNING):
            raise ValidationError(f"averaging must be '{PER_BATCH}' or '{RUNNING}'")
        if not 0 <= self.momentum <= 1:
            raise ValidationError(f"momentum must be in [0, 1], got {self.momentum}")
        if self.averaging == RUNNING and self.stats is None:
            raise ValidationError("running averaging needs initial stats")

    def effective_sigma(self, stats: Optional[BatchStats] = None) -> np.ndarray:
        stats = stats or self.stats
        return np.maximum(stats.sigma, self.sigma_floor)


def batch_stats(H) -> BatchStats:
    """Per-row population mean and standard deviation of a width x N matrix."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    if H.shape[1] == 0:
        raise ValidationError("batch has no samples")
    mu = H.mean(axis=1)
    return BatchStats(mu, np.sqrt(np.mean((H - mu[:, None]) ** 2, axis=1)), H.shape[1])


def _floored(sigma, sigma_floor):
    return np.maximum(sigma, sigma_floor)


def bn_forward(h, stats: BatchStats, params: BNParams, sigma_floor: float = DEFAULT_SIGMA_FLOOR):
    """gamma * (h - mu) / sigma + beta; h may be one vector or a width x N batch."""
    h = np.asarray(h, dtype=np.float64)
    col = (slice(None),) + (None,) * (h.ndim - 1)
    sigma = _floored(stats.sigma, sigma_floor)
    return params.gamma[col] * (h - stats.mu[col]) / sigma[col] + params.beta[col]


def bn_reparameterize(W, b, params: BNParams):
    """Fold gamma and beta into the next layer: W_hat = W diag(gamma), b_hat = W beta + b."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64)
    if W.shape[1] != params.gamma.size:
        raise ValidationError(f"W has {W.shape[1]} columns but BN width is {params.gamma.size}")
    return W * params.gamma[None, :], W @ params.beta + b


def bnp_matrices(stats: BatchStats, sigma_floor: float = DEFAULT_SIGMA_FLOOR):
    """Dense U, D and P = U D (reference path)."""
    n = stats.width
    U = np.eye(n + 1)
    U[0, 1:] = -stats.mu
    D = np.diag(np.concatenate([[1.0], 1.0 / _floored(stats.sigma, sigma_floor)]))
    return U, D, U @ D


def bnp_apply(g_b, g_w, stats: BatchStats, sigma_floor: float = DEFAULT_SIGMA_FLOOR):
    """P P^T [g_b; g_w] using vector operations only.

    Accepts one unit (scalar g_b, vector g_w) or a whole layer (g_b of
    length n_out, g_w of shape n_out x n_in); all units share the stats.
    """
    g_w = np.asarray(g_w, dtype=np.float64)
    g_b = np.asarray(g_b, dtype=np.float64)
    if g_w.shape[-1] != stats.width:
        raise ValidationError(f"g_w has {g_w.shape[-1]} entries, stats width is {stats.width}")
    inv_var = 1.0 / _floored(stats.sigma, sigma_floor) ** 2
    out_w = (g_w - g_b[..., None] * stats.mu) * inv_var
    out_b = g_b - out_w @ stats.mu
    return out_b, out_w


def update_running_stats(precond: BNPPreconditioner, batch: BatchStats,
                         momentum: Optional[float] = None) -> BNPPreconditioner:
    """Exponential moving average of mu and sigma^2; momentum 0 adopts the batch."""
    momentum = precond.momentum if momentum is None else momentum
    if not 0 <= momentum <= 1:
        raise ValidationError(f"momentum must be in [0, 1], got {momentum}")
    old = precond.stats
    if old is None:
        return replace(precond, stats=batch)
    if old.width != batch.width:
        raise ValidationError("batch stats width does not match the preconditioner")
    mu = momentum * old.mu + (1.0 - momentum) * batch.mu
    var = momentum * old.sigma ** 2 + (1.0 - momentum) * batch.sigma ** 2
    return replace(precond, stats=BatchStats(mu, np.sqrt(var), old.count + batch.count))


def layer_input_stats(mlp: MLP, p, data: Dataset):
    """Batch statistics of h^(l-1) for every layer l = 1..L."""
    _, inputs = mlp.forward(p, data.inputs)
    return [batch_stats(h) for h in inputs]


class BNPOperator:
    """The block-diagonal BNP preconditioner of a whole network at parameters p.

    ``preconds`` has one entry per layer; a None entry leaves that layer's
    gradient untouched, and ``preconds=None`` means per-batch BNP on every
    layer. Per-batch statistics are taken from the forward pass of ``data``
    at ``p``; running ones come from the stored stats.
    """

    def __init__(self, mlp: MLP, p, data: Dataset,
                 preconds: Optional[Sequence[Optional[BNPPreconditioner]]] = None):
        if preconds is None:
            preconds = [BNPPreconditioner()] * mlp.num_layers
        if len(preconds) != mlp.num_layers:
            raise ValidationError(f"need {mlp.num_layers} preconditioners, got {len(preconds)}")
        batch = None
        if any(pc is not None and pc.averaging == PER_BATCH for pc in preconds):
            if data.num_samples < 2:
                raise ValidationError("per-batch BNP statistics need at least 2 samples")
            batch = layer_input_stats(mlp, p, data)
        self.mlp = mlp
        self.size = mlp.num_params
        self.layers = []
        for k, pc in enumerate(preconds):
            if pc is None:
                self.layers.append(None)
            else:
                stats = batch[k] if pc.averaging == PER_BATCH else pc.stats
                self.layers.append((stats, pc.sigma_floor))

    def apply(self, v) -> np.ndarray:
        out = []
        for (g_W, g_b), layer in zip(self.mlp.unflatten(v), self.layers):
            if layer is None:
                out.append((g_W, g_b))
            else:
                new_b, new_W = bnp_apply(g_b, g_W, *layer)
                out.append((new_W, new_b))
        return self.mlp.flatten(out)

    @property
    def matrix(self) -> np.ndarray:
        return np.column_stack([self.apply(e) for e in np.eye(self.size)])


def bnp_precondition(mlp: MLP, p, grad, data: Dataset,
                     preconds: Optional[Sequence[Optional[BNPPreconditioner]]] = None):
    """Apply each layer's BNP preconditioner to the matching slices of ``grad``."""
    return BNPOperator(mlp, p, data, preconds).apply(grad)


def bnp_step(mlp: MLP, p, data: Dataset, alpha: float,
             preconds: Optional[Sequence[Optional[BNPPreconditioner]]] = None):
    """One BNP-preconditioned gradient step on every unit of every layer."""
    p = mlp.check_params(p)
    g = mlp.gradient(p, data)
    return p - alpha * bnp_precondition(mlp, p, g, data, preconds)


def layer_conditioning_report(mlp: MLP, p, data: Dataset, layer: int, unit: int,
                              sigma_floor: float = DEFAULT_SIGMA_FLOOR):
    """(kappa_raw, kappa_bnp) of one unit's Hessian before and after BNP.

    Raises SingularityError when either Hessian is numerically singular.
    """
    parts = layer_hessian(mlp, p, data, layer, unit)
    stats = batch_stats(parts.H_e[1:])
    _, _, P = bnp_matrices(stats, sigma_floor)
    kappa_raw = condition_number(parts.hessian)
    kappa_bnp = condition_number(P.T @ parts.hessian @ P)
    return kappa_raw, kappa_bnp
