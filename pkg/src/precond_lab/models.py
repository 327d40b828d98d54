"""Differentiable loss models with analytic gradients and Hessian oracles.

Parameter vectors are flat float64 arrays. For networks the layout is, layer
by layer, the weight matrix W (row-major, n_l x n_{l-1}) followed by the bias
b (n_l). Data matrices hold one sample per column, as in the layer equations
h^(l) = g(W^(l) h^(l-1) + b^(l)).

Layers are numbered 1..L (layer 0 is the input); units within a layer are
0-based.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError
from .linalg import extend

FD_GRAD_STEP = 1e-5
FD_HESS_STEP = 1e-4
LPP_STEP = 1e-4


def sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


ACTIVATIONS = {
    "identity": (lambda a: a, lambda a: np.ones_like(a)),
    "tanh": (np.tanh, lambda a: 1.0 - np.tanh(a) ** 2),
    "sigmoid": (sigmoid, lambda a: sigmoid(a) * (1.0 - sigmoid(a))),
    "softplus": (lambda a: np.logaddexp(0.0, a), sigmoid),
}
LOSSES = ("squared_error", "cross_entropy")


@dataclass(frozen=True)
class Dataset:
    """Samples as columns: ``inputs`` is n x N, ``targets`` is m x N."""

    inputs: np.ndarray
    targets: np.ndarray
    truth: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        Y = np.atleast_2d(np.asarray(self.targets, dtype=np.float64))
        if X.ndim != 2 or Y.ndim != 2:
            raise ValidationError("inputs and targets must be 2-D")
        if X.shape[1] != Y.shape[1]:
            raise ValidationError(
                f"inputs have {X.shape[1]} samples but targets have {Y.shape[1]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValidationError("dataset has non-finite entries")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", Y)

    @property
    def num_samples(self) -> int:
        return self.inputs.shape[1]

    def subset(self, columns) -> "Dataset":
        return Dataset(self.inputs[:, columns], self.targets[:, columns])


@dataclass(frozen=True)
class LayerHessianParts:
    H_e: np.ndarray
    S: np.ndarray
    hessian: np.ndarray


class LossModel:
    """Interface: loss value, analytic gradient and Hessian at a flat parameter vector."""

    num_params: int

    def loss(self, p, data) -> float:
        raise NotImplementedError

    def gradient(self, p, data) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, p, data) -> np.ndarray:
        return fd_hessian(self, p, data)

    def optimum(self, data) -> Optional[np.ndarray]:
        """Known minimizer, or None when it has no closed form."""
        return None

    def check_params(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        if p.shape != (self.num_params,):
            raise ValidationError(
                f"parameter vector has shape {p.shape}, model needs ({self.num_params},)")
        if not np.all(np.isfinite(p)):
            raise ValidationError("parameter vector has non-finite entries")
        return p


class Quadratic(LossModel):
    """L(p) = 1/2 (p - c)^T A (p - c); data is ignored."""

    def __init__(self, A, center=None):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValidationError(f"A must be square, got shape {A.shape}")
        if np.max(np.abs(A - A.T), initial=0.0) > 1e-12 * np.max(np.abs(A), initial=1.0):
            raise ValidationError("A must be symmetric")
        self.A = 0.5 * (A + A.T)
        self.num_params = A.shape[0]
        self.center = np.zeros(self.num_params) if center is None else np.asarray(center, float)
        if self.center.shape != (self.num_params,):
            raise ValidationError("center has the wrong length")

    def loss(self, p, data=None):
        d = self.check_params(p) - self.center
        return 0.5 * float(d @ self.A @ d)

    def gradient(self, p, data=None):
        return self.A @ (self.check_params(p) - self.center)

    def hessian(self, p=None, data=None):
        return self.A.copy()

    def optimum(self, data=None):
        return self.center.copy()


@dataclass(frozen=True)
class MLPSpec:
    layer_widths: Tuple[int, ...]
    activation: str = "tanh"
    loss: str = "squared_error"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ValidationError(f"need at least one layer with positive widths, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(
                f"activation must be one of {sorted(ACTIVATIONS)}, got {self.activation!r}")
        if self.loss not in LOSSES:
            raise ValidationError(f"loss must be one of {LOSSES}, got {self.loss!r}")


class MLP(LossModel):
    """Fully connected network with a mean per-example loss.

    Hidden layers use ``spec.activation``. The output link follows the loss:
    identity for squared error, logistic sigmoid for cross entropy (computed
    from logits for stability).
    """

    def __init__(self, spec: MLPSpec):
        self.spec = spec
        self.widths = spec.layer_widths
        self.num_layers = len(self.widths) - 1
        self._act, self._dact = ACTIVATIONS[spec.activation]
        offsets = [0]
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            offsets.append(offsets[-1] + fan_out * fan_in + fan_out)
        self._offsets = offsets
        self.num_params = offsets[-1]

    # parameter layout

    def unflatten(self, p) -> List[Tuple[np.ndarray, np.ndarray]]:
        p = self.check_params(p)
        params = []
        for k in range(self.num_layers):
            fan_in, fan_out = self.widths[k], self.widths[k + 1]
            start = self._offsets[k]
            W = p[start:start + fan_out * fan_in].reshape(fan_out, fan_in)
            b = p[start + fan_out * fan_in:self._offsets[k + 1]]
            params.append((W, b))
        return params

    @staticmethod
    def flatten(params) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in params])

    def _check_layer_unit(self, layer, unit=None):
        if not 1 <= layer <= self.num_layers:
            raise ValidationError(f"layer must be in 1..{self.num_layers}, got {layer}")
        if unit is not None and not 0 <= unit < self.widths[layer]:
            raise ValidationError(
                f"unit must be in 0..{self.widths[layer] - 1} for layer {layer}, got {unit}")

    def unit_indices(self, layer: int, unit: int) -> np.ndarray:
        """Flat indices of [b_i, w_i^T] for one unit, in that order."""
        self._check_layer_unit(layer, unit)
        k = layer - 1
        fan_in, fan_out = self.widths[k], self.widths[k + 1]
        start = self._offsets[k]
        w_idx = start + unit * fan_in + np.arange(fan_in)
        b_idx = start + fan_out * fan_in + unit
        return np.concatenate([[b_idx], w_idx])

    def init_params(self, rng, scale=None) -> np.ndarray:
        params = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            s = 1.0 / np.sqrt(fan_in) if scale is None else scale
            params.append((s * rng.standard_normal((fan_out, fan_in)),
                           s * rng.standard_normal(fan_out)))
        return self.flatten(params)

    # forward / backward

    def _check_data(self, data: Dataset):
        if data.inputs.shape[0] != self.widths[0]:
            raise ValidationError(
                f"inputs have {data.inputs.shape[0]} features, network expects {self.widths[0]}")
        if data.targets.shape[0] != self.widths[-1]:
            raise ValidationError(
                f"targets have {data.targets.shape[0]} rows, network outputs {self.widths[-1]}")

    def forward(self, p, X):
        """Return (pre_activations, layer_inputs), one entry per layer.

        ``layer_inputs[k]`` is h^(k) (with h^(0) = X) and ``pre[k]`` is
        a^(k+1) = W^(k+1) h^(k) + b^(k+1). The last ``pre`` entry holds the
        output logits / predictions before the output link.
        """
        params = self.unflatten(p)
        h = np.asarray(X, dtype=np.float64)
        pre, inputs = [], []
        for k, (W, b) in enumerate(params):
            inputs.append(h)
            a = W @ h + b[:, None]
            pre.append(a)
            if k < self.num_layers - 1:
                h = self._act(a)
        return pre, inputs

    def predict(self, p, X):
        out = self.forward(p, X)[0][-1]
        return sigmoid(out) if self.spec.loss == "cross_entropy" else out

    def _per_example_loss(self, out, Y):
        if self.spec.loss == "squared_error":
            return 0.5 * np.sum((out - Y) ** 2, axis=0)
        return np.sum(np.logaddexp(0.0, out) - Y * out, axis=0)

    def _dloss_dout(self, out, Y):
        if self.spec.loss == "squared_error":
            return out - Y
        return sigmoid(out) - Y

    def per_example_loss(self, p, data: Dataset) -> np.ndarray:
        self._check_data(data)
        return self._per_example_loss(self.forward(p, data.inputs)[0][-1], data.targets)

    def loss(self, p, data: Dataset) -> float:
        return float(np.mean(self.per_example_loss(p, data)))

    def gradient(self, p, data: Dataset) -> np.ndarray:
        self._check_data(data)
        params = self.unflatten(p)
        pre, inputs = self.forward(p, data.inputs)
        delta = self._dloss_dout(pre[-1], data.targets) / data.num_samples
        grads = [None] * self.num_layers
        for k in range(self.num_layers - 1, -1, -1):
            grads[k] = (delta @ inputs[k].T, delta.sum(axis=1))
            if k > 0:
                delta = (params[k][0].T @ delta) * self._dact(pre[k - 1])
        return self.flatten(grads)

    def _tail(self, params, k, a, Y):
        """Per-example losses and d(loss_j)/d(a_j) when layer k+1 has pre-activation a."""
        pres = [a]
        for j in range(k + 1, self.num_layers):
            W, b = params[j]
            pres.append(W @ self._act(pres[-1]) + b[:, None])
        delta = self._dloss_dout(pres[-1], Y)
        for j in range(self.num_layers - 1, k, -1):
            delta = (params[j][0].T @ delta) * self._dact(pres[j - 1 - k])
        return self._per_example_loss(pres[-1], Y), delta


class LinearRegression(MLP):
    """y_hat = W x + b with mean loss 1/2 ||y_hat - y||^2."""

    def __init__(self, n_features: int, n_outputs: int = 1):
        super().__init__(MLPSpec((n_features, n_outputs), "identity", "squared_error"))

    def hessian(self, p, data):
        self.check_params(p)
        self._check_data(data)
        Xe = extend(data.inputs)
        block = Xe @ Xe.T / data.num_samples
        H = np.zeros((self.num_params, self.num_params))
        for unit in range(self.widths[1]):
            idx = self.unit_indices(1, unit)
            H[np.ix_(idx, idx)] = block
        return H

    def optimum(self, data):
        self._check_data(data)
        Xe = extend(data.inputs)
        coef, *_ = np.linalg.lstsq(Xe.T, data.targets.T, rcond=None)
        p = np.zeros(self.num_params)
        for unit in range(self.widths[1]):
            p[self.unit_indices(1, unit)] = coef[:, unit]
        return p


class LogisticRegression(MLP):
    """y_hat = sigmoid(w^T x + b) with mean binary cross entropy."""

    def __init__(self, n_features: int):
        super().__init__(MLPSpec((n_features, 1), "identity", "cross_entropy"))

    def hessian(self, p, data):
        self._check_data(data)
        y_hat = self.predict(p, data.inputs)[0]
        Xe = extend(data.inputs)
        S = y_hat * (1.0 - y_hat) / data.num_samples
        idx = self.unit_indices(1, 0)
        H = np.zeros((self.num_params, self.num_params))
        H[np.ix_(idx, idx)] = (Xe * S) @ Xe.T
        return H


# module-level operations


def loss(model: LossModel, p, data=None) -> float:
    return model.loss(p, data)


def gradient(model: LossModel, p, data=None) -> np.ndarray:
    return model.gradient(p, data)


def fd_gradient(model: LossModel, p, data=None, h: float = FD_GRAD_STEP) -> np.ndarray:
    """Central differences of the loss, step h * (1 + |p_i|) per coordinate."""
    p = model.check_params(p)
    g = np.empty_like(p)
    for i in range(p.size):
        hi = h * (1.0 + abs(p[i]))
        e = np.zeros_like(p)
        e[i] = hi
        g[i] = (model.loss(p + e, data) - model.loss(p - e, data)) / (2.0 * hi)
    return g


def fd_hessian(model: LossModel, p, data=None, h: float = FD_HESS_STEP) -> np.ndarray:
    """Central differences of the analytic gradient, symmetrized."""
    p = model.check_params(p)
    n = p.size
    H = np.empty((n, n))
    for i in range(n):
        hi = h * (1.0 + abs(p[i]))
        e = np.zeros(n)
        e[i] = hi
        H[:, i] = (model.gradient(p + e, data) - model.gradient(p - e, data)) / (2.0 * hi)
    return 0.5 * (H + H.T)


def hessian_full(model: LossModel, p, data=None) -> np.ndarray:
    return model.hessian(p, data)


def layer_hessian(mlp: MLP, p, data: Dataset, layer: int, unit: int) -> LayerHessianParts:
    """Hessian of the mean loss in one unit's [bias, weights] as H_e S H_e^T.

    H_e stacks a ones row on the layer's inputs h^(layer-1) for every
    sample. S_jj is L''_j / N, where L''_j is the second derivative of sample
    j's loss with respect to that unit's pre-activation, obtained by central
    differences of the back-propagated first derivative (step
    1e-4 * (1 + |a_j|)).
    """
    mlp._check_layer_unit(layer, unit)
    mlp._check_data(data)
    params = mlp.unflatten(p)
    k = layer - 1
    pre, inputs = mlp.forward(p, data.inputs)
    a = pre[k]
    step = LPP_STEP * (1.0 + np.abs(a[unit]))
    up, down = a.copy(), a.copy()
    up[unit] += step
    down[unit] -= step
    _, d_up = mlp._tail(params, k, up, data.targets)
    _, d_down = mlp._tail(params, k, down, data.targets)
    lpp = (d_up[unit] - d_down[unit]) / (2.0 * step)
    S = lpp / data.num_samples
    H_e = extend(inputs[k])
    hess = (H_e * S) @ H_e.T
    return LayerHessianParts(H_e=H_e, S=S, hessian=0.5 * (hess + hess.T))


def grad_hessian_row_proxy(model: LossModel, p_star, data=None, num_samples: int = 500,
                           radius: float = 1e-3, seed: int = 0, directions=None):
    """Average |grad L| near a stationary point, alongside Hessian row norms.

    Perturbations are uniform random directions scaled to ``radius`` unless
    explicit ``directions`` (one per row) are given. Near p*, g_i is about
    h_i^T (p - p*), so the averages should track ||h_i|| unless the
    perturbations happen to be orthogonal to h_i.
    """
    p_star = model.check_params(p_star)
    g0 = model.gradient(p_star, data)
    if np.linalg.norm(g0) > 1e-6:
        raise ValidationError(
            f"p_star is not stationary: ||grad L|| = {np.linalg.norm(g0):.3e}")
    if directions is None:
        rng = np.random.default_rng(seed)
        directions = rng.standard_normal((num_samples, p_star.size))
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValidationError("perturbation directions must be nonzero")
    deltas = radius * directions / norms
    avg = np.mean([np.abs(model.gradient(p_star + d, data)) for d in deltas], axis=0)
    H = model.hessian(p_star, data)
    return avg, np.linalg.norm(H, axis=1)
