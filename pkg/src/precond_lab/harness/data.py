"""Synthetic data, CSV ingestion and random problem generators."""
import csv
import os
from typing import Optional, Sequence

import numpy as np

from ..errors import IngestionError, ValidationError
from ..models import Dataset, Quadratic, sigmoid
from .rng import SplitMix64

TARGET_KINDS = ("linear", "logistic")


def _per_feature(values, n, name):
    arr = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if arr.size == 1:
        arr = np.full(n, arr[0])
    if arr.shape != (n,):
        raise ValidationError(f"{name} needs {n} entries, got {arr.size}")
    return arr


def generate_synthetic(n_features: int, N: int, scales=1.0, means=0.0, seed: int = 0,
                       target: str = "linear", noise: float = 0.1) -> Dataset:
    """Gaussian features with controlled per-feature std and mean.

    Targets come from ground-truth weights drawn so that every feature
    contributes on the same scale: ``truth = [b, w]`` with
    y = w^T x + b (+ noise) for 'linear', or y ~ Bernoulli(sigmoid(w^T x + b))
    for 'logistic'. Deterministic in ``seed`` (SplitMix64).
    """
    if n_features < 1 or N < 1:
        raise ValidationError(f"need n_features >= 1 and N >= 1, got {n_features}, {N}")
    if target not in TARGET_KINDS:
        raise ValidationError(f"target must be one of {TARGET_KINDS}, got {target!r}")
    scales = _per_feature(scales, n_features, "scales")
    means = _per_feature(means, n_features, "means")
    if np.any(scales <= 0):
        raise ValidationError("feature scales must be positive")
    rng = SplitMix64(seed)
    X = means[:, None] + scales[:, None] * rng.normal((n_features, N))
    w = rng.normal(n_features) / scales
    b = float(rng.normal(1)[0]) - float(w @ means)
    logits = w @ X + b
    if target == "linear":
        y = logits + noise * rng.normal(N)
    else:
        y = (rng.uniform(N) < sigmoid(logits)).astype(np.float64)
    return Dataset(X, y[None, :], truth=np.concatenate([[b], w]))


def parse_synthetic(source: str, seed: Optional[int] = None) -> Dataset:
    """Build a dataset from ``synthetic:n=3,N=200,scales=1;10;100,means=0,target=linear``.

    Keys: n, N, scales, means (';'-separated or one value), target, noise,
    seed. ``logscales=lo;hi`` spaces stds logarithmically instead.
    """
    if not source.startswith("synthetic:"):
        raise ValidationError(f"not a synthetic source: {source!r}")
    opts = {}
    for item in filter(None, source[len("synthetic:"):].split(",")):
        if "=" not in item:
            raise ValidationError(f"synthetic option {item!r} is not key=value")
        key, value = item.split("=", 1)
        opts[key.strip()] = value.strip()
    known = {"n", "N", "scales", "logscales", "means", "target", "noise", "seed"}
    unknown = set(opts) - known
    if unknown:
        raise ValidationError(f"unknown synthetic options: {sorted(unknown)}")
    try:
        n = int(opts.get("n", 2))
        N = int(opts.get("N", 200))
        floats = lambda s: [float(v) for v in s.split(";")]
        if "logscales" in opts:
            lo, hi = floats(opts["logscales"])
            scales = np.logspace(np.log10(lo), np.log10(hi), n)
        else:
            scales = floats(opts.get("scales", "1"))
        means = floats(opts.get("means", "0"))
        noise = float(opts.get("noise", 0.1))
        seed = int(opts["seed"]) if "seed" in opts else (0 if seed is None else seed)
    except ValueError as exc:
        raise ValidationError(f"bad synthetic source {source!r}: {exc}") from None
    return generate_synthetic(n, N, scales, means, seed, opts.get("target", "linear"), noise)


def load_csv(path, target_columns: Sequence[str]) -> Dataset:
    """Read a header-first, comma-separated numeric table.

    Columns named in ``target_columns`` become targets, the rest inputs.
    Errors carry the file, 1-based line number and column name.
    """
    if not os.path.isfile(path):
        raise IngestionError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: file is empty") from None
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise IngestionError(
                    f"{path}:{line_no}: row has {len(row)} cells, header has {len(header)}")
            values = []
            for col, cell in zip(header, row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise IngestionError(
                        f"{path}:{line_no}: column {col!r}: cannot parse {cell.strip()!r} as a number"
                    ) from None
            rows.append(values)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    missing = [t for t in target_columns if t not in header]
    if missing:
        raise IngestionError(f"{path}: target columns not in header: {missing}")
    table = np.array(rows).T
    target_idx = [header.index(t) for t in target_columns]
    input_idx = [i for i in range(len(header)) if i not in target_idx]
    if not input_idx:
        raise IngestionError(f"{path}: no input columns left after removing targets")
    return Dataset(table[input_idx], table[target_idx])


def load_data(source: str, targets: Sequence[str] = ("y",), seed: Optional[int] = None) -> Dataset:
    if source.startswith("synthetic:"):
        return parse_synthetic(source, seed)
    return load_csv(source, targets)


def random_spd(n: int, kappa: float, rng) -> np.ndarray:
    """Q diag(lambda) Q^T with lambda_min = 1, lambda_max = kappa, interior log-uniform."""
    if n < 1 or kappa < 1:
        raise ValidationError(f"need n >= 1 and kappa >= 1, got {n}, {kappa}")
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    Q = Q * np.sign(np.diag(R))
    if n == 1:
        eig = np.array([1.0])
    else:
        inner = 10.0 ** (np.log10(kappa) * rng.random(n - 2)) if n > 2 else np.zeros(0)
        eig = np.concatenate([[1.0], np.sort(inner), [kappa]])
    A = (Q * eig) @ Q.T
    return 0.5 * (A + A.T)


def random_quadratic(n: int, kappa: float, seed: int = 0) -> Quadratic:
    rng = SplitMix64(seed)
    return Quadratic(random_spd(n, kappa, rng), center=rng.normal(n))

