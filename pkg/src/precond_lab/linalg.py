"""Dense symmetric linear algebra and conditioning utilities.

Matrices are plain 2-D float64 numpy arrays. The eigensolver is a cyclic
Jacobi method with round-robin (tournament) ordering: every round applies
n/2 disjoint plane rotations at once, which keeps the inner loop in numpy.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import NumericalError, SingularityError, ValidationError

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
SYMMETRY_TOL = 1e-12
SINGULAR_RTOL = 1e-14
VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class SymEig:
    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray] = None


def as_matrix(A, name="A") -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValidationError(f"{name} has non-finite entries")
    return A


def _check_symmetric(A):
    if A.shape[0] != A.shape[1]:
        raise ValidationError(f"matrix must be square, got shape {A.shape}")
    scale = np.max(np.abs(A)) if A.size else 0.0
    asym = np.max(np.abs(A - A.T)) if A.size else 0.0
    if asym > SYMMETRY_TOL * max(scale, np.finfo(float).tiny):
        raise ValidationError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")


def _round_robin(n):
    """Yield arrays (P, Q) of disjoint index pairs covering all pairs once per sweep."""
    m = n + (n % 2)
    players = list(range(m))
    for _ in range(m - 1):
        left = players[: m // 2]
        right = players[m // 2:][::-1]
        pairs = [(a, b) if a < b else (b, a) for a, b in zip(left, right)]
        pairs = [pq for pq in pairs if pq[1] < n]  # drop the bye when n is odd
        yield np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])
        players = [players[0], players[-1]] + players[1:-1]


def _off_norm(A):
    return np.linalg.norm(A - np.diag(np.diag(A)))


def sym_eigvals(A, vectors: bool = False) -> SymEig:
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Iterates until the off-diagonal Frobenius norm is at most
    ``1e-12 * ||A||_F``. Eigenvalues come back in ascending order; with
    ``vectors=True`` the columns of ``eigenvectors`` are matching
    orthonormal eigenvectors.
    """
    A = as_matrix(A)
    _check_symmetric(A)
    n = A.shape[0]
    A = 0.5 * (A + A.T)
    V = np.eye(n) if vectors else None
    fro = np.linalg.norm(A)
    if n == 0:
        return SymEig(np.zeros(0), V)
    target = JACOBI_TOL * fro
    schedule = list(_round_robin(n)) if n > 1 else []

    sweeps = 0
    while _off_norm(A) > target:
        if sweeps >= JACOBI_MAX_SWEEPS:
            raise NumericalError(
                f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps "
                f"(off-diagonal norm {_off_norm(A):.3e})")
        for P, Q in schedule:
            apq = A[P, Q]
            active = apq != 0.0
            if not np.any(active):
                continue
            P, Q, apq = P[active], Q[active], apq[active]
            tau = (A[Q, Q] - A[P, P]) / (2.0 * apq)
            t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            rp, rq = A[P, :].copy(), A[Q, :].copy()
            A[P, :] = c[:, None] * rp - s[:, None] * rq
            A[Q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = A[:, P].copy(), A[:, Q].copy()
            A[:, P] = cp * c - cq * s
            A[:, Q] = cp * s + cq * c
            A[P, Q] = 0.0
            A[Q, P] = 0.0
            if V is not None:
                vp, vq = V[:, P].copy(), V[:, Q].copy()
                V[:, P] = vp * c - vq * s
                V[:, Q] = vp * s + vq * c
        sweeps += 1

    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return SymEig(w[order], V[:, order] if V is not None else None)


def _ratio(w, what):
    lmin, lmax = float(w[0]), float(w[-1])
    if lmax <= 0.0 or lmin <= SINGULAR_RTOL * lmax:
        raise SingularityError(
            f"{what} is singular or indefinite: lambda_min={lmin:.6g}, lambda_max={lmax:.6g}",
            lambda_min=lmin, lambda_max=lmax)
    return lmax / lmin


def condition_number(A) -> float:
    """Spectral condition number lambda_max / lambda_min of an SPD matrix."""
    return _ratio(sym_eigvals(A).eigenvalues, "matrix")


def rect_condition_number(A) -> float:
    """Ratio of largest to smallest singular value, via the smaller Gram matrix.

    Raises SingularityError when the matrix is (numerically) rank deficient.
    """
    A = as_matrix(A)
    m, n = A.shape
    if min(m, n) == 0:
        raise ValidationError("empty matrix has no condition number")
    gram = A @ A.T if m <= n else A.T @ A
    return float(np.sqrt(_ratio(sym_eigvals(gram).eigenvalues, "Gram matrix")))


def row_equilibrate(A, t: float = 1.0) -> np.ndarray:
    """Diagonal D = t * diag(1/||a_i||) so that every row of D @ A has 2-norm t."""
    A = as_matrix(A)
    if not t > 0:
        raise ValidationError(f"t must be positive, got {t}")
    norms = np.linalg.norm(A, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValidationError(f"row {int(zero[0])} of A is zero; cannot equilibrate")
    return np.diag(t / norms)


def extend(X) -> np.ndarray:
    """Prepend a row of ones: X_e = [e^T; X]."""
    X = as_matrix(X, "X")
    if X.shape[1] == 0:
        raise ValidationError("X has no columns (samples)")
    return np.vstack([np.ones((1, X.shape[1])), X])


def standardize(X) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center and scale each feature (row) to population mean 0, std 1.

    Features with variance <= 1e-12 get sigma = 1, so they come out as
    zero rows rather than NaN.
    """
    X = as_matrix(X, "X")
    if X.shape[1] == 0:
        raise ValidationError("X has no columns (samples)")
    mu = X.mean(axis=1)
    centered = X - mu[:, None]
    var = np.mean(centered ** 2, axis=1)
    sigma = np.where(var > VAR_FLOOR, np.sqrt(var), 1.0)
    return centered / sigma[:, None], mu, sigma


def min_max_normalize(X) -> np.ndarray:
    """Affinely map each feature onto [0, 1]; constant features map to 0."""
    X = as_matrix(X, "X")
    if X.shape[1] == 0:
        raise ValidationError("X has no columns (samples)")
    lo = X.min(axis=1, keepdims=True)
    span = X.max(axis=1, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (X - lo) / safe, 0.0)


def centering_inequality_check(X) -> Tuple[float, float]:
    """Condition numbers of [e^T; X - mu e^T] and [e^T; X].

    Returns ``(kappa_centered, kappa_raw)``. Centering makes the data rows
    orthogonal to the ones row, so ``kappa_centered <= kappa_raw`` is
    expected; the caller asserts it.
    """
    X = as_matrix(X, "X")
    n, N = X.shape
    if N < n + 1:
        raise SingularityError(
            f"[e^T; X] is {n + 1}x{N}; full row rank needs at least {n + 1} samples")
    mu = X.mean(axis=1, keepdims=True)
    return rect_condition_number(extend(X - mu)), rect_condition_number(extend(X))
