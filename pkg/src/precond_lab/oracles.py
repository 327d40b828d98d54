"""Independent reference computations used by the verification suites and tests.

Nothing here calls the code path it is meant to check: eigenvalues come from
bisection on Sylvester inertia counts, condition numbers of sampled scalings
from LAPACK SVD, and regularized updates from explicit gradient descent in
z = P^{-1} p coordinates.
"""
import numpy as np


def svd_condition(A) -> float:
    s = np.linalg.svd(np.asarray(A, dtype=np.float64), compute_uv=False)
    return float(s[0] / s[-1])


def sampled_min_diag_condition(A, samples: int, rng, log10_range: float = 3.0) -> float:
    """Smallest kappa(D0 A) over random positive diagonals D0 (log-uniform entries)."""
    A = np.asarray(A, dtype=np.float64)
    D0 = 10.0 ** rng.uniform(-log10_range, log10_range, size=(samples, A.shape[0]))
    s = np.linalg.svd(D0[:, :, None] * A[None], compute_uv=False)
    return float(np.min(s[:, 0] / s[:, -1]))


def inertia_below(A, x) -> int:
    """Number of eigenvalues of symmetric A below x (negative LDL^T pivots of A - xI)."""
    B = np.array(A, dtype=np.float64) - x * np.eye(len(A))
    n = len(B)
    count = 0
    tiny = np.finfo(float).eps * max(1.0, np.max(np.abs(B)))
    for k in range(n):
        d = B[k, k]
        if d == 0.0:
            d = -tiny
        if d < 0:
            count += 1
        if k + 1 < n:
            col = B[k + 1:, k] / d
            B[k + 1:, k + 1:] -= np.outer(col, B[k, k + 1:])
    return count


def bisection_eigenvalues(A, tol: float = 1e-13) -> np.ndarray:
    """All eigenvalues of symmetric A, ascending, by bisection inside Gershgorin bounds."""
    A = np.asarray(A, dtype=np.float64)
    radius = np.sum(np.abs(A), axis=1) - np.abs(np.diag(A))
    lo0 = float(np.min(np.diag(A) - radius)) - 1.0
    hi0 = float(np.max(np.diag(A) + radius)) + 1.0
    scale = max(abs(lo0), abs(hi0))
    out = []
    for k in range(len(A)):
        lo, hi = lo0, hi0
        while hi - lo > tol * scale:
            mid = 0.5 * (lo + hi)
            if inertia_below(A, mid) > k:
                hi = mid
            else:
                lo = mid
        out.append(0.5 * (lo + hi))
    return np.array(out)


def z_space_gd(grad_z, P, p0, alpha: float, steps: int):
    """Plain GD on a z-space objective; returns the path mapped back, [p_0, ..., p_steps]."""
    P = np.asarray(P, dtype=np.float64)
    z = np.linalg.solve(P, np.asarray(p0, dtype=np.float64))
    path = [P @ z]
    for _ in range(steps):
        z = z - alpha * grad_z(z)
        path.append(P @ z)
    return path


def l2_in_z_objective_grad(grad_p, P, lam):
    """Gradient in z of L(Pz) + lam ||z||^2."""
    return lambda z: P.T @ grad_p(P @ z) + 2.0 * lam * z


def l2_in_p_objective_grad(grad_p, P, lam):
    """Gradient in z of L(Pz) + lam ||Pz||^2."""
    return lambda z: P.T @ grad_p(P @ z) + 2.0 * lam * (P.T @ (P @ z))


def grad_reg_in_z_objective_grad(grad_p, hess_p, P, lam):
    """Gradient in z of L(Pz) + lam ||P^T grad L(Pz)||^2, with an explicit Hessian."""
    def grad(z):
        p = P @ z
        gz = P.T @ grad_p(p)
        Hz = P.T @ hess_p(p) @ P
        return gz + 2.0 * lam * Hz @ gz
    return grad


def grad_reg_in_p_objective_grad(grad_p, hess_p, P, lam):
    """Gradient in z of L(Pz) + lam ||grad L(Pz)||^2, with an explicit Hessian."""
    def grad(z):
        p = P @ z
        g = grad_p(p)
        return P.T @ (g + 2.0 * lam * hess_p(p) @ g)
    return grad


def fd_grad_reg_gradient(model, p, data, lam, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar L(p) + lam ||grad L(p)||^2."""
    p = np.asarray(p, dtype=np.float64)

    def objective(q):
        g = model.gradient(q, data)
        return model.loss(q, data) + lam * float(g @ g)

    out = np.empty_like(p)
    for i in range(p.size):
        hi = h * (1.0 + abs(p[i]))
        e = np.zeros_like(p)
        e[i] = hi
        out[i] = (objective(p + e) - objective(p - e)) / (2.0 * hi)
    return out


def pearson(x, y) -> float:
    return float(np.corrcoef(np.asarray(x, float), np.asarray(y, float))[0, 1])
