"""Experiment commands behind the CLI: diagnose, train and sweep."""
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from ..bnp import RUNNING, BNPOperator, BNPPreconditioner, layer_input_stats, update_running_stats
from ..errors import DivergenceError, NumericalError, SingularityError, ValidationError
from ..linalg import (centering_inequality_check, condition_number, extend, min_max_normalize,
                      row_equilibrate, standardize, sym_eigvals)
from ..models import MLP, LinearRegression, LogisticRegression, MLPSpec, Quadratic
from ..optim import FixedPreconditioner, empirical_rate, optimal_lr, run, theoretical_rate
from ..regularize import make_reg_step
from .config import ExperimentConfig
from .data import load_data, random_quadratic
from .rng import SplitMix64

CSV_HEADER = "step,loss,grad_norm,dist_to_opt"


def fmt(x: float) -> str:
    return format(x, ".17g")


@dataclass
class Problem:
    model: object
    data: object
    p0: np.ndarray
    p_star: Optional[np.ndarray]


def build_problem(config: ExperimentConfig) -> Problem:
    if config.model_kind == "quadratic":
        model = random_quadratic(config.dim, config.kappa, config.seed)
        return Problem(model, None, np.zeros(model.num_params), model.optimum())
    data = load_data(config.data_source, config.targets, seed=config.seed)
    n, m = data.inputs.shape[0], data.targets.shape[0]
    if config.model_kind == "linear":
        model = LinearRegression(n, m)
    elif config.model_kind == "logistic":
        if m != 1:
            raise ValidationError("logistic regression needs exactly one target column")
        model = LogisticRegression(n)
    else:
        widths = tuple(config.widths)
        if widths[0] != n or widths[-1] != m:
            raise ValidationError(
                f"model.widths {widths} do not match data ({n} inputs, {m} targets)")
        model = MLP(MLPSpec(widths, config.activation, config.loss))
    if config.model_kind == "mlp":
        p0 = model.init_params(SplitMix64(config.seed + 1))
    else:
        p0 = np.zeros(model.num_params)
    return Problem(model, data, p0, model.optimum(data))


def _fixed_diagonal(problem: Problem) -> FixedPreconditioner:
    """diag(1 / ||h_i||) from the Hessian rows at the starting point."""
    H = problem.model.hessian(problem.p0, problem.data)
    rows = np.linalg.norm(H, axis=1)
    if np.any(rows == 0):
        raise SingularityError("Hessian has a zero row; fixed diagonal preconditioner undefined")
    return FixedPreconditioner(diagonal=1.0 / rows)


def _bnp_factory(config: ExperimentConfig, problem: Problem):
    model, data = problem.model, problem.data
    if config.averaging != RUNNING:
        pcs = [BNPPreconditioner(sigma_floor=config.sigma_floor)] * model.num_layers
        return lambda p: BNPOperator(model, p, data, pcs)
    running = [BNPPreconditioner(stats=s, sigma_floor=config.sigma_floor, averaging=RUNNING,
                                 momentum=config.momentum)
               for s in layer_input_stats(model, problem.p0, data)]

    def factory(p):
        for k, s in enumerate(layer_input_stats(model, p, data)):
            running[k] = update_running_stats(running[k], s)
        return BNPOperator(model, p, data, running)
    return factory


def build_step(config: ExperimentConfig, problem: Problem):
    optimizer = {"adamw": "adam"}.get(config.optim_kind, config.optim_kind)
    M = None
    if config.precond_kind == "fixed":
        optimizer, M = "precond_gd", _fixed_diagonal(problem)
    elif config.precond_kind == "bnp":
        optimizer, M = "precond_gd", _bnp_factory(config, problem)
    return make_reg_step(config.reg_mode, optimizer, config.optim, problem.model,
                         problem.data, M)


def _preconditioner_matrix(config: ExperimentConfig, problem: Problem, p) -> Optional[np.ndarray]:
    if config.precond_kind == "none" and config.optim_kind == "gd":
        return np.eye(problem.model.num_params)
    if config.precond_kind == "fixed":
        return _fixed_diagonal(problem).matrix
    if config.precond_kind == "bnp":
        pcs = [BNPPreconditioner(sigma_floor=config.sigma_floor)] * problem.model.num_layers
        return BNPOperator(problem.model, p, problem.data, pcs).matrix
    return None


def kappa_diagnostics(config: ExperimentConfig, problem: Problem) -> dict:
    """Condition numbers of the Hessian (at p*, else p0) with and without the preconditioner."""
    p = problem.p_star if problem.p_star is not None else problem.p0
    out = {"hessian": None, "preconditioned": None}
    try:
        H = problem.model.hessian(p, problem.data)
        out["hessian"] = condition_number(H)
        M = _preconditioner_matrix(config, problem, p)
        if M is not None:
            P = np.linalg.cholesky(0.5 * (M + M.T))
            out["preconditioned"] = condition_number(P.T @ H @ P)
    except (SingularityError, np.linalg.LinAlgError):
        pass
    return out


def theoretical_alpha(config: ExperimentConfig, problem: Problem) -> Optional[float]:
    """2 / (lambda_min + lambda_max) of P^T H P when the Hessian is constant."""
    constant = isinstance(problem.model, (Quadratic, LinearRegression))
    if not constant:
        return None
    M = _preconditioner_matrix(config, problem, problem.p0)
    if M is None:
        return None
    H = problem.model.hessian(problem.p0, problem.data)
    try:
        P = np.linalg.cholesky(0.5 * (M + M.T))
    except np.linalg.LinAlgError:
        return None
    w = sym_eigvals(P.T @ H @ P).eigenvalues
    if w[0] <= 0:
        return None
    return optimal_lr(float(w[0]), float(w[-1]))


def _config_summary(config: ExperimentConfig) -> dict:
    d = asdict(config)
    d["widths"] = list(config.widths)
    d["targets"] = list(config.targets)
    return d


def write_run(record, summary: dict, path: str):
    """Per-step CSV at ``path`` and the summary JSON next to it (``.json``)."""
    root, ext = os.path.splitext(path)
    csv_path = path if ext == ".csv" else path + ".csv"
    json_path = (root if ext == ".csv" else path) + ".json"
    os.makedirs(os.path.dirname(os.path.abspath(csv_path)), exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for step, loss, gnorm, dist in record.rows():
            fh.write(f"{step},{fmt(loss)},{fmt(gnorm)},{'' if dist is None else fmt(dist)}\n")
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path


def cmd_train(config: ExperimentConfig, write: bool = True):
    """Run one experiment. Returns (record, summary); writes files when output.path is set.

    A diverged run still writes the rows it kept, then re-raises.
    """
    problem = build_problem(config)
    step = build_step(config, problem)
    diverged = None
    try:
        record = run(problem.model, problem.data, step, config.optim, config.steps,
                     problem.p0, problem.p_star)
    except DivergenceError as exc:
        diverged, record = exc, exc.record
    summary = {
        "config": _config_summary(config),
        "steps": int(record.step[-1]) if record.step.size else 0,
        "final_loss": float(record.loss[-1]) if record.loss.size else None,
        "diverged": diverged is not None,
        "wall_time": record.summary.get("wall_time"),
        "kappa": kappa_diagnostics(config, problem),
        "empirical_rate": None,
    }
    kappa = summary["kappa"]["preconditioned"] or summary["kappa"]["hessian"]
    summary["theoretical_rate"] = theoretical_rate(kappa) if kappa else None
    if record.dist_to_opt is not None and diverged is None:
        try:
            summary["empirical_rate"] = empirical_rate(record)
        except ValidationError:
            pass
    if write and config.output_path:
        write_run(record, summary, config.output_path)
    if diverged is not None:
        raise diverged
    return record, summary


@dataclass
class SweepResult:
    alphas: List[float]
    final_losses: List[float]
    diverged: List[bool]
    theoretical_alpha: Optional[float] = None

    @property
    def best_alpha(self) -> float:
        return self.alphas[int(np.argmin(self.final_losses))]

    @property
    def best_loss(self) -> float:
        return float(np.min(self.final_losses))

    def table(self) -> str:
        lines = ["alpha,final_loss,diverged"]
        for a, loss, div in zip(self.alphas, self.final_losses, self.diverged):
            lines.append(f"{fmt(a)},{fmt(loss)},{int(div)}")
        return "\n".join(lines)


def cmd_sweep(config: ExperimentConfig, alphas: Sequence[float], jobs: int = 1) -> SweepResult:
    """Train once per learning rate; diverged runs score +inf. Results keep alpha order."""
    alphas = [float(a) for a in alphas]
    if not alphas or any(not a > 0 for a in alphas):
        raise ValidationError("sweep needs at least one positive alpha")

    def one(alpha):
        cfg = replace(config.with_alpha(alpha), output_path=None)
        try:
            _, summary = cmd_train(cfg, write=False)
            return summary["final_loss"], False
        except DivergenceError:
            return math.inf, True

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(one, alphas))
    sweep = SweepResult(alphas, [r[0] for r in results], [r[1] for r in results])
    sweep.theoretical_alpha = theoretical_alpha(config, build_problem(config))
    return sweep


@dataclass
class DiagnoseReport:
    num_samples: int
    rows: list = field(default_factory=list)  # (name, kappa or None, rate or None)
    centering_holds: Optional[bool] = None

    def lines(self):
        yield f"samples: {self.num_samples}"
        yield f"{'transform':<14} {'kappa(X_e X_e^T)':>22} {'GD rate':>12}"
        for name, kappa, rate in self.rows:
            k = "singular" if kappa is None else f"{kappa:.6e}"
            r = "-" if rate is None else f"{rate:.6f}"
            yield f"{name:<14} {k:>22} {r:>12}"
        if self.centering_holds is not None:
            yield f"centering inequality holds: {self.centering_holds}"


def cmd_diagnose(data) -> DiagnoseReport:
    """Conditioning of the extended data matrix under the standard input transforms."""
    X = data.inputs
    Xe = extend(X)
    variants = [
        ("raw", Xe),
        ("centered", extend(X - X.mean(axis=1, keepdims=True))),
        ("standardized", extend(standardize(X)[0])),
        ("min-max", extend(min_max_normalize(X))),
    ]
    try:
        variants.append(("equilibrated", row_equilibrate(Xe) @ Xe))
    except ValidationError:
        variants.append(("equilibrated", None))
    report = DiagnoseReport(data.num_samples)
    for name, E in variants:
        kappa = None
        if E is not None:
            try:
                kappa = condition_number(E @ E.T)
            except SingularityError:
                pass
        report.rows.append((name, kappa, None if kappa is None else theoretical_rate(kappa)))
    try:
        kc, kr = centering_inequality_check(X)
        report.centering_holds = bool(kc <= kr + 1e-10)
    except NumericalError:
        report.centering_holds = None
    return report
