"""Experiment configuration: flat ``section.key = value`` text files.

Blank lines and lines starting with '#' are ignored. Example::

    model.kind = linear
    optim.kind = gd
    optim.alpha = 0.05
    precond.kind = bnp
    run.steps = 200
    run.seed = 7
    data.source = synthetic:n=3,N=200,logscales=1;1000,means=1;5;10
    output.path = runs/bnp
"""
import os
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Tuple

from ..errors import IngestionError, ValidationError
from ..models import ACTIVATIONS, LOSSES
from ..optim import OptimizerConfig
from ..regularize import RegMode

SEED_ENV = "PRECOND_LAB_SEED"
MODEL_KINDS = ("quadratic", "linear", "logistic", "mlp")
OPTIM_KINDS = ("gd", "adagrad", "rmsprop", "adam", "adamw")
PRECOND_KINDS = ("none", "fixed", "adaptive", "bnp")


@dataclass(frozen=True)
class ExperimentConfig:
    model_kind: str = "quadratic"
    dim: int = 4
    kappa: float = 100.0
    widths: Tuple[int, ...] = ()
    activation: str = "tanh"
    loss: str = "squared_error"
    optim_kind: str = "gd"
    optim: OptimizerConfig = field(default_factory=OptimizerConfig)
    reg: RegMode = field(default_factory=RegMode)
    precond_kind: str = "none"
    sigma_floor: float = 1e-3
    averaging: str = "per_batch"
    momentum: float = 0.9
    steps: int = 100
    seed: int = 0
    data_source: Optional[str] = None
    targets: Tuple[str, ...] = ("y",)
    output_path: Optional[str] = None

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValidationError(f"model.kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if self.optim_kind not in OPTIM_KINDS:
            raise ValidationError(f"optim.kind must be one of {OPTIM_KINDS}, got {self.optim_kind!r}")
        if self.precond_kind not in PRECOND_KINDS:
            raise ValidationError(
                f"precond.kind must be one of {PRECOND_KINDS}, got {self.precond_kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"model.activation {self.activation!r} not supported")
        if self.loss not in LOSSES:
            raise ValidationError(f"model.loss {self.loss!r} not supported")
        if self.steps < 0:
            raise ValidationError("run.steps must be >= 0")
        adaptive = self.optim_kind in ("adagrad", "rmsprop", "adam", "adamw")
        if adaptive and self.precond_kind not in ("none", "adaptive"):
            raise ValidationError(
                f"optim.kind={self.optim_kind} is its own preconditioner; "
                f"precond.kind must be 'adaptive' or 'none', got {self.precond_kind!r}")
        if not adaptive and self.precond_kind == "adaptive":
            raise ValidationError("precond.kind=adaptive needs an adaptive optim.kind")
        if self.optim_kind == "adamw" and self.reg.kind not in ("none", "decoupled_weight_decay"):
            raise ValidationError("optim.kind=adamw already implies decoupled weight decay")
        if self.precond_kind == "bnp" and self.model_kind == "quadratic":
            raise ValidationError("BNP needs a network model (linear, logistic or mlp)")
        if self.model_kind == "quadratic":
            if self.dim < 1 or self.kappa < 1:
                raise ValidationError("quadratic needs model.dim >= 1 and model.kappa >= 1")
        elif self.data_source is None:
            raise ValidationError(f"model.kind={self.model_kind} needs data.source")
        if self.model_kind == "mlp" and len(self.widths) < 2:
            raise ValidationError("model.kind=mlp needs model.widths with at least two entries")

    @property
    def reg_mode(self) -> RegMode:
        """Regularization actually applied (adamw folds into decoupled decay)."""
        if self.optim_kind == "adamw" and self.reg.kind != "none":
            return RegMode("decoupled_weight_decay", self.reg.lam)
        return self.reg

    def with_alpha(self, alpha: float) -> "ExperimentConfig":
        return replace(self, optim=replace(self.optim, alpha=alpha))


def parse_text(text: str, origin: str = "<config>") -> dict:
    entries = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{origin}:{line_no}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValidationError(f"{origin}:{line_no}: empty key")
        if key in entries:
            raise ValidationError(f"{origin}:{line_no}: duplicate key {key!r}")
        entries[key] = value
    return entries


def _converters():
    ints = lambda v: tuple(int(x) for x in v.split(",") if x.strip())
    names = lambda v: tuple(x.strip() for x in v.split(",") if x.strip())
    return {
        "model.kind": ("model_kind", str),
        "model.dim": ("dim", int),
        "model.kappa": ("kappa", float),
        "model.widths": ("widths", ints),
        "model.activation": ("activation", str),
        "model.loss": ("loss", str),
        "optim.kind": ("optim_kind", str),
        "optim.alpha": ("alpha", float),
        "optim.rho": ("rho", float),
        "optim.rho_hat": ("rho_hat", float),
        "optim.epsilon": ("epsilon", float),
        "optim.init": ("init_convention", str),
        "reg.kind": ("reg_kind", str),
        "reg.lambda": ("lam", float),
        "precond.kind": ("precond_kind", str),
        "precond.sigma_floor": ("sigma_floor", float),
        "precond.averaging": ("averaging", str),
        "precond.momentum": ("momentum", float),
        "run.steps": ("steps", int),
        "run.seed": ("seed", int),
        "data.source": ("data_source", str),
        "data.targets": ("targets", names),
        "output.path": ("output_path", str),
    }


def config_from_dict(entries: dict, seed_override: Optional[int] = None,
                     env=None) -> ExperimentConfig:
    """Build a validated config. Seed precedence: override > $PRECOND_LAB_SEED > file."""
    conv = _converters()
    values = {}
    for key, raw in entries.items():
        if key not in conv:
            raise ValidationError(f"unknown config key {key!r}")
        name, fn = conv[key]
        try:
            values[name] = fn(raw)
        except ValueError:
            raise ValidationError(f"config key {key!r}: cannot parse {raw!r}") from None
    optim_keys = {f.name for f in fields(OptimizerConfig)}
    optim = OptimizerConfig(**{k: values.pop(k) for k in list(values) if k in optim_keys})
    reg = RegMode(values.pop("reg_kind", "none"), values.pop("lam", 0.0))
    env = os.environ if env is None else env
    if seed_override is not None:
        values["seed"] = seed_override
    elif env.get(SEED_ENV):
        try:
            values["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ValidationError(f"${SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    return ExperimentConfig(optim=optim, reg=reg, **values)


def load_config(path, seed_override: Optional[int] = None, env=None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise IngestionError(f"{path}: {exc.strerror}") from None
    return config_from_dict(parse_text(text, str(path)), seed_override, env)
