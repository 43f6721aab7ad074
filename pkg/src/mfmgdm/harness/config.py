"""Experiment configuration: defaults, validation and key-value config files."""

from __future__ import annotations

import ast
import configparser
import dataclasses
from dataclasses import dataclass, field, fields

from ..errors import ConfigurationError

__all__ = ["ExperimentConfig", "load_config", "FULL_SCALE"]

# full-size synthetic benchmark; desk-scale defaults below
FULL_SCALE = dict(d=1024, batch_size=128, replicas=128, target_paths=10000, mgdm_batch_size=1, steps=300)

MODELS = ("ar", "cir")
ENERGIES = ("acf", "squared-acf")
STOP_RULES = ("steps", "epsilon")
TRANSFORMS = ("log-returns", "differences")


@dataclass
class ExperimentConfig:
    """Every knob of the benchmark, trace and finance experiments.

    Defaults (desk scale):

    * ``model="ar"`` with ``ar_coefficients=(0.1,)``; ``ar_sigma=None`` picks
      the innovation scale giving unit marginal variance.
    * CIR parameters ``cir_kappa=0.5, cir_theta=1.0, cir_sigma=1.0, cir_dt=1.0``.
    * ``energy="acf"`` with ``lags=(1, 0)``; the squared-ACF energy uses
      ``max_lag=20`` and no centering.
    * ``d=128`` path length, ``batch_size=32`` particles, ``replicas=32``
      Monte Carlo batches, ``target_paths=512`` paths for the target energy.
    * ``mgdm_batch_size=None`` runs MGDM with ``batch_size`` independent
      particles per replica (more samples for the KL estimate); the
      full-scale preset uses 1.
    * ``steps=60``, ``gamma=None`` and ``gamma_scale=0.1``: the step size is
      ``gamma_scale / lambda_max`` at the initial batch.
    * ``mgdm_stop="steps"`` runs MGDM for ``steps`` steps; ``mf_stop="epsilon"``
      stops the mean-field run once every batch mean is within ``epsilon``.
      ``epsilon=None`` means ``||std(Phi)|| / sqrt(N)`` for the target.
    * ``projection=None`` means on for CIR and off otherwise.
    * ``init="auto"``: Gaussian with the target variance for AR targets, the
      positive maximum-entropy fit for CIR targets.
    * ``n_sweep=(8, 32, 128)`` batch sizes for the mean-field sweep.
    * finance: ``data_file`` CSV with ``date,value``, ``transform="log-returns"``,
      ``finance_energy="squared-acf"``,
      ``finance_steps=2000`` cap, ``eps_rel=0.05`` (tolerance relative to
      ``||alpha||``), ``finance_gamma_scale=0.5``.
    * ``seed=0``, ``out="results"``, all three entropy normalizations.
    """

    model: str = "ar"
    ar_coefficients: tuple = (0.1,)
    ar_sigma: float | None = None
    cir_kappa: float = 0.5
    cir_theta: float = 1.0
    cir_sigma: float = 1.0
    cir_dt: float = 1.0
    energy: str = "acf"
    lags: tuple = (1, 0)
    max_lag: int = 20
    center: bool = False
    center_squares: bool = False
    d: int = 128
    batch_size: int = 32
    replicas: int = 32
    target_paths: int = 512
    mgdm_batch_size: int | None = None
    steps: int = 60
    gamma: float | None = None
    gamma_scale: float = 0.1
    epsilon: float | None = None
    mgdm_stop: str = "steps"
    mf_stop: str = "epsilon"
    projection: bool | None = None
    init: str = "auto"
    init_variance: float | None = None
    modes: tuple = ("mgdm", "mf")
    n_sweep: tuple = (8, 32, 128)
    diagnostics: bool = True
    data_file: str | None = None
    transform: str = "log-returns"
    finance_energy: str = "squared-acf"
    finance_steps: int = 2000
    finance_gamma_scale: float = 0.5
    eps_rel: float = 0.05
    seed: int = 0
    out: str = "results"
    normalizations: tuple = ("total", "per-sample", "rate")
    full_scale: bool = False
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.full_scale:
            for k, v in FULL_SCALE.items():
                setattr(self, k, v)
        self.validate()

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigurationError(msg)

        need(self.model in MODELS, f"model must be one of {MODELS}")
        need(self.energy in ENERGIES and self.finance_energy in ENERGIES, f"energies must be one of {ENERGIES}")
        need(self.mgdm_stop in STOP_RULES and self.mf_stop in STOP_RULES, f"stop rules must be in {STOP_RULES}")
        need(self.transform in TRANSFORMS, f"transform must be one of {TRANSFORMS}")
        need(self.d >= 2 and self.batch_size >= 1 and self.replicas >= 1, "d >= 2, batch_size >= 1, replicas >= 1")
        need(self.target_paths >= 2, "target_paths must be at least 2")
        need(self.steps >= 1 and self.finance_steps >= 1, "steps must be at least 1")
        need(self.gamma is None or self.gamma > 0, "gamma must be positive")
        need(self.gamma_scale > 0 and self.finance_gamma_scale > 0, "gamma scales must be positive")
        need(self.epsilon is None or self.epsilon >= 0, "epsilon must be nonnegative")
        need(self.eps_rel > 0, "eps_rel must be positive")
        need(self.mgdm_batch_size is None or self.mgdm_batch_size >= 1, "mgdm_batch_size must be at least 1")
        need(set(self.modes) <= {"mgdm", "mf"} and len(self.modes) > 0, "modes must be a subset of {mgdm, mf}")
        need(all(int(n) >= 1 for n in self.n_sweep), "n_sweep entries must be positive")
        need(self.init in ("auto", "gaussian", "exponential", "truncnorm"), "unknown init")
        need(set(self.normalizations) <= {"total", "per-sample", "rate"}, "unknown normalization")
        need(self.model != "ar" or len(self.ar_coefficients) >= 1, "AR model needs coefficients")
        need(min(self.cir_kappa, self.cir_theta, self.cir_sigma, self.cir_dt) > 0, "CIR parameters must be positive")
        self.lags = tuple(int(v) for v in self.lags)
        self.ar_coefficients = tuple(float(v) for v in self.ar_coefficients)
        self.modes = tuple(self.modes)
        self.n_sweep = tuple(int(v) for v in self.n_sweep)
        self.normalizations = tuple(self.normalizations)
        return self

    @property
    def use_projection(self):
        return self.model == "cir" if self.projection is None else bool(self.projection)

    def to_dict(self):
        out = dataclasses.asdict(self)
        out.pop("extra")
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}

    def replace(self, **changes):
        base = self.to_dict()
        base["full_scale"] = False  # sizes already applied
        base.update(changes)
        return ExperimentConfig(**base)


def _parse_value(text):
    text = text.strip()
    low = text.lower()
    if low in ("none", "null", ""):
        return None
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def coerce(name, value):
    """Cast a parsed value to the type of field ``name``."""
    kinds = {f.name: f for f in fields(ExperimentConfig)}
    if name not in kinds or name == "extra":
        raise ConfigurationError(f"unknown config key {name!r}")
    if value is None:
        return None
    default = kinds[name].default
    if isinstance(default, tuple):
        if isinstance(value, (int, float, str)):
            value = (value,) if not isinstance(value, str) else tuple(v.strip() for v in value.split(","))
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{name} expects true/false, got {value!r}")
        return value
    if name in ("ar_sigma", "gamma", "epsilon", "init_variance") or isinstance(default, float):
        return float(value)
    if name == "mgdm_batch_size" or isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise ConfigurationError(f"{name} expects an integer")
        return int(value)
    return value


def load_config(path=None, **overrides):
    """Read a ``key = value`` file (no section header needed) and apply overrides.

    Values are Python literals (``(0.2, -0.1)``, ``1e-3``, ``none``, ``true``)
    or bare strings.  Lines starting with ``#`` are comments.
    """
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
        if not text.lstrip().startswith("["):
            text = "[experiment]\n" + text
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigurationError(f"malformed config file {path}: {exc}") from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                values[key.replace("-", "_")] = coerce(key.replace("-", "_"), _parse_value(raw))
    for key, val in overrides.items():
        if val is not None:
            values[key] = coerce(key, val)
    return ExperimentConfig(**values)
