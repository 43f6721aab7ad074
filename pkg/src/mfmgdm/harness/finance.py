"""Price-file ingestion and the financial-statistics pipeline."""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .. import likelihood as lik
from ..descent import DescentConfig, run_descent
from ..energy import AcfEnergy, SquaredAcfEnergy
from ..errors import ConfigurationError, DataError
from ..models import InitDistribution, fit_positive_init

log = logging.getLogger(__name__)

__all__ = [
    "FinancialDataset",
    "FinanceReport",
    "ingest_prices",
    "sample_acf",
    "path_statistics",
    "run_financial_pipeline",
]

N_SPLITS = 4
STAT_LAGS = 20


@dataclass
class FinancialDataset:
    """Transformed observations cut into ``N_SPLITS`` disjoint equal slices.

    ``signal[i]`` is the transform of ``values[i], values[i+1]`` and is dated
    ``dates[i+1]``; any remainder beyond ``N_SPLITS * slice_length`` is dropped
    from the end.
    """

    name: str
    dates: list
    values: np.ndarray
    transform: str
    signal: np.ndarray
    slices: np.ndarray  # (N_SPLITS, slice_length)

    @property
    def training(self):
        return self.slices[0]

    @property
    def validation(self):
        return self.slices[1:]

    @property
    def slice_length(self):
        return self.slices.shape[1]


def ingest_prices(path, transform="log-returns", name=None):
    """Read a ``date,value`` CSV (ISO dates, header row) and split it."""
    if transform not in ("log-returns", "differences"):
        raise ConfigurationError(f"unknown transform {transform!r}")
    dates, values = [], []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["date", "value"]:
            raise DataError(f"{path}: line 1: expected header 'date,value', got {header!r}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DataError(f"{path}: line {line}: expected 2 fields, got {len(row)}")
            try:
                day = _dt.date.fromisoformat(row[0].strip())
                val = float(row[1])
            except ValueError as exc:
                raise DataError(f"{path}: line {line}: cannot parse {row!r} ({exc})") from None
            if not math.isfinite(val):
                raise DataError(f"{path}: line {line}: non-finite value")
            if dates and day <= dates[-1]:
                raise DataError(f"{path}: line {line}: date {day} does not follow {dates[-1]}")
            dates.append(day)
            values.append(val)
    values = np.array(values, dtype=float)
    if len(values) < 2 * N_SPLITS + 1:
        raise DataError(f"{path}: {len(values)} observations are too few for {N_SPLITS} slices")
    if transform == "log-returns":
        if np.any(values <= 0):
            raise DataError(f"{path}: log-returns need strictly positive values")
        signal = np.diff(np.log(values))
    else:
        signal = np.diff(values)
    m = len(signal) // N_SPLITS
    slices = signal[: N_SPLITS * m].reshape(N_SPLITS, m)
    return FinancialDataset(name or str(path), dates, values, transform, signal, slices)


def sample_acf(paths, max_lag=STAT_LAGS):
    """Per-path sample autocorrelation at lags ``1..max_lag`` (mean removed)."""
    x = np.atleast_2d(np.asarray(paths, dtype=float))
    x = x - x.mean(axis=-1, keepdims=True)
    d = x.shape[-1]
    c0 = np.einsum("...i,...i->...", x, x) / d
    out = np.empty(x.shape[:-1] + (max_lag,))
    for lag in range(1, max_lag + 1):
        out[..., lag - 1] = np.einsum("...i,...i->...", x[..., lag:], x[..., :-lag]) / d
    with np.errstate(invalid="ignore", divide="ignore"):
        return out / c0[..., None]


def path_statistics(paths, edges, max_lag=STAT_LAGS):
    """ACF of the signal, ACF of its square and histogram counts, one row per path.

    Values outside ``edges`` are counted in the end bins so every row sums to d.
    """
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    clipped = np.clip(paths, edges[0], edges[-1])
    counts = np.stack([np.histogram(p, bins=edges)[0] for p in clipped])
    return {"acf": sample_acf(paths, max_lag), "sq_acf": sample_acf(paths**2, max_lag), "hist": counts}


def _iqr(a, axis=0):
    q75, q25 = np.percentile(a, [75, 25], axis=axis)
    return q75 - q25


@dataclass
class FinanceReport:
    config: object
    dataset: FinancialDataset
    scale: float
    alpha: np.ndarray
    epsilon: float
    edges: np.ndarray
    statistics: dict = field(default_factory=dict)  # set name -> {"acf", "sq_acf", "hist"}
    generated: dict = field(default_factory=dict)  # mode -> (N, d) paths in data units
    runs: dict = field(default_factory=dict)  # mode -> summary dict
    metrics: dict = field(default_factory=dict)  # mode -> list of step dicts

    def sq_acf_iqr(self, name):
        return _iqr(self.statistics[name]["sq_acf"], axis=0)


def _finance_energy(cfg, d):
    if cfg.finance_energy == "acf":
        return AcfEnergy(d, cfg.lags)
    return SquaredAcfEnergy(d, cfg.max_lag, center=cfg.center, center_squares=cfg.center_squares)


def run_financial_pipeline(cfg, dataset=None):
    """Fit the energy on the training slice, generate with both modes, report statistics.

    The signal is divided by the training slice's standard deviation before
    fitting so that one step-size rule serves every instrument; generated
    paths are mapped back to data units, and the entropies include the
    corresponding ``d log(scale)`` per sample.
    """
    if dataset is None:
        if cfg.data_file is None:
            raise ConfigurationError("the finance pipeline needs data_file")
        dataset = ingest_prices(cfg.data_file, cfg.transform)
    train = dataset.training
    d = dataset.slice_length
    scale = float(np.std(train))
    if not scale > 0:
        raise DataError("training slice is constant; nothing to fit")
    y = train / scale
    spec = _finance_energy(cfg, d)
    alpha = spec.value(y)
    eps = cfg.epsilon if cfg.epsilon is not None else cfg.eps_rel * float(np.linalg.norm(alpha))
    if cfg.use_projection:
        if np.any(y < 0):
            raise ConfigurationError("projection needs a nonnegative signal; disable it for returns")
        init = fit_positive_init(float(np.mean(y)), float(np.std(y)), d)
    else:
        init = InitDistribution.gaussian(d, float(np.mean(y**2)))

    edges = np.histogram_bin_edges(dataset.validation.ravel(), bins="fd")
    report = FinanceReport(cfg, dataset, scale, alpha, eps, edges)
    report.statistics["train"] = path_statistics(train, edges)
    report.statistics["validation"] = path_statistics(dataset.validation, edges)

    for mode in cfg.modes:
        dcfg = DescentConfig(
            steps=cfg.finance_steps,
            gamma=cfg.gamma,
            gamma_scale=cfg.finance_gamma_scale,
            epsilon=eps,
            batch_size=cfg.batch_size,
            mode=mode,
            projection=cfg.use_projection,
            init=init,
            seed=cfg.seed,
            replicas=1,
        )
        res = run_descent(dcfg, alpha, spec)
        paths = res.batch.paths[0]
        final_mean_dist = float(np.linalg.norm(spec.value(paths).mean(axis=0) - alpha))
        # analytic initial entropy: a single replica makes the paired estimate pure noise
        trace = dataclasses.replace(res.trace, init_log_density=None)
        shift = cfg.batch_size * d * math.log(scale)  # joint entropy in data units
        entropies = {}
        for norm in cfg.normalizations:
            h = lik.entropy_estimate(res.trace.init_entropy, trace, norm)
            entropies[norm] = (h.mean + shift / lik._normalizer(norm, cfg.batch_size, d))
        report.generated[mode] = paths * scale
        report.statistics[mode] = path_statistics(paths * scale, edges)
        report.runs[mode] = {
            "mode": mode,
            "gamma": float(res.gamma),
            "epsilon": eps,
            "steps": res.n_steps,
            "stopped": res.stopped,
            "mean_energy_distance": final_mean_dist,
            "max_particle_distance": res.records[-1].max_distance,
            "entropy": entropies,
        }
        report.metrics[mode] = [dataclasses.asdict(r) for r in res.records]
        log.info("finance %s: %d steps, ||mean Phi - alpha|| = %.3g (eps %.3g)", mode, res.n_steps, final_mean_dist, eps)
    return report
