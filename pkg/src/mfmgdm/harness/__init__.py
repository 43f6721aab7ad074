"""Experiment orchestration: synthetic benchmarks, KL traces, the finance pipeline and the CLI."""

from .config import ExperimentConfig, load_config
from .experiments import MetricsRow, run_kl_trace, run_n_sweep, run_synthetic_benchmark
from .export import export_finance, export_trace
from .finance import FinancialDataset, ingest_prices, run_financial_pipeline

__all__ = [
    "ExperimentConfig",
    "load_config",
    "MetricsRow",
    "run_kl_trace",
    "run_n_sweep",
    "run_synthetic_benchmark",
    "export_trace",
    "export_finance",
    "FinancialDataset",
    "ingest_prices",
    "run_financial_pipeline",
]
