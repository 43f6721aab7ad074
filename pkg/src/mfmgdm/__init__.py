"""Microcanonical gradient-descent samplers (single-particle and mean-field) with exact log-likelihoods."""

from .descent import DescentConfig, DescentResult, ParticleBatch, gd_step, mf_step, projected_step, run_descent
from .energy import AcfEnergy, EnergySpec, FiniteDiffEnergyAdapter, SquaredAcfEnergy, estimate_target
from .errors import (
    ConfigurationError,
    DataError,
    DimensionError,
    DomainError,
    MgdmError,
    ModelError,
    NumericalDivergenceError,
    SingularFlowError,
)
from .models import ArProcess, CirProcess, InitDistribution

__version__ = "0.1.0"
