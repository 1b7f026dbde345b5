"""Operator learning with linear and nonlinear (NOMAD) decoders.

Subpackages: ``netcore`` (dense nets, backprop, Adam), ``models`` (encoder,
branch approximator, decoders, training), ``datasets`` (benchmark generators
and the OPDS container), ``analysis`` (PCA spectra, error statistics, sweeps)
and ``cli``.
"""

from .errors import (
    CFLError,
    ConfigError,
    FormatError,
    InstabilityError,
    NomadLabError,
    ShapeError,
    SolverError,
    StatisticsError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "CFLError", "ConfigError", "FormatError", "InstabilityError", "NomadLabError",
    "ShapeError", "SolverError", "StatisticsError", "TrainingError", "__version__",
]
