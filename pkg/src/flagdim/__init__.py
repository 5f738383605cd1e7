"""Random matrix products: Lyapunov spectra, Oseledets configurations and their dimensions."""

__version__ = "0.1.0"

from .errors import (
    DegeneracyError,
    FlagdimError,
    GeneralPositionError,
    InconsistencyError,
    ValidationError,
)
from .randwalk import MatrixMeasure, load_measure, read_measure, shipped_measure, shipped_measures
from .spectrum import LyapunovSpectrum, lyapunov_spectrum
from .topology import AdmissibleTopology, LeftFiltration, extremes, monotone_path

__all__ = [
    "__version__",
    "AdmissibleTopology",
    "DegeneracyError",
    "FlagdimError",
    "GeneralPositionError",
    "InconsistencyError",
    "LeftFiltration",
    "LyapunovSpectrum",
    "MatrixMeasure",
    "ValidationError",
    "extremes",
    "load_measure",
    "lyapunov_spectrum",
    "monotone_path",
    "read_measure",
    "shipped_measure",
    "shipped_measures",
]
