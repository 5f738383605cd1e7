"""Entropy and dimension estimators built on sampled flag ensembles."""

from .dimension import (
    DimensionEstimate,
    LyapunovDimensionProfile,
    fiber_local_dimension,
    local_dimension,
    lyapunov_dimension,
    one_step_dimension,
    path_dimension,
    product_dimension,
    scaling_window,
)
from .ensemble import FlagEnsemble, projector_features, sample_flag_ensemble, stationarity_pvalue
from .entropy import (
    EntropyEstimate,
    RWEntropy,
    cylinder_entropy,
    entropy_cap,
    fiber_entropy,
    furstenberg_entropy,
    knn_cmi,
    rw_entropy,
)
from .report import ReportParams, verify_report

__all__ = [
    "DimensionEstimate",
    "EntropyEstimate",
    "FlagEnsemble",
    "LyapunovDimensionProfile",
    "RWEntropy",
    "ReportParams",
    "cylinder_entropy",
    "entropy_cap",
    "fiber_entropy",
    "fiber_local_dimension",
    "furstenberg_entropy",
    "knn_cmi",
    "local_dimension",
    "lyapunov_dimension",
    "one_step_dimension",
    "path_dimension",
    "product_dimension",
    "projector_features",
    "rw_entropy",
    "sample_flag_ensemble",
    "scaling_window",
    "stationarity_pvalue",
    "verify_report",
]
