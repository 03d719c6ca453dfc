"""Bipartite and tripartite CV steering in a pulsed mirror/cavity/atom system."""
__version__ = "0.1.0"

from .model import (  # noqa: E402
    MODES,
    GainSet,
    ModelParams,
    NoiseConfig,
    ParameterError,
    QuadCovariance,
    SteeringClass,
    SteeringReport,
    TristeerError,
    UnequalNoiseError,
    make_params,
    vacuum_input_covariance,
)

__all__ = [
    "MODES",
    "GainSet",
    "ModelParams",
    "NoiseConfig",
    "ParameterError",
    "QuadCovariance",
    "SteeringClass",
    "SteeringReport",
    "TristeerError",
    "UnequalNoiseError",
    "make_params",
    "vacuum_input_covariance",
    "__version__",
]
