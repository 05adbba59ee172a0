"""Risk-aware MMSE estimation and the mse/sev trade-off toolkit."""

from .errors import (ConfigError, ConsistencyError, InfeasibleError, InvalidInputError,
                     NumericFailure, PosteriorError, QuadratureError, RiskAwareError,
                     UnavailableError)
from .model import (GenerativeModel, ObservationBatch, PosteriorBatch, PosteriorSummary,
                    build_model)
from .numerics import EigenDecomp, RngStream, eig_sym, integrate_1d, pinv_from_eig

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConsistencyError", "EigenDecomp", "GenerativeModel", "InfeasibleError",
    "InvalidInputError", "NumericFailure", "ObservationBatch", "PosteriorBatch",
    "PosteriorError", "PosteriorSummary", "QuadratureError", "RiskAwareError", "RngStream",
    "UnavailableError", "__version__", "build_model", "eig_sym", "integrate_1d",
    "pinv_from_eig",
]
