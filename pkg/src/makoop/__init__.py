"""Structured multi-agent Koopman models, time-scale reduction, stability metrics
and game-theoretic control on the lifted dynamics."""
__version__ = "0.1.0"

from .dictionary import DictionarySpec, lift
from .errors import (ConfigError, ConvergenceError, DimensionError, DivergenceError, FitError, InstabilityError,
                     MakoopError, NonFiniteError, SingularityError)
from .koopman import (CombinedSystem, StructuredKoopman, assemble_combined, default_dictionaries, fit_flat,
                      fit_hier, load_model, predict, save_model)
from .reduction import ReducedModel, build_reduced

__all__ = [
    "CombinedSystem", "ConfigError", "ConvergenceError", "DictionarySpec", "DimensionError", "DivergenceError",
    "FitError", "InstabilityError", "MakoopError", "NonFiniteError", "ReducedModel", "SingularityError",
    "StructuredKoopman", "assemble_combined", "build_reduced", "default_dictionaries", "fit_flat", "fit_hier",
    "lift", "load_model", "predict", "save_model",
]
