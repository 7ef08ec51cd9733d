# lpf/core/__init__.py

"""
Core module - settings, errors, random streams and probability types
"""
from .config import DEFAULT_SEED, Settings, configure_logging, get_settings
from .errors import (ConfigError, DegenerateWeightsError, DimensionError,
                     InsufficientDataError, LPFError, NormalizationError,
                     NumericError, RangeError, SingularFitError, SupportError,
                     TrainingDivergedError, UnsupportedDimensionError)
from .prob import (GaussianPosterior, LabelDist, WeightVector, argmax_label,
                   effective_sample_size, entropy_bits, kl_bits, l1_distance,
                   normalize)
from .rng import derive_seed, stream
