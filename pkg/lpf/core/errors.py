# lpf/core/errors.py

"""
Exception hierarchy shared by every module
"""


class LPFError(Exception):
    """Base class for all library errors"""


class NormalizationError(LPFError, ValueError):
    """Vector cannot be turned into a distribution (all zero, negative or non-finite)"""


class SupportError(LPFError, ValueError):
    """A distribution has a zero entry where a full support is required"""


class DimensionError(LPFError, ValueError):
    """Lengths or shapes do not match"""


class DegenerateWeightsError(LPFError, ValueError):
    """All weights are zero"""


class ConfigError(LPFError, ValueError):
    """Invalid or malformed configuration"""


class RangeError(LPFError, ValueError):
    """Count or parameter outside its allowed range"""


class InsufficientDataError(LPFError, ValueError):
    """Not enough usable data to compute a statistic"""


class NumericError(LPFError, ValueError):
    """Non-finite numeric input"""


class UnsupportedDimensionError(LPFError, ValueError):
    """Latent dimension too large for the requested computation"""


class TrainingDivergedError(LPFError, RuntimeError):
    """Training loss became non-finite"""


class SingularFitError(LPFError, ValueError):
    """Least-squares design matrix is rank deficient"""
