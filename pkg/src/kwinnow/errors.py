"""Exception taxonomy shared across the package.

ConfigError covers anything a caller got wrong before numbers start
flowing: bad hyperparameters, malformed architecture specs, impossible
convolution geometry. ShapeError is the runtime-shape flavour of the
same thing. DataError is reserved for problems with files on disk and
label ranges. NumericsError means a non-finite value was produced.
"""


class KwinnowError(Exception):
    """Base class for every error this package raises on purpose."""


class ConfigError(KwinnowError):
    """Invalid configuration, hyperparameter, or architecture."""


class ShapeError(ConfigError):
    """Arrays with incompatible shapes were combined."""


class DataError(KwinnowError):
    """A data file is missing, truncated, or self-inconsistent."""


class NumericsError(KwinnowError):
    """A non-finite value (nan or inf) appeared where it must not."""


class UsageError(KwinnowError):
    """The API was called in a way that has no defined meaning."""
