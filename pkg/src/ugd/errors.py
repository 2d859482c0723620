"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented exit codes (2 = config, 3 = data, 4 = runtime).
"""


class UGDError(Exception):
    exit_code = 4


class ConfigError(UGDError):
    exit_code = 2


class DataError(UGDError):
    exit_code = 3


class RuntimeFailure(UGDError):
    exit_code = 4


class InfeasibleEta(ConfigError):
    """Requested view-missing rate exceeds (V-1)/V."""


class InsufficientPool(DataError):
    """Pool cannot supply the requested ways/shots/queries."""


class SchemaMismatch(DataError):
    """On-disk container disagrees with its declared shape."""


class TooFewSamples(DataError):
    """A base class has fewer than two samples in some view."""


class IncompleteBase(DataError):
    """Base-set samples must have every view present."""


class DimMismatch(DataError):
    """Feature dimensions disagree with the view spec."""


class NoAvailableView(DataError):
    """Sample has no observed view to retrieve neighbours from."""


class EmptyRetrieval(DataError):
    """Retrieval set is empty."""


class EmptyClass(DataError):
    """A class has no representatives where at least one is required."""


class ZeroVector(DataError):
    """A vector with zero norm cannot be cosine-normalised."""


class FactorizationFailure(RuntimeFailure):
    """Covariance could not be factorised even after ridging."""


class NonFiniteGradient(RuntimeFailure):
    """A gradient contained NaN or infinity."""
