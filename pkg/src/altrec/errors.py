"""Exception types shared across the package.

The CLI maps these onto exit codes: data problems exit 3, numerical
failures exit 4 (usage errors exit 2 via argparse).
"""


class AltrecError(Exception):
    """Base class for all errors raised by altrec."""


class DataError(AltrecError):
    """Missing, malformed, or inconsistent input data."""


class DuplicateIdError(DataError):
    """The same product_id appeared twice where uniqueness is required."""


class NoNegativePoolError(DataError):
    """Negative sampling needs at least two connected components."""


class NoCoverageError(DataError):
    """A recommender has no signal for the requested anchor."""


class MissingArtifactError(DataError):
    """A pipeline stage requires an artifact that has not been produced."""


class StaleArtifactError(DataError):
    """A workspace artifact no longer matches its recorded fingerprints."""


class NumericalError(AltrecError):
    """A computation produced NaN/Inf or an otherwise unusable value."""


class ZeroNormError(NumericalError):
    """Cosine similarity is undefined for a zero-norm vector."""
