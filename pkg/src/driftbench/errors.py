"""Exception hierarchy shared by all driftbench modules.

The CLI maps these onto exit codes: configuration/validation problems exit
with 2, run-time failures with 1.
"""


class DriftbenchError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(DriftbenchError):
    """Invalid values: bad labels, non-finite entries, zero counts."""


class ConfigurationError(DriftbenchError):
    """Inconsistent experiment configuration (non-divisible task counts, bad ratios)."""


class ScenarioError(DriftbenchError):
    """A scenario cannot be constructed from the given data (e.g. a class missing from a domain group)."""


class ShapeError(DriftbenchError):
    """Dimension mismatch between data and model parameters."""


class StateError(DriftbenchError):
    """Operation requires state that has not been accumulated yet (e.g. predict before observe)."""


class NumericalError(DriftbenchError):
    """A numerical routine produced non-finite results."""


class FeatureFileError(DriftbenchError):
    """Base class for feature-file read problems."""


class FormatError(FeatureFileError):
    """File does not look like a feature file (bad magic or version)."""


class CorruptionError(FeatureFileError):
    """File header and body disagree (truncated or padded payload)."""
