"""Exception types shared across the pipeline."""


class PhonepoolError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PhonepoolError):
    """Input data violates a documented contract (bad shapes, ids, values)."""


class ConfigError(ValidationError):
    """A configuration object is internally inconsistent or incompatible
    with the data it is applied to."""


class ParseError(ValidationError):
    """A text file does not conform to its documented grammar."""
