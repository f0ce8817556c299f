"""Exception types shared across the package."""


class NarrativeAttnError(ValueError):
    """Base class for all validation errors raised by this package."""


class DimensionError(NarrativeAttnError):
    """Shapes of the operands do not line up."""


class InvalidInputError(NarrativeAttnError):
    """Input values are outside the domain of an operation (NaN, empty, ...)."""


class InvalidParameterError(NarrativeAttnError):
    """A numeric parameter is degenerate (e.g. non-positive scale)."""


class ConfigurationError(NarrativeAttnError):
    """A configuration value or combination is not allowed.

    ``fields`` lists the offending config paths when known.
    """

    def __init__(self, message, fields=()):
        super().__init__(message)
        self.fields = list(fields)
