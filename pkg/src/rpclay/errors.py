"""Exception hierarchy shared by every rpclay module."""


class RpclayError(Exception):
    """Base class for all errors raised by rpclay."""


class InvalidParameterError(RpclayError, ValueError):
    """A parameter set violates its invariants."""


class DomainError(RpclayError, ValueError):
    """An input lies outside the domain of a formula (e.g. T above melt)."""


class NonTerminationError(RpclayError):
    """The indenter was still moving fast when the time horizon ran out."""


class InstabilityError(RpclayError):
    """Displacement or velocity became non-finite during integration."""


class UnknownFixtureError(RpclayError, KeyError):
    pass


class SchemaError(RpclayError, ValueError):
    """A CSV or JSON file does not match the expected schema."""


class EmptyResultError(RpclayError, ValueError):
    pass


class InsufficientDataError(RpclayError, ValueError):
    pass


class DegenerateError(RpclayError, ValueError):
    """A statistic is undefined because a column or target is constant."""


class ShapeMismatchError(RpclayError, ValueError):
    pass


class DivergenceError(RpclayError):
    """Training loss became non-finite."""


class OverflowGridError(RpclayError, ValueError):
    pass


class EmptySelectionError(RpclayError):
    """No candidate qualified in all impact cases."""


class ConfigError(RpclayError):
    pass
