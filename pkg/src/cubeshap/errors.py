"""Exception hierarchy.

Validation problems (bad input, bad configuration) derive from
``ValidationError``; numerical problems (undefined measure values,
singular systems) derive from ``NumericalError``.  The CLI maps the two
families to distinct exit codes.
"""


class AttributionError(Exception):
    """Base class for all package errors."""


class ValidationError(AttributionError):
    pass


class NumericalError(AttributionError):
    pass


# -- core model -------------------------------------------------------------

class NonWildcardDrill(ValidationError):
    pass


class EmptyDomain(ValidationError):
    pass


class ColumnMismatch(ValidationError):
    pass


# -- measure expressions ----------------------------------------------------

class MeasureSyntaxError(ValidationError, SyntaxError):
    """Raised for malformed measure text; ``position`` is a 0-based offset."""

    def __init__(self, message: str, text: str = "", position: int = 0):
        SyntaxError.__init__(self, f"{message} at position {position}")
        self.text = text
        self.position = position
        self.offset = position + 1


class UnknownSubMeasure(ValidationError):
    pass


class DivisionByZero(NumericalError, ZeroDivisionError):
    """A denominator evaluated to zero, so the measure is undefined there.

    For vectorised evaluation ``index`` holds the first offending position.
    """

    def __init__(self, message: str = "division by zero", index=None):
        super().__init__(message)
        self.index = index


# -- cube aggregation -------------------------------------------------------

class UnknownAttribute(ValidationError):
    pass


class TypeMismatch(ValidationError):
    pass


class NonAdditiveAggregator(ValidationError):
    pass


# -- attribution engines ----------------------------------------------------

class TooManyPlayers(ValidationError):
    pass


class EngineMismatch(ValidationError):
    pass


class UndefinedMeasure(NumericalError):
    pass


class PathSingularity(NumericalError):
    def __init__(self, message: str, alpha: float):
        super().__init__(message)
        self.alpha = alpha


class SingularSystem(NumericalError):
    pass


# -- experiments / cli ------------------------------------------------------

class ZeroDenominator(NumericalError):
    pass


class UnknownExperiment(ValidationError):
    pass


class ConfigError(ValidationError):
    pass
