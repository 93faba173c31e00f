"""Exception hierarchy.

Data/config problems derive from :class:`DataError` (CLI exit code 2);
numerical failures derive from :class:`NumericalError` (CLI exit code 3).
"""


class PvarIvError(Exception):
    """Base class for all package errors."""


class DataError(PvarIvError, ValueError):
    pass


class NumericalError(PvarIvError, ArithmeticError):
    pass


class UnbalancedPanel(DataError):
    pass


class ParseError(DataError):
    pass


class DuplicateKey(DataError):
    pass


class DegenerateDenominator(DataError):
    pass


class TooFewPeriods(DataError):
    pass


class TooFewObservations(DataError):
    pass


class ConfigError(DataError):
    pass


class SingularDesign(NumericalError):
    pass


class DegenerateResiduals(NumericalError):
    pass


class DegenerateInstrument(NumericalError):
    pass


class WeakDenominator(NumericalError):
    pass


class SingularQ(NumericalError):
    pass


class NormalizationFailure(NumericalError):
    pass


class SingularCovariance(NumericalError):
    pass


class GridInsufficient(NumericalError):
    pass


class FactorizationError(NumericalError):
    pass
