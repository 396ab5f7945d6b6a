"""Exception hierarchy shared by all striplab modules."""


class StriplabError(Exception):
    """Base class for every error raised by striplab."""


class ConfigurationError(StriplabError, ValueError):
    """Invalid ensemble, experiment or parameter settings."""


class OutOfRangeError(StriplabError, IndexError):
    """A site or box lies outside the sampled window."""


class NumericalError(StriplabError, ArithmeticError):
    """Overflow, non-finite accumulation or solver failure."""

    def __init__(self, message, site=None):
        super().__init__(message)
        self.site = site


class NearSingularError(NumericalError):
    """The energy sits (numerically) on the spectrum of a finite-volume operator."""

    def __init__(self, message, distance=None):
        super().__init__(message)
        self.distance = distance


class DegenerateConfigurationError(NumericalError):
    """A matrix that the closed-form formulas need to invert is singular.

    ``smallest_singular_value`` carries the offending value; these events have
    probability zero for continuous laws and are never regularised away.
    """

    def __init__(self, message, smallest_singular_value=None):
        super().__init__(message)
        self.smallest_singular_value = smallest_singular_value


class IntegrityError(StriplabError):
    """A results file does not match the checksums recorded in its manifest."""


class InsufficientRangeError(StriplabError, ValueError):
    """Too few usable points for a decay fit."""
