"""Exception types shared across the package.

The CLI maps these onto exit codes: ``ParameterError`` -> 2,
``NumericalFailure`` -> 3.  Claim checks never raise; they are recorded
as rows with ``passed=False`` and turned into exit code 4 by the CLI.
"""


class SpikelabError(Exception):
    """Base class."""


class ParameterError(SpikelabError, ValueError):
    """Invalid input: out-of-range parameter, wrong regime, bad window."""


class RegimeError(ParameterError):
    """Operation requested for an angle regime where it is undefined."""


class DomainError(ParameterError):
    """Point outside the closure of the domain."""


class PreconditionError(ParameterError):
    """A documented precondition of an operation does not hold."""


class InsufficientDomainError(ParameterError):
    """Truncation radius too small for the requested diagnostic."""


class DegenerateConfigurationError(ParameterError):
    """A closed-form expression hits a vanishing denominator."""


class NumericalFailure(SpikelabError, RuntimeError):
    """A solver did not converge or produced an unusable result.

    ``info`` carries whatever diagnostics the failing routine had, e.g.
    the last Newton iterate or the bisection bracket.
    """

    def __init__(self, message, **info):
        super().__init__(message)
        self.info = info


class TrivialBranchWarning(UserWarning):
    """Newton iteration collapsed onto the zero solution."""


class NonUniquePeakWarning(UserWarning):
    """More than one comparable local maximum in a field."""
