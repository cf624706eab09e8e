"""Exception hierarchy shared by every layer of :mod:`hustab`."""


class HusError(Exception):
    """Base class for all errors raised by hustab."""


class NumericalError(HusError, ArithmeticError):
    """A numerical procedure could not deliver its contract."""


class DomainExit(NumericalError):
    """A trajectory left the declared domain of its vector field.

    Usually means the field is not complete on that domain.
    """


class StepUnderflow(NumericalError):
    """The adaptive step size collapsed (stiffness or finite-time blow-up)."""


class BoundViolated(NumericalError):
    """A sampled integrand exceeded the bound its tail estimate relied on."""


class InvalidLambda(HusError, ValueError):
    """The real part of lambda is zero, so no stability constant exists."""


class InvalidParams(HusError, ValueError):
    """Catalog parameters violate the hypotheses of their field family."""


class InvalidConfig(HusError, ValueError):
    """An experiment configuration cannot be executed as written."""


class ParseError(HusError, ValueError):
    """A configuration document is malformed."""


class ValidationError(HusError, ValueError):
    """A configuration document is well formed but violates a constraint."""


class StageError(HusError):
    """Wraps an error with the harness stage it occurred in."""

    def __init__(self, stage, error):
        self.stage = stage
        self.error = error
        super().__init__(f"[{stage}] {type(error).__name__}: {error}")
