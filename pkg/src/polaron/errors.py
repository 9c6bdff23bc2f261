"""Exception hierarchy shared by the solver, samplers and the CLI."""


class PolaronError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(PolaronError, ValueError):
    """Bad parameters or an unusable discretization."""


class NormalizationError(PolaronError, ValueError):
    pass


class PositivityError(PolaronError, ValueError):
    pass


class IterationLimitError(PolaronError, RuntimeError):
    """An iterative solver ran out of iterations.

    The last residuals are kept on the instance so callers can decide
    whether the result is still usable.
    """

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = dict(residuals or {})


class NumericalError(PolaronError, ArithmeticError):
    """Non-finite values, singular factorizations or blow-ups."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class InsufficientSampleError(PolaronError, ValueError):
    pass


class MixingError(PolaronError, RuntimeError):
    """A Markov chain failed its acceptance or effective-sample checks."""


class SingularityError(PolaronError, ValueError):
    pass


class RootNotFoundError(PolaronError, RuntimeError):
    """No sign change of q(lambda) - 1 in the requested bracket."""

    def __init__(self, message, table=None):
        super().__init__(message)
        self.table = table


class TruncationError(PolaronError, RuntimeError):
    """A sampler exceeded its size cap, or a quadrature tail is too heavy."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class EfficiencyError(PolaronError, RuntimeError):
    pass


class ModeError(PolaronError, ValueError):
    pass


class HeavyTailWarning(UserWarning):
    """Importance weights are dominated by a handful of samples."""
