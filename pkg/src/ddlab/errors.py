"""Exception hierarchy shared by every module of the lab."""


class LabError(Exception):
    """Base class for all errors raised by ddlab."""


class DomainError(LabError, ValueError):
    """An argument lies outside the domain of an operation."""


class ModeError(LabError):
    """Operation is not defined for the configured rate kind."""


class SupportError(LabError):
    """A score ratio was requested where the marginal vanishes."""


class NumericError(LabError, ArithmeticError):
    """An integrator or solver failed to meet its tolerance."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class CapacityError(LabError):
    """Problem size exceeds a configured cap."""


class KernelError(LabError):
    """Kernel Gram matrix failed the positive semidefinite check."""


class HypothesisError(LabError):
    """A theorem's hypothesis is not certified for the given inputs."""


class UsageError(LabError):
    """Bad command-line or configuration usage."""
