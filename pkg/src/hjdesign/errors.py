"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: numerical failures exit 1,
configuration problems exit 2, domain or hypothesis violations exit 3.
"""


class HJError(Exception):
    """Base class for library errors."""

    exit_code = 1


class InvalidArgumentError(HJError, ValueError):
    exit_code = 2


class ConfigurationError(HJError, ValueError):
    """Bad solver configuration (CFL violation, empty window, ...)."""

    exit_code = 2


class SchemeMismatchError(ConfigurationError):
    """Scheme cannot handle the requested Hamiltonian."""


class StencilError(HJError, IndexError):
    exit_code = 1


class BoundarySaturationError(HJError):
    """Numeric Legendre maximizer hit the edge of its search lattice."""


class EscapeError(HJError):
    """A characteristic or particle left the inflated computational box."""


class ConvergenceError(HJError):
    def __init__(self, message, residual=None, sweeps=None):
        super().__init__(message)
        self.residual = residual
        self.sweeps = sweeps


class StallError(HJError):
    """Descent direction could not be certified."""


class DomainError(HJError):
    """Operation requested outside the range where the theory applies."""

    exit_code = 3


class HypothesisError(DomainError):
    """Hamiltonian violates a structural assumption required by the operation."""
