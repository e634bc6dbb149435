"""Exception hierarchy shared by all ``bidirq`` modules."""


class BidirqError(Exception):
    """Base class for every error raised by this package."""


class SignatureMismatch(BidirqError, ValueError):
    """Operands live on Krein spaces with different signatures or sizes."""


class NotPseudoHermitian(BidirqError):
    """An operator required to be pseudo-Hermitian is not (to tolerance)."""


class NotPseudounitary(BidirqError):
    """An operator required to be pseudounitary is not (to tolerance)."""


class SingularBackwardBlock(BidirqError):
    """The backward-backward block of a transfer operator cannot be inverted.

    Physically this signals trapped backward modes; the input/output map does
    not exist.
    """

    def __init__(self, msg, cond=None):
        super().__init__(msg)
        self.cond = cond


class ZeroInput(BidirqError, ValueError):
    """An input state with zero Hilbert norm cannot be normalized."""


class IntegrationError(BidirqError):
    """Step halving failed to reach the requested propagator tolerance."""


class CommutatorViolation(BidirqError):
    """A supposedly conserved operator does not commute with the Hamiltonian."""


class GhostState(BidirqError):
    """A real eigenvalue carries an eigenvector with (near) zero eta-norm."""


class NonDiagonalizable(BidirqError):
    """The Hamiltonian has a Jordan block (or is numerically close to one)."""


class EpsilonTooLarge(BidirqError, ValueError):
    """The regularization exceeds half the gap to the nonreal spectrum."""


class SingularResolvent(BidirqError):
    """``I - G0 H1`` is singular (or beyond the condition-number cap)."""


class NonConvergent(BidirqError):
    """Neumann iteration for the transition operator does not converge."""

    def __init__(self, msg, spectral_radius=None):
        super().__init__(msg)
        self.spectral_radius = spectral_radius


class NoOpenChannelAtE(BidirqError, ValueError):
    """No open channel has nonzero density of states at the requested energy."""


class DomainError(BidirqError, ValueError):
    """A closed-form expression is evaluated outside its domain."""


class ModelFileError(BidirqError, ValueError):
    """A model or parameter file failed to parse or validate.

    ``where`` holds a line/column or a JSON path when available.
    """

    def __init__(self, msg, where=None):
        if where:
            msg = f"{where}: {msg}"
        super().__init__(msg)
        self.where = where


class InsufficientGrid(BidirqError, ValueError):
    """A sweep grid is too short, too sparse or outside the required range."""
