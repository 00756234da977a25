"""Exception types raised by the solver stack."""


class DNLSError(Exception):
    """Base class for all package errors."""


class NoConvergence(DNLSError):
    """Newton iteration did not reach the requested tolerance."""

    def __init__(self, iterations, residual, message=None):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            message or f"Newton failed after {iterations} iterations (|R|={residual:.3e})"
        )


class SingularJacobian(DNLSError):
    """The Newton matrix is singular (fold or unremoved symmetry)."""


class StallError(DNLSError):
    """Continuation step size fell below its lower bound."""

    def __init__(self, message, branch=None):
        self.branch = branch
        super().__init__(message)


class NoBracket(DNLSError):
    """No sign change of the requested monitor inside the branch."""


class NotCoprime(DNLSError, ValueError):
    """A resonance ell:m was given with gcd(|ell|, m) != 1."""


class RatioMismatch(DNLSError, ValueError):
    """Orbit period ratio does not match the resonance label."""


class CenterOnCurve(DNLSError, ValueError):
    """Winding number requested about a point lying on the curve."""


class ConfigError(DNLSError, ValueError):
    """Invalid run configuration or constraint layout."""
