"""Exception types shared by the modules."""


class GeotensorError(Exception):
    """Base class; carries an optional dict of diagnostics."""

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class DomainError(GeotensorError, ValueError):
    pass


class InvalidInputError(GeotensorError, ValueError):
    pass


class TrappedRayError(GeotensorError):
    """A geodesic ran past the length cap without leaving the disc."""


class InvalidPairError(GeotensorError, ValueError):
    pass


class DegeneratePairError(GeotensorError):
    pass


class PreconditionError(GeotensorError):
    pass


class SolverError(GeotensorError):
    pass


class ConvergenceDiagnostic(GeotensorError):
    """Stationary-phase sweep did not converge monotonically."""


class UnresolvableFrequencyError(GeotensorError, ValueError):
    pass


class EllipticityFailure(GeotensorError):
    pass


class FrameAlignmentError(GeotensorError):
    pass


class ConeOverlapError(GeotensorError, ValueError):
    pass


class ConfigError(GeotensorError):
    def __init__(self, message, line=None, **details):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, line=line, **details)
        self.line = line


class NearTangencyWarning(UserWarning):
    pass
