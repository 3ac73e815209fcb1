"""Exception hierarchy shared by every engine module."""


class MfpgError(Exception):
    """Base class for engine errors."""


class InvalidArgumentError(MfpgError, ValueError):
    pass


class DegeneratePopulationError(MfpgError, ArithmeticError):
    """A population-level denominator vanished or changed sign."""


class DegenerateGameError(MfpgError, ArithmeticError):
    """A player-level denominator of the finite game is not positive."""


class TransformationDegenerateError(MfpgError, ArithmeticError):
    """``1 - g`` vanished, so the FBSDE/BSDE change of variables is not invertible."""


class SolverDivergedError(MfpgError, RuntimeError):
    def __init__(self, message, residual=float("nan"), history=()):
        super().__init__(message)
        self.residual = residual
        self.history = list(history)


class NumericalOverflowError(MfpgError, FloatingPointError):
    pass


class ConfigError(MfpgError, ValueError):
    """Raised by config parsing; ``errors`` holds ``(path, reason)`` pairs."""

    def __init__(self, errors):
        self.errors = [(str(p), str(r)) for p, r in errors]
        text = "; ".join(f"{p}: {r}" for p, r in self.errors)
        super().__init__(text or "invalid config")


class BallRadiusWarning(RuntimeWarning):
    """The Picard iterate left the trust ball of the existence theorem."""
