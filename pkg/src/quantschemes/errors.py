"""Exception hierarchy shared by all modules.

InputError maps to CLI exit code 2, NumericError / ConvergenceError to 3.
"""


class QuantError(Exception):
    pass


class InputError(QuantError):
    """Invalid argument, shape mismatch, malformed file."""


class ParseError(InputError):
    """Malformed grid / chain file. Carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(QuantError):
    """Non-finite value produced during simulation or solving."""


class ConvergenceError(QuantError):
    """Iterative search failed to reach its tolerance. Carries the last residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateObservationError(NumericError):
    """Filter total mass vanished at some step (observation/model mismatch)."""

    def __init__(self, step):
        super().__init__(f"filter mass vanished at step {step}")
        self.step = step
