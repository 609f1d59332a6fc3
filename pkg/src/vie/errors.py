"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller broke a precondition (bad shape, bad argument range)."""


class DomainError(ValueError):
    """A value fell outside the mathematical domain of an operation."""


class NumericError(FloatingPointError):
    """A forward computation produced NaN or Inf from finite inputs."""


class TrainingError(RuntimeError):
    """Training hit a non-finite loss or gradient.

    ``component`` names the offending loss term or parameter group.
    """

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class CheckpointError(ValueError):
    """A checkpoint file is malformed, truncated or of the wrong version."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
