from typing import Optional


class DeFedAvgError(Exception):
    """Base class for every error raised by the library."""


class ConfigError(DeFedAvgError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f'line {line}: {message}'
        super().__init__(message)


class DatasetError(DeFedAvgError):
    pass


class ProblemError(DeFedAvgError):
    pass


class NumericalError(DeFedAvgError):
    pass


class CausalityError(DeFedAvgError):
    pass


class ReplayDivergenceError(DeFedAvgError):
    pass


class DeadlockError(DeFedAvgError):
    pass


class VerificationError(DeFedAvgError):
    def __init__(self, message: str, failed: Optional[list] = None):
        self.failed = failed or []
        super().__init__(message)
