"""
Platform Error Hierarchy
Every failure the platform raises derives from RdJsccError and maps to a CLI exit code
"""


class RdJsccError(Exception):
    """Base class for all platform errors"""
    exit_code = 1


class InvalidArgumentError(RdJsccError, ValueError):
    """Raised when an argument violates an operation's precondition"""
    exit_code = 2


class ConfigError(RdJsccError):
    """Raised when a run configuration cannot be resolved (unknown key, bad value)"""
    exit_code = 2


class DegenerateInputError(RdJsccError, ValueError):
    """Raised for inputs that make a computation undefined (zero vector, zero reference)"""
    exit_code = 2


class DegenerateStatsError(RdJsccError, ValueError):
    """Raised when dataset statistics cannot define a normalization (max == min)"""
    exit_code = 2


class OutOfRangeError(RdJsccError, ValueError):
    """Raised when a companding/quantizer input lies outside [-1, 1]"""
    exit_code = 2


class DatasetLoadError(RdJsccError):
    """Raised when a CSI dataset container cannot be loaded"""
    exit_code = 3


class MissingFileError(DatasetLoadError, FileNotFoundError):
    """Dataset file does not exist"""
    pass


class MalformedShapeError(DatasetLoadError):
    """Dataset header or payload does not match the documented layout"""
    pass


class NonFiniteDataError(DatasetLoadError):
    """Dataset payload contains NaN or Inf entries"""
    pass


class CheckpointError(RdJsccError):
    """Raised when a checkpoint is missing, corrupt or incompatible"""
    exit_code = 3


class DivergenceError(RdJsccError):
    """
    Raised when a training loss becomes non-finite

    Carries the iteration and the most recent finite losses for diagnostics.
    """
    exit_code = 4

    def __init__(self, message: str, iteration: int = -1, recent_losses=None):
        super().__init__(message)
        self.iteration = iteration
        self.recent_losses = list(recent_losses or [])

    def diagnostics(self) -> dict:
        return {
            'iteration': self.iteration,
            'recent_losses': self.recent_losses,
            'message': str(self),
        }


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code"""
    if isinstance(exc, RdJsccError):
        return exc.exit_code
    if isinstance(exc, (FileNotFoundError, PermissionError, IsADirectoryError)):
        return 3
    return 1
