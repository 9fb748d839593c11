"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI uses when it escapes.
"""


class ComboITRError(Exception):
    exit_code = 1


class ConfigError(ComboITRError, ValueError):
    exit_code = 2


class DataError(ComboITRError, ValueError):
    exit_code = 3


class ShapeError(DataError):
    pass


class DomainError(DataError):
    pass


class StateError(ComboITRError, RuntimeError):
    exit_code = 1


class OptimizationError(ComboITRError, RuntimeError):
    exit_code = 4

    def __init__(self, message, step=None, epoch=None):
        super().__init__(message)
        self.step = step
        self.epoch = epoch


class InfeasibleError(ComboITRError):
    exit_code = 5

    def __init__(self, message, subject=None):
        super().__init__(message)
        self.subject = subject


class SizeError(ComboITRError, ValueError):
    exit_code = 2


class OutputError(ComboITRError, OSError):
    exit_code = 6
