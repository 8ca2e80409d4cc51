"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class PredscaleError(Exception):
    exit_code = 4


class UsageError(PredscaleError):
    exit_code = 1


class DataError(PredscaleError):
    exit_code = 2


class CorruptInputError(DataError):
    """More than half of a trace file's lines could not be parsed."""


class FitError(DataError):
    pass


class ScheduleError(DataError):
    pass


class InfeasibleError(PredscaleError):
    """No assignment satisfies the request; ``constraint`` names the binding one."""

    exit_code = 3

    def __init__(self, message, constraint):
        super().__init__(message)
        self.constraint = constraint
