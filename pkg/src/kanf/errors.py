"""Exception types shared across the package.

The CLI maps each class to an exit code and a ``kind`` string, so new
errors should subclass one of these rather than raising bare builtins.
"""


class KanfError(Exception):
    kind = "error"
    exit_code = 1


class InvalidInputError(KanfError, ValueError):
    kind = "validation"
    exit_code = 3


class InvalidDataError(KanfError, ValueError):
    kind = "data"
    exit_code = 3

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class FormatError(KanfError, ValueError):
    kind = "format"
    exit_code = 3


class EmptyDataError(KanfError, ValueError):
    kind = "data"
    exit_code = 3


class CheckpointError(KanfError, ValueError):
    kind = "checkpoint"
    exit_code = 3


class TrainingDivergedError(KanfError, ArithmeticError):
    kind = "diverged"
    exit_code = 4

    def __init__(self, step, loss):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss
