"""Exception hierarchy shared by every stage of the pipeline."""


class FarmTestError(Exception):
    """Base class for all errors raised by this package."""


class ConvergenceError(FarmTestError, ArithmeticError):
    """An iterative solver hit its iteration cap.

    The last iterate is kept on ``last_iterate`` so callers can inspect or
    reuse it.
    """

    def __init__(self, message, last_iterate=None, index=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.index = index


class StageError(FarmTestError):
    """A numerical failure inside one pipeline stage, tagged with the stage."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
