"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class InvalidStateError(RuntimeError):
    """An operation was called on an object in the wrong mode or with
    missing intermediates."""


class NotConvergedError(RuntimeError):
    """A gate ratio that is required to be one-hot is not."""


class TrainingFailedError(RuntimeError):
    """Training diverged; carries the step index where it happened."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step
