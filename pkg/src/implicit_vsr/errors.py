"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an argument fails a precondition (shape, range, parity)."""


class ContractViolation(RuntimeError):
    """Raised when an internal contract is broken at runtime.

    Examples are a scale-weight field that is not normalized, or a long-term
    hidden state handed to an encoder block.
    """


class SequenceIOError(OSError):
    """Raised for unreadable, empty or inconsistent frame directories."""


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes non-finite during optimization."""

    def __init__(self, step, loss):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


class CheckpointMismatch(RuntimeError):
    """Raised when a checkpoint does not match the requested configuration."""
