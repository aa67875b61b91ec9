"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """Raised when an input breaks an operation's preconditions."""


class DivergenceError(RuntimeError):
    """Raised when training or a forward pass produces non-finite values."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []
