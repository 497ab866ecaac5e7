"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called outside its documented contract."""


class DomainError(ValueError):
    """An operand lies outside the mathematical domain of a primitive."""


class IngestionError(ValueError):
    """A dataset file failed validation; the message names the file."""


class NonDeterminismError(RuntimeError):
    """A function expected to be deterministic produced differing results."""


class NonFiniteGradientError(RuntimeError):
    """An optimizer step received a non-finite gradient."""

    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter '{name}'; step rejected")
        self.param_name = name


class CheckFailure(RuntimeError):
    """An internal verification (gradient check, reconstruction bound, ...) failed."""
