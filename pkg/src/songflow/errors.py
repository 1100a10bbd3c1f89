"""Shared exception types. The CLI maps these onto stable exit codes."""


class DimensionError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class ContractError(ValueError):
    """A precondition other than shape compatibility was violated."""


class ParseError(ValueError):
    """Malformed textual input, carrying the offending line number when known."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ValidationError(ValueError):
    """Well-formed input that violates a structural invariant."""


class NumericAbort(RuntimeError):
    """A numeric run hit NaN/Inf and stopped; carries the failing step."""

    def __init__(self, message: str, step: int | None = None, batch_ids: list[str] | None = None):
        detail = message
        if step is not None:
            detail += f" (step {step})"
        if batch_ids:
            detail += f" [batch: {', '.join(batch_ids)}]"
        super().__init__(detail)
        self.step = step
        self.batch_ids = list(batch_ids) if batch_ids else []
