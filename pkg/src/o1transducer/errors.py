"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An input broke a documented precondition (shape, range, invariant)."""


class EnumerationGuardError(ContractViolation):
    """A brute-force oracle was asked to enumerate more than it allows."""


class FormatError(ValueError):
    """A serialized artifact (checkpoint, corpus, config) could not be parsed."""

    def __init__(self, message, *, offset=None, line=None):
        where = []
        if offset is not None:
            where.append(f"byte offset {offset}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.offset = offset
        self.line = line
