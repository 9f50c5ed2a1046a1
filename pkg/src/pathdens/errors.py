"""Exception taxonomy shared by all modules."""


class PathdensError(Exception):
    pass


class DomainError(PathdensError):
    """An argument is outside the domain an operation is defined on."""


class ContractError(PathdensError):
    """A precondition on the caller's side was violated."""


class ConfigurationError(PathdensError):
    """A required oracle or option is missing or inconsistent."""


class DivergenceError(PathdensError):
    """A solver produced a non-finite state; carries the step index."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NumericalError(PathdensError):
    """A finite-difference or linear-algebra computation failed."""


class ResourceError(PathdensError):
    """A hard cap on problem size was exceeded."""
