"""Exception hierarchy shared by every sniff module."""


class SniffError(Exception):
    pass


class UsageError(SniffError, ValueError):
    """Bad arguments: out-of-range indices, mismatched dimensions, empty inputs."""


class NumericDomainError(SniffError, ArithmeticError):
    """A NaN or infinity appeared where only finite values are allowed."""


class FormatError(SniffError, ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class FaultParseError(UsageError):
    def __init__(self, text: str, position: int, message: str):
        self.text = text
        self.position = position
        super().__init__(f"{message} at position {position} in {text!r}")


class SessionDisciplineError(SniffError):
    """More than one fault was requested for a single run."""


class DegenerateObservationError(SniffError, ArithmeticError):
    """A softmax output saturated to 0.0 or 1.0, so the log-ratio is undefined."""


class VanishingInputError(SniffError, ArithmeticError):
    pass


class SearchFailureError(SniffError):
    pass
