class GtttError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(GtttError, ValueError):
    pass


class GraphFormatError(ValidationError):
    """A node or edge file row could not be parsed."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class ConfigError(ValidationError):
    pass


class NumericError(GtttError, ArithmeticError):
    pass


class BudgetExceededError(GtttError):
    pass


class ResponseParseError(GtttError, ValueError):
    pass


class UnknownCategoryError(ResponseParseError):
    def __init__(self, answer, categories):
        self.answer = answer
        self.categories = list(categories)
        super().__init__(f"unknown category {answer!r}; expected one of {self.categories}")


class ConvergenceError(GtttError):
    def __init__(self, message, residual):
        self.residual = residual
        super().__init__(f"{message} (residual={residual:.3e})")
