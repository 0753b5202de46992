"""Exception hierarchy shared by the services and the CLI."""

from dataclasses import dataclass


class CheckerError(Exception):
    """Base class for every error raised by the checker."""


@dataclass(frozen=True)
class ParseIssue:
    """A single problem found while reading a model file."""

    line: int
    column: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}, column {self.column}: {self.message}"


class ModelParseError(CheckerError, ValueError):
    def __init__(self, issues: list[ParseIssue]):
        self.issues = issues
        first = str(issues[0]) if issues else "empty model"
        more = f" (+{len(issues) - 1} more)" if len(issues) > 1 else ""
        super().__init__(f"Model syntax error at {first}{more}")


class ModelError(CheckerError, ValueError):
    """The model is not acceptable for the requested operation."""


class PropertySyntaxError(CheckerError, ValueError):
    """The chance-constraint property does not match the grammar."""


class MixtureError(CheckerError, ValueError):
    """Invalid Erlang or mixture parameters."""


class MomentSolverError(CheckerError, ArithmeticError):
    """The moment recurrence could not be solved."""


class FitError(CheckerError, ArithmeticError):
    """The mixture fit cannot start or produced a non-finite objective."""


class QuadratureError(CheckerError, ArithmeticError):
    def __init__(self, message: str, achieved_error: float):
        self.achieved_error = achieved_error
        super().__init__(f"{message} (achieved error {achieved_error:.3g})")
