"""
Exception types shared by the pipeline stages
"""
from typing import List, Optional
from models import Diagnostic, Span


class PslError(Exception):
    """Base class for interpreter errors"""


class DiagnosticError(PslError):
    """Raised when checking produced at least one error diagnostic"""

    def __init__(self, diagnostics: List[Diagnostic]):
        self.diagnostics = diagnostics
        first = next((d for d in diagnostics if d.is_error), None)
        super().__init__(first.render() if first else "check failed")


class RuntimeFault(PslError):
    """A named run-time error raised by executing a program"""

    def __init__(self, code: str, message: str, span: Optional[Span] = None):
        self.code = code
        self.message = message
        self.span = span
        super().__init__(f"{code}: {message}")

    def render(self) -> str:
        where = self.span.render() if self.span else "<runtime>"
        return f"{where}: fault[{self.code}]: {self.message}"


class InternalFault(RuntimeFault):
    """Interpreter invariant broken (a bug, not a user error)"""

    def __init__(self, message: str, span: Optional[Span] = None):
        super().__init__("INTERNAL", message, span)


class UsageError(PslError):
    """Bad command line"""
