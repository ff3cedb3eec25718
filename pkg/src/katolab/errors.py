"""Exception types raised by katolab.

Argument-shape problems (mismatched grids, indices out of range) raise the
builtin ``ValueError``/``IndexError``; the classes here cover the failure
modes a run can hit and that the command line maps to exit codes.
"""

from typing import Any, Dict, Iterable, Optional


class KatolabError(Exception):
    """Base class for all katolab errors."""


class ConfigError(KatolabError, ValueError):
    """Invalid experiment or solver configuration.

    All problems found in one validation pass are collected in ``errors`` so
    they can be reported together.
    """

    def __init__(self, errors: Iterable[str]):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


class ResolutionError(KatolabError, ValueError):
    """The grid is too coarse for the requested strip or corrector."""


class SolverError(KatolabError, RuntimeError):
    """A linear solve, eigensolve or time integration left its tolerance."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class IntegrationError(KatolabError, RuntimeError):
    """Non-finite state during SDE integration.

    Attributes:
        step: Index of the step that produced the bad state
        record: Partial trajectory up to (excluding) the failing step
    """

    def __init__(self, message: str, step: int, record: Any = None):
        self.step = step
        self.record = record
        super().__init__(message)
