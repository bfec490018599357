"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data errors
(parsing, validation, infeasible generation specs) exit 2, numeric
failures (NaN losses, diverging fine-tunes) exit 3.
"""


class MacroplaceError(Exception):
    """Base class for all package errors."""


class ParseError(MacroplaceError):
    """Malformed input text. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None, section: str = ""):
        self.line = line
        self.section = section
        where = f"{section or 'input'}" + (f":{line}" if line is not None else "")
        super().__init__(f"{where}: {message}")


class ValidationError(MacroplaceError):
    """Structurally invalid netlist, placement, or configuration value."""


class InfeasibleSpecError(MacroplaceError):
    """Generation target cannot fit the requested canvas."""


class NumericError(MacroplaceError):
    """Non-finite values or divergence during training/sampling.

    ``report`` optionally carries diagnostics gathered before the abort.
    """

    def __init__(self, message: str, report: dict | None = None):
        self.report = report or {}
        super().__init__(message)
