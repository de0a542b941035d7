"""
Exception hierarchy shared by the library and the command-line steps.
"""

from typing import Optional


class RankerError(Exception):
    """Base class for every error raised on purpose by psm_ranker."""


class ConfigError(RankerError):
    """Invalid run configuration or model parameters (exit code 2)."""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataError(RankerError):
    """Unusable input data (exit code 3)."""


class TsvParseError(DataError):
    """A PSM, score or model TSV that cannot be parsed."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[str] = None) -> None:
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column '{column}'")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


# Process exit codes of the command-line steps.
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_UNCONVERGED = 4
