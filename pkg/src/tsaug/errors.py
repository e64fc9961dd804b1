"""Exception hierarchy shared across tsaug."""

from __future__ import annotations

from typing import Optional


class TsaugError(ValueError):
    """Base class for every error raised by tsaug."""


class ValidationError(TsaugError):
    """Inputs, parameters or shapes outside their documented range."""


class ConfigError(ValidationError):
    """A run configuration or manifest failed schema validation."""


class DataFormatError(ValidationError):
    """A CSV file or manifest could not be parsed into a dataset.

    Attributes:
        row: 1-based data row of the offending line, when known.
        series_id: Series the problem belongs to, when known.
    """

    def __init__(
        self,
        message: str,
        *,
        row: Optional[int] = None,
        series_id: Optional[str] = None,
    ) -> None:
        details = []
        if row is not None:
            details.append(f"row {row}")
        if series_id is not None:
            details.append(f"series {series_id!r}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(f"{message}{suffix}")
        self.row = row
        self.series_id = series_id


class NumericError(TsaugError):
    """A computation produced a non-finite or undefined result."""
