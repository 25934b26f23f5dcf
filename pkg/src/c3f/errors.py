"""Exception and warning types shared across the package."""

from __future__ import annotations


class C3FError(Exception):
    """Base class for all package errors."""


class SchemaError(C3FError, ValueError):
    """Input file header does not match the documented schema."""


class RowError(C3FError, ValueError):
    """A data row violates a record invariant."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmptyFileError(C3FError, ValueError):
    """Input file has no header (or no bytes at all)."""


class ConfigError(C3FError, ValueError):
    """Run configuration failed validation."""


class GroupError(C3FError, ValueError):
    """Group universe problem: unknown, missing, or too small a group."""


class C3FWarning(UserWarning):
    """Non-fatal condition worth surfacing in reports and manifests."""
