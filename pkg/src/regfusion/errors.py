"""Shared exception types."""


class DataError(Exception):
    """Malformed or inconsistent input data (files, shapes, degenerate values)."""


class DivergenceError(RuntimeError):
    """A solver produced non-finite iterates or violated a required descent
    inequality; carries a diagnostic message."""
