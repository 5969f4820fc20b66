"""Shared exception types."""


class BudgetExceeded(RuntimeError):
    """A computation refused to start or was truncated by a resource budget."""
