"""
Exception types raised by the swarmlab library.
"""

from typing import List, Optional


class SwarmlabError(Exception):
    """Base class for every error raised by swarmlab."""


class DomainError(SwarmlabError, ValueError):
    """A query or computation that is undefined for the given model objects."""


class ConfigError(SwarmlabError, ValueError):
    """
    Invalid configuration.

    Carries every violation found, not only the first one, so a config file can be fixed in one pass.
    """

    def __init__(self, violations: List[str], source: Optional[str] = None):
        self.violations = list(violations)
        self.source = source
        head = f"{source}: " if source else ""
        super().__init__(head + "; ".join(self.violations))


class PresetError(SwarmlabError, KeyError):
    """Unknown scenario preset or an override the preset does not accept."""

    def __init__(self, message: str, suggestions: Optional[List[str]] = None):
        self.message = message
        self.suggestions = list(suggestions or [])
        super().__init__(message)

    def __str__(self) -> str:
        if self.suggestions:
            return f"{self.message} (did you mean: {', '.join(self.suggestions)}?)"
        return self.message
