"""Command-line normalization and pattern matching shared by the engine and scorers."""

from __future__ import annotations

from fnmatch import fnmatchcase


def normalize_command(text: str) -> str:
    """Collapse whitespace and case-fold the command word; arguments keep their case."""
    words = text.split()
    if not words:
        return ""
    return " ".join([words[0].casefold(), *words[1:]])


def matches(command: str, pattern: str) -> bool:
    """Glob match (``*``, ``?``, ``[...]``) of a normalized command against a normalized pattern."""
    return fnmatchcase(normalize_command(command), normalize_command(pattern))
