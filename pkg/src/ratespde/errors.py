"""Shared exception types."""

from __future__ import annotations


class GridTooLargeError(Exception):
    """A requested grid exceeds the configured node budget."""

    def __init__(self, points: int, cap: int):
        super().__init__(f"grid with {points} nodes exceeds the cap of {cap}")
        self.points = points
        self.cap = cap


class ComponentSolveError(Exception):
    """A component-grid solve failed; identifies the offending level vector."""

    def __init__(self, levels: tuple[int, ...]):
        super().__init__(f"component grid {levels} failed")
        self.levels = levels


class ConfigError(Exception):
    """A run configuration could not be parsed or validated."""

    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line
