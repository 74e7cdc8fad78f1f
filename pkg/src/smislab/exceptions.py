"""Exception hierarchy.

Everything raised deliberately by the library derives from :class:`SmislabError`
so the CLI can map it to exit code 1.
"""

from __future__ import annotations


class SmislabError(Exception):
    """Base class for all library errors."""


class ParseError(SmislabError):
    """A CSV input could not be tokenized or a cell could not be parsed."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class DataValidationError(SmislabError):
    """One or more rows violate a data-model invariant.

    ``diagnostics`` is a list of ``(line, message)`` pairs; ``line`` is the
    1-based physical line in the source file (header is line 1) or ``None``
    when the violation is not attributable to a single row.
    """

    def __init__(self, diagnostics, source=None):
        self.diagnostics = list(diagnostics)
        self.source = source
        head = "; ".join(
            (f"line {ln}: {msg}" if ln is not None else msg)
            for ln, msg in self.diagnostics[:5]
        )
        more = len(self.diagnostics) - 5
        if more > 0:
            head += f" (+{more} more)"
        prefix = f"{source}: " if source else ""
        super().__init__(prefix + head)


class EmptyUniverseError(SmislabError):
    """No asset satisfies the eligibility rules for a quarter."""


class EmptyGroupError(SmislabError):
    """A fund comparison group has no member with a snapshot in the quarter."""

    def __init__(self, group, quarter):
        self.group = group
        self.quarter = str(quarter)
        super().__init__(f"no {group} funds with a snapshot in {self.quarter}")


class DegenerateTestError(SmislabError):
    """The significance test is undefined (pooled proportion or variance is degenerate)."""


class DegreesOfFreedomError(SmislabError):
    """Too few observations for the pooled-variance t-test."""


class InsufficientUniverseError(SmislabError):
    """Fewer than ``2k`` assets are available to a selection rule."""


class InfeasibleCornerError(SmislabError):
    """No grid point puts ``k`` assets in the requested corner."""

    def __init__(self, corner, k, max_count):
        self.corner = corner
        self.k = k
        self.max_count = max_count
        super().__init__(
            f"corner {corner} cannot reach k={k} assets (max achievable {max_count})"
        )


class AssumptionViolatedError(SmislabError):
    """No feasible portfolio has an expected return above the risk-free rate."""


class RankDeficientError(SmislabError):
    """The design matrix is not of full column rank."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient; collinear columns: {self.columns}")


class ScaleClipError(SmislabError):
    """Too many fitted scales were non-positive in the location-scale regression."""
