"""Exception hierarchy shared across the package."""


class ShrinkT2Error(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(ShrinkT2Error):
    """A matrix required to be symmetric positive definite is not."""


class DomainError(ShrinkT2Error):
    """A numeric argument lies outside the domain of the operation."""


class DegenerateGene(ShrinkT2Error):
    """A gene's data cannot support the requested computation."""


class DegreesOfFreedomError(ShrinkT2Error):
    """A test's denominator degrees of freedom are not positive."""


class RankDeficiency(ShrinkT2Error):
    """A contrast matrix violates its declared rank."""


class NonConvergence(ShrinkT2Error):
    """An iterative fit stopped without meeting its tolerances."""


class TooFewGenes(ShrinkT2Error):
    """Fewer usable genes than the configured floor."""


class NoRoot(ShrinkT2Error):
    """A bracketing root search failed to find a sign change."""


class ParseError(ShrinkT2Error):
    """Malformed input file."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + loc)


class LayoutError(ShrinkT2Error):
    """Column layout does not describe the data file."""


class DuplicateGene(ShrinkT2Error):
    """The same gene identifier appears more than once."""


class DimensionMismatch(ShrinkT2Error):
    """Objects that must share a dimension do not."""


class VersionMismatch(ShrinkT2Error):
    """A serialized file was written by an incompatible format version."""


class AdmissibilityError(ShrinkT2Error):
    """The requested design/hypothesis combination is not testable."""
