"""Exception types raised by the afred pipeline."""


class AfredError(Exception):
    """Base class for all library errors."""


class DimensionError(AfredError, ValueError):
    """Vector or matrix dimensions do not match."""


class OutOfDomain(AfredError):
    """A point lies outside the domain ball or outside the certified k-ball."""


class OutOfDelta(AfredError):
    """A parameter point lies outside the parameter box."""


class StepUnderflow(AfredError):
    """A finite-difference stencil leaves the domain ball."""


class UnsupportedLevel(AfredError):
    """Tangent level above the supported maximum."""


class AmbiguousRank(AfredError):
    """A singular value sits too close to the rank threshold."""


class Singular(AfredError):
    """A stabilization operator could not be inverted reliably."""


class NotContractive(AfredError):
    """Neumann series operator has norm >= 1."""


class Truncation(AfredError):
    """Neumann series did not reach tolerance within max_terms."""


class NotContracting(AfredError):
    """Observed successive step ratio exceeds 1 during fixed-point iteration."""


class LeftBall(AfredError):
    """A fixed-point iterate left the delta_sigma ball."""


class MaxIter(AfredError):
    """Iteration budget exhausted."""


class EmptyPlan(AfredError):
    """Radius selection produced a zero radius."""


class Disagreement(AfredError):
    """Two independent derivative formulas disagree."""


class NoConvergence(AfredError):
    """A Newton run failed to converge."""


class ConfigError(AfredError):
    """Malformed run configuration."""
