"""Exception types raised across the package.

Errors that correspond to a violated dynamical hypothesis subclass
:class:`HypothesisViolation`; the CLI maps those to exit status 2.
"""

from __future__ import annotations


class TowerdynError(Exception):
    """Base class for all package errors."""


class DomainError(TowerdynError, ValueError):
    """A point lies outside the map's domain."""


class InvalidMap(TowerdynError, ValueError):
    """A MapSpec failed one of its construction invariants."""


class CriticalHit(TowerdynError):
    """An orbit landed on a critical point (derivative underflow)."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class InvalidSeries(TowerdynError, ValueError):
    """A user-supplied gamma series is outside (0, 1/2) or not summable."""


class WindowTooShort(TowerdynError, ValueError):
    """Too few terms to judge convergence of a series."""


class DegenerateSequence(TowerdynError, ValueError):
    """A sequence spans too small a range to infer a decay rate."""


class BracketError(TowerdynError, ValueError):
    """A parameter bracket does not straddle the requested combinatorics."""


class NoThreshold(TowerdynError):
    """No index in the window satisfies the geometric tail condition."""


class ResolutionFloor(TowerdynError):
    """A piece became too short to be represented in floating point."""


class MarkovMismatch(TowerdynError):
    """A full-return piece does not map onto the base interval."""


class OrbitEscape(TowerdynError):
    """An orbit of the return map left the discovered pieces."""


class AllCensored(TowerdynError):
    """A correlation curve drops into the noise floor too early to classify."""


class NonConvergence(TowerdynError):
    """Independent density estimates disagree beyond tolerance."""


class KacDivergence(TowerdynError):
    """Censored mass makes the tower normalisation unreliable."""


class ConfigError(TowerdynError, ValueError):
    """Malformed run configuration."""


class HypothesisViolation(TowerdynError):
    """The map violates a standing assumption of the inducing construction.

    ``hypothesis`` names the violated assumption so diagnostics can report it.
    """

    hypothesis = "unspecified"

    def __init__(self, message: str, hypothesis: str | None = None):
        super().__init__(message)
        if hypothesis is not None:
            self.hypothesis = hypothesis


class NoValidDelta(HypothesisViolation):
    hypothesis = "summability (**) with bounded backward contraction (BBC)"


class NonHyperbolicSample(HypothesisViolation):
    hypothesis = "no periodic attractors (expansion outside the critical neighbourhood)"


class Renormalizable(HypothesisViolation):
    hypothesis = "non-renormalizable on the support of the measure"


class NoT0(HypothesisViolation):
    hypothesis = "density of critical preimages in the support"


class CoboundarySuspected(TowerdynError):
    """Block-sum spread is too small to test the CLT (observable looks degenerate)."""
