"""Exception types shared across the package."""

from __future__ import annotations


class FlexAggError(Exception):
    """Base class for all errors raised by flexagg."""


class MalformedMatrix(FlexAggError):
    """A MATPOWER matrix literal could not be decoded."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingSection(FlexAggError):
    """A required ``mpc.<field>`` assignment is absent from the case text."""


class MalformedCase(FlexAggError):
    """The decoded case violates a structural invariant."""


class NotRadial(FlexAggError):
    """The branch graph is not a tree rooted at the PCC."""

    def __init__(self, message: str, buses=()):
        self.buses = tuple(buses)
        super().__init__(message)


class NoLeaf(FlexAggError):
    """The network has no leaf bus that could host the DER."""


class Singular(FlexAggError):
    """A matrix factorization met a pivot below tolerance."""


class NoConvergence(FlexAggError):
    """An iterative method hit its iteration cap or diverged.

    ``best`` holds the best iterate seen and ``residual`` its residual norm.
    """

    def __init__(self, message: str, best=None, residual: float = float("nan"), iterations: int = 0):
        self.best = best
        self.residual = residual
        self.iterations = iterations
        super().__init__(message)


class Infeasible(FlexAggError):
    """An optimization problem has an empty feasible set."""

    def __init__(self, message: str, constraints=()):
        self.constraints = tuple(constraints)
        super().__init__(message)


class Unbounded(FlexAggError):
    """A QP objective decreases without bound over the feasible set."""


class DegeneratePolygon(FlexAggError):
    """A polygon has (numerically) zero area where a region was required."""


class EmptyRegion(FlexAggError):
    """A flexibility set turned out empty where a nonempty one was required."""


class FixedPointStall(FlexAggError):
    """The coordination fixed-point loop reached its iteration cap."""

    def __init__(self, message: str, gap: float = float("nan")):
        self.gap = gap
        super().__init__(message)
