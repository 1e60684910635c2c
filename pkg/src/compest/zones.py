"""Smoothness zones and minimax rate exponents for composite functions g = f o G.

A smoothness pair ``(gamma, beta)`` records the Hoelder smoothness of the outer
function ``f`` and the inner function ``G``.  The square ``(0, 2]^2`` is split
into four zones that decide which local model (and hence which weight) the
estimator uses:

* ``P1`` local single-index model,
* ``P2`` / ``P3`` roughness isolated to a single dimension,
* ``P4`` no local structure.

All comparisons are carried out in exact rational arithmetic on the given
floating point values, so boundary points are classified by the inequalities
verbatim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

__all__ = [
    "DomainError",
    "SmoothnessPair",
    "RateInfo",
    "ZONES",
    "zone_predicates",
    "classify",
    "rate_branch",
    "rate_info",
    "phi",
    "psi",
    "noise_scale",
]

ZONES = ("P1", "P2", "P3", "P4")


class DomainError(ValueError):
    """Raised when an input lies outside the domain of an operation."""


@dataclass(frozen=True)
class SmoothnessPair:
    gamma: float
    beta: float
    dim: int = 2

    def __post_init__(self):
        if not (self.gamma > 0 and self.beta > 0):
            raise DomainError(f"gamma and beta must be positive, got {self.gamma}, {self.beta}")
        if int(self.dim) != self.dim or self.dim < 2:
            raise DomainError(f"dim must be an integer >= 2, got {self.dim}")

    @property
    def in_estimator_square(self) -> bool:
        return self.gamma <= 2 and self.beta <= 2

    @property
    def rho(self) -> float:
        return (self.dim - 1) * (self.gamma - 1) / self.beta

    @property
    def effective_smoothness(self) -> float:
        if self.gamma <= 1 and self.beta <= 1:
            return self.gamma * self.beta
        return min(self.gamma, self.beta)

    def as_dict(self) -> dict:
        return {"gamma": self.gamma, "beta": self.beta, "dim": self.dim}


@dataclass(frozen=True)
class RateInfo:
    exponent: float
    branch: int
    effective_smoothness: float
    rho: float

    def as_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "branch": self.branch,
            "effective_smoothness": self.effective_smoothness,
            "rho": self.rho,
        }


def _exact(A: SmoothnessPair):
    return Fraction(A.gamma), Fraction(A.beta), int(A.dim)


def zone_predicates(A: SmoothnessPair) -> dict[str, bool]:
    """Membership of ``A`` in each zone, each predicate evaluated independently.

    ``P4`` also receives the strip ``beta < 1 < gamma``, which no other zone
    covers; there the composite is Hoelder-``beta`` and behaves like the
    inactive-structure zone.
    """
    g, b, d = _exact(A)
    one, two = Fraction(1), Fraction(2)
    p2_p3 = one < g <= b <= two
    return {
        "P1": g <= one and one < b <= two,
        "P2": p2_p3 and b >= d * (g - 1) + 1,
        "P3": p2_p3 and b < d * (g - 1) + 1,
        "P4": (g <= one and b <= one)
        or (one <= b < g <= two)
        or (b < one < g <= two),
    }


def classify(A: SmoothnessPair) -> str:
    """Return the zone tag of ``A``; requires ``(gamma, beta)`` in ``(0, 2]^2``."""
    if not A.in_estimator_square:
        raise DomainError(f"(gamma, beta) = ({A.gamma}, {A.beta}) is outside (0, 2]^2")
    hits = [z for z, ok in zone_predicates(A).items() if ok]
    if len(hits) != 1:
        raise RuntimeError(f"zone classification not unique for {A}: {hits}")
    return hits[0]


def rate_branch(A: SmoothnessPair) -> int:
    """Index (1, 2 or 3) of the rate formula that applies to ``A`` on all of R_+^2."""
    g, b, d = _exact(A)
    conds = (
        b > 1 and b >= d * (g - 1) + 1,
        g > 1 and b < d * (g - 1) + 1,
        g <= 1 and b <= 1,
    )
    hits = [i + 1 for i, c in enumerate(conds) if c]
    if len(hits) != 1:
        raise RuntimeError(f"rate branches do not partition at {A}: {hits}")
    return hits[0]


def rate_info(A: SmoothnessPair) -> RateInfo:
    g, b, d = A.gamma, A.beta, A.dim
    branch = rate_branch(A)
    if branch == 1:
        exponent = 2 * g / (2 * g + 1 + (d - 1) / b)
    elif branch == 2:
        exponent = 2 / (2 + d / b)
    else:
        exponent = 2 / (2 + d / (g * b))
    return RateInfo(exponent, branch, A.effective_smoothness, A.rho)


def noise_scale(eps: float) -> float:
    """``eps * sqrt(ln(1/eps))``, the scale every rate is a power of."""
    if not 0 < eps < 1:
        raise DomainError(f"noise level must lie in (0, 1), got {eps}")
    return eps * math.sqrt(math.log(1 / eps))


def phi(eps: float, A: SmoothnessPair) -> float:
    """Minimax rate for the composite class at noise level ``eps``."""
    return noise_scale(eps) ** rate_info(A).exponent


def psi(eps: float, alpha: float, dim: int) -> float:
    """Classical rate on the isotropic Hoelder class of smoothness ``alpha`` in ``dim`` dimensions."""
    return noise_scale(eps) ** (2 * alpha / (2 * alpha + dim))
