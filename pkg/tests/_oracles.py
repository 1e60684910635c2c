"""Independent reference computations shared by the test modules."""

from __future__ import annotations

import itertools
import math

import numpy as np

from compest.weights import eval_weight
from compest.zones import SmoothnessPair, classify

MARGIN = 0.05


def sample_pair(rng: np.random.Generator, zone: str, d: int) -> SmoothnessPair:
    """Draw a pair from ``zone`` kept ``MARGIN`` away from degenerate boundaries."""
    m = MARGIN
    while True:
        if zone == "P1":
            g, b = rng.uniform(m, 1.0), rng.uniform(1 + m, 2.0)
        elif zone == "P2":
            g = rng.uniform(1 + m, 2.0 - m)
            lo = max(g + m, d * (g - 1) + 1)
            if lo >= 2.0:
                continue
            b = rng.uniform(lo, 2.0)
        elif zone == "P3":
            g = rng.uniform(1 + m, 2.0 - m)
            hi = min(2.0, d * (g - 1) + 1 - m)
            if hi <= g + m:
                continue
            b = rng.uniform(g + m, hi)
        elif zone == "P4":
            if rng.random() < 0.5:
                g, b = rng.uniform(m, 1.0), rng.uniform(m, 1.0)
            else:
                b = rng.uniform(1.0, 2.0 - m)
                g = rng.uniform(b + m / 2, 2.0) if b + m / 2 < 2.0 else 2.0
        else:
            raise ValueError(zone)
        A = SmoothnessPair(float(g), float(b), d)
        if classify(A) == zone:
            return A


def cell_integrals(spec) -> tuple[float, float, float]:
    """``(int K, int |K|, int K^2)`` by summing over the tensor grid of breakpoints.

    The weight is constant on every cell of the grid spanned by all piece
    boundaries (and their mirror images), so the midpoint rule is exact.
    """
    d = spec.dim
    axes = []
    for j in range(d):
        b = np.unique(np.concatenate([spec.lo[:, j], spec.hi[:, j]]))
        b = np.unique(np.concatenate([-b, b]))
        axes.append(b)
    mids = [0.5 * (a[1:] + a[:-1]) for a in axes]
    widths = [np.diff(a) for a in axes]
    pts = np.stack(np.meshgrid(*mids, indexing="ij"), axis=-1).reshape(-1, d)
    vol = np.ones(1)
    for w in widths:
        vol = np.multiply.outer(vol, w).ravel()
    vals = eval_weight(spec, pts)
    mass = vals * vol  # multiply by the volume first: heights can exceed 1e154
    return (
        math.fsum(mass),
        math.fsum(np.abs(mass)),
        math.fsum(mass * vals),
    )


def power_average(half_width: float, k: int) -> float:
    """Average of ``y^k`` over ``[-w, w]``."""
    return 0.0 if k % 2 else half_width**k / (k + 1)


def random_polynomial(rng: np.random.Generator, nvars: int, degree: int = 4):
    """Random polynomial as a list of ``(coefficient, exponents)`` terms."""
    terms = []
    for exps in itertools.product(range(degree + 1), repeat=nvars):
        if sum(exps) <= degree:
            terms.append((float(rng.normal()), exps))
    return terms


def eval_polynomial(terms, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    out = np.zeros(len(x))
    for c, exps in terms:
        out += c * np.prod(x ** np.array(exps), axis=1)
    return out


def polynomial_cube_average(terms, half_width: float) -> float:
    return math.fsum(c * math.prod(power_average(half_width, e) for e in exps) for c, exps in terms)


def grid_norms(fn, radius: float, d: int, n: int) -> tuple[float, float, float]:
    """Midpoint-grid ``(int f, int |f|, int f^2)`` over ``[-radius, radius]^d``."""
    h = 2 * radius / n
    axis = -radius + (np.arange(n) + 0.5) * h
    pts = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    v = fn(pts)
    cell = h**d
    return float(v.sum() * cell), float(np.abs(v).sum() * cell), float((v * v).sum() * cell)
