"""Hypothesis families behind the minimax lower bound.

Two families are built.  In the ridge regime the hypotheses are
``g_k = f o G_k`` with ``f(u) = L0 h^gamma f0(u/h)``, ``G_0(t) = L0 sin t_1``
and ``G_k`` adding a small transverse bump of width ``h1`` centred at grid
point ``x_k``.  In the bump regime (``gamma, beta <= 1``) ``g_0 = 0`` and
``g_k = |L0 h^beta phi0((t - x_k)/h)|^gamma``.  The module measures the two
premises of the reduction to multiple testing: pairwise sup-norm separation
and the Kullback-Leibler divergence to ``g_0``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .field import bump, bump_prime, holder_check, plateau_bump
from .zones import DomainError, SmoothnessPair, noise_scale

__all__ = [
    "HypothesisFamily",
    "build_family",
    "separation",
    "SeparationReport",
    "kl_divergence",
    "KLReport",
    "scan_L0",
    "smoothness_certificate",
    "REGIMES",
    "L0_SCAN",
]

REGIMES = ("ridge", "bump")
L0_SCAN = tuple(2.0 ** (-k) for k in range(1, 13))
F0_DESCRIPTION = "f0(u) = exp(1 - 1/(1 - 4u^2)) on |u| < 1/2; plateau variant S((1/2 - |u|)/(1/4)) with S(x) = psi(x)/(psi(x) + psi(1 - x)), psi(x) = exp(-1/x)"


@dataclass(frozen=True, eq=False)
class HypothesisFamily:
    A: SmoothnessPair
    eps: float
    regime: str
    q1: int
    h: float
    h1: float
    L0: float
    m: int
    centers: np.ndarray
    a: float = 1.5
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.A.dim

    # -- components ------------------------------------------------------
    def f(self, u) -> np.ndarray:
        """Outer function."""
        u = np.asarray(u, dtype=float)
        if self.regime == "ridge":
            return self.L0 * self.h**self.A.gamma * bump(u / self.h)
        return np.abs(u) ** self.A.gamma

    def f_prime(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.regime == "ridge":
            return self.L0 * self.h ** (self.A.gamma - 1) * bump_prime(u / self.h)
        raise ValueError("bump-regime outer function has no derivative oracle")

    def phi0(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.regime == "ridge":
            return 0.5 * np.prod(bump(z), axis=-1)
        return np.prod(plateau_bump(z), axis=-1)

    def perturbation(self, k: int, t) -> np.ndarray:
        """``G_k - G_0`` at points ``t`` of shape ``(n, d)``."""
        t = np.atleast_2d(np.asarray(t, dtype=float))
        if k == 0:
            return np.zeros(len(t))
        x = self.centers[k - 1]
        if self.regime == "ridge":
            return self.L0 * self.h1**self.A.beta * self.phi0((t[:, 1:] - x) / self.h1)
        return self.L0 * self.h**self.A.beta * self.phi0((t - x) / self.h)

    def G(self, k: int, t) -> np.ndarray:
        t = np.atleast_2d(np.asarray(t, dtype=float))
        base = self.L0 * np.sin(t[:, 0]) if self.regime == "ridge" else np.zeros(len(t))
        return base + self.perturbation(k, t)

    def grad_G(self, k: int, t) -> np.ndarray:
        if self.regime != "ridge":
            raise ValueError("gradient oracle is only provided in the ridge regime")
        t = np.atleast_2d(np.asarray(t, dtype=float))
        out = np.zeros_like(t)
        out[:, 0] = self.L0 * np.cos(t[:, 0])
        if k > 0:
            z = (t[:, 1:] - self.centers[k - 1]) / self.h1
            vals = bump(z)
            ders = bump_prime(z)
            scale = 0.5 * self.L0 * self.h1 ** (self.A.beta - 1)
            for j in range(self.dim - 1):
                others = np.prod(np.delete(vals, j, axis=1), axis=1)
                out[:, 1 + j] = scale * ders[:, j] * others
        return out

    def g(self, k: int, t) -> np.ndarray:
        return self.f(self.G(k, t))

    # -- geometry ----------------------------------------------------------
    def support_box(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Box (within the domain) outside which ``g_k = g_0``."""
        d = self.dim
        x = self.centers[k - 1]
        if self.regime == "bump":
            return x - self.h / 2, x + self.h / 2
        b = (self.h / self.L0) * 0.5 * (1 + self.L0)  # bound on |sin t1| where f0 terms can be nonzero
        t1 = self.a if b >= 1 else min(self.a, math.asin(b))
        lo = np.concatenate([[-t1], x - self.h1 / 2])
        hi = np.concatenate([[t1], x + self.h1 / 2])
        return lo, hi

    def describe(self) -> dict:
        return {
            "A": self.A.as_dict(),
            "eps": self.eps,
            "regime": self.regime,
            "q1": self.q1,
            "h": self.h,
            "h1": self.h1,
            "L0": self.L0,
            "m": self.m,
            "a": self.a,
            "f0": F0_DESCRIPTION,
        }


def build_family(A: SmoothnessPair, eps: float, L0: float, regime: str = "ridge", a: float = 1.5) -> HypothesisFamily:
    """Construct the ``m + 1`` hypotheses for noise level ``eps``.

    Parameters
    ----------
    A : SmoothnessPair
        Any positive pair; the bump regime needs ``gamma, beta <= 1``.
    eps : float
        In ``(0, 1/e)``.
    L0 : float
        Amplitude in ``(0, 1)``.
    regime : {"ridge", "bump"}
    a : float
        Half-width of the observation domain used for divergence integrals.
    """
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}")
    if not (0 < L0 < 1):
        raise DomainError(f"L0 must lie in (0, 1), got {L0}")
    if not (0 < eps < math.exp(-1)):
        raise DomainError(f"eps must lie in (0, 1/e), got {eps}")
    g, b, d = A.gamma, A.beta, A.dim
    s = noise_scale(eps)
    if regime == "ridge":
        q1 = math.ceil(s ** (-2.0 / (2 * g * b + b + d - 1)))
        h1 = 1.0 / q1
        h = h1**b
        axes = d - 1
    else:
        if g > 1 or b > 1:
            raise DomainError("the bump regime needs gamma, beta <= 1")
        q1 = math.ceil(s ** (-2.0 / (2 * g * b + d)))
        h = h1 = 1.0 / q1
        axes = d
    ticks = (2 * np.arange(q1) + 1) / (2 * q1)
    centers = np.array(list(itertools.product(ticks, repeat=axes)), dtype=float)
    return HypothesisFamily(A, float(eps), regime, int(q1), float(h), float(h1), float(L0), len(centers), centers, float(a))


# ---------------------------------------------------------------------------
# separation
# ---------------------------------------------------------------------------


@dataclass
class SeparationReport:
    value: float
    refinement_delta: float
    points_per_axis: list

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _box_grid(lo, hi, n_axes) -> np.ndarray:
    axes = [np.linspace(a, b, n) for a, b, n in zip(lo, hi, n_axes)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))


def _sup_diff(fam: HypothesisFamily, l: int, k: int, n_axes) -> float:
    best = 0.0
    for j in {l, k} - {0}:
        lo, hi = fam.support_box(j)
        lo = np.maximum(lo, -1.0)
        hi = np.minimum(hi, 1.0)
        if np.any(hi <= lo):
            continue
        pts = _box_grid(lo, hi, n_axes)
        for chunk in np.array_split(pts, max(1, len(pts) // 1_000_000)):
            best = max(best, float(np.max(np.abs(fam.g(l, chunk) - fam.g(k, chunk)))))
    return best


def separation(fam: HypothesisFamily, l: int, k: int, points_per_axis: int = 2048, budget: int = 4_200_000) -> SeparationReport:
    """Sup over ``[-1, 1]^d`` of ``|g_l - g_k|`` on a dense grid over the perturbed supports.

    ``points_per_axis`` nodes are used along every active axis as long as
    the total stays within ``budget``; otherwise the transverse axes are
    thinned.  The difference to a half-resolution grid is reported.
    """
    if l == k:
        return SeparationReport(0.0, 0.0, [])
    d = fam.dim
    n = points_per_axis
    if n**d > budget:
        n_t = max(16, int((budget / n) ** (1.0 / (d - 1))))
        n_axes = [n] + [n_t] * (d - 1)
    else:
        n_axes = [n] * d
    fine = _sup_diff(fam, l, k, n_axes)
    coarse = _sup_diff(fam, l, k, [max(3, m // 2) for m in n_axes])
    return SeparationReport(fine, abs(fine - coarse), n_axes)


# ---------------------------------------------------------------------------
# Kullback-Leibler divergence
# ---------------------------------------------------------------------------


@dataclass
class KLReport:
    value: float
    coarse: float
    fine: float
    richardson_delta: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _midpoint_l2sq(fam: HypothesisFamily, k: int, nodes: int) -> float:
    lo, hi = fam.support_box(k)
    lo = np.maximum(lo, -fam.a)
    hi = np.minimum(hi, fam.a)
    d = fam.dim
    axes = [a + (np.arange(nodes) + 0.5) * (b - a) / nodes for a, b in zip(lo, hi)]
    cell = float(np.prod((hi - lo) / nodes))
    total = 0.0
    # iterate over the first axis in slabs to bound memory
    rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, d - 1)
    for t1 in np.array_split(axes[0], max(1, nodes // 64)):
        pts = np.column_stack([np.repeat(t1, len(rest)), np.tile(rest, (len(t1), 1))])
        diff = fam.g(k, pts) - fam.g(0, pts)
        total += float(np.sum(diff * diff))
    return total * cell


def kl_divergence(fam: HypothesisFamily, k: int, nodes: int = 512) -> KLReport:
    """``eps^-2 int (g_0 - g_k)^2`` over the domain by tensor midpoint quadrature.

    The integral runs over the box where ``g_k`` differs from ``g_0`` with
    ``nodes`` points per axis and is repeated with ``2 * nodes``; the value
    reported is the finer one and the Richardson delta is their difference.
    """
    if k == 0:
        return KLReport(0.0, 0.0, 0.0, 0.0)
    c = _midpoint_l2sq(fam, k, nodes) / fam.eps**2
    f = _midpoint_l2sq(fam, k, 2 * nodes) / fam.eps**2
    return KLReport(f, c, f, abs(f - c))


def scan_L0(
    A: SmoothnessPair,
    eps: float,
    regime: str = "ridge",
    scan=L0_SCAN,
    nodes: int = 512,
    a: float = 1.5,
) -> dict:
    """Geometric scan for amplitudes with ``KL(g_k, g_0) <= ln(m) / 16`` for every ``k``.

    Returns a dict with one row per ``L0`` (largest first) and the largest
    admissible amplitude (``None`` if the scan finds none).
    """
    rows = []
    admissible = None
    for L0 in scan:
        fam = build_family(A, eps, L0, regime, a)
        bound = math.log(fam.m) / 16 if fam.m > 1 else 0.0
        kls = _family_kls(fam, nodes)
        ok = bool(max(kls) <= bound)
        rows.append({"L0": L0, "max_kl": max(kls), "bound": bound, "ok": ok})
        if ok and admissible is None:
            admissible = L0
    return {"rows": rows, "admissible_L0": admissible}


def _family_kls(fam: HypothesisFamily, nodes: int) -> list[float]:
    """Divergences of all perturbed hypotheses.

    The perturbations are translates of one another; when every support box
    lies inside the domain they share one divergence value, which is then
    computed once.
    """
    inside = all(
        np.all(fam.support_box(k)[0][1:] >= -fam.a) and np.all(fam.support_box(k)[1][1:] <= fam.a)
        for k in range(1, fam.m + 1)
    )
    if inside and fam.regime == "ridge":
        v = kl_divergence(fam, 1, nodes).value
        return [v] * fam.m
    return [kl_divergence(fam, k, nodes).value for k in range(1, fam.m + 1)]


# ---------------------------------------------------------------------------
# smoothness certificate
# ---------------------------------------------------------------------------


def smoothness_certificate(
    fam: HypothesisFamily,
    L1: float = 1.0,
    L2: float = 1.0,
    samples: int = 10_000,
    seed: int = 0,
    ks=None,
) -> dict:
    """Sampled Hoelder ratios of the components of the family.

    Reports the smallest constants consistent with the samples
    (``min_L1``, ``min_L2``) and whether the declared ``(L1, L2)`` pass.
    """
    g_, b_ = fam.A.gamma, fam.A.beta
    ks = list(range(0, min(fam.m, 3) + 1)) if ks is None else list(ks)
    order_f = min(g_, 2.0)
    grad_f = (lambda u: fam.f_prime(u[:, 0])[:, None]) if order_f > 1 else None
    span = max(fam.h, 1e-12)
    rf = holder_check(lambda u: fam.f(u[:, 0]), order_f, 1.0, 1, samples, seed, grad_f, a=span)
    out = {"min_L1": rf.max_ratio, "L1": L1, "f_pass": rf.max_ratio <= L1, "G": []}
    order_G = min(b_, 2.0)
    for k in ks:
        grad_G = (lambda t, k=k: fam.grad_G(k, t)) if order_G > 1 else None
        rg = holder_check(lambda t, k=k: fam.G(k, t), order_G, 1.0, fam.dim, samples, seed + 1 + k, grad_G, a=1.0)
        out["G"].append({"k": k, "min_L2": rg.max_ratio, "pass": rg.max_ratio <= L2})
    out["min_L2"] = max(r["min_L2"] for r in out["G"])
    out["G_pass"] = all(r["pass"] for r in out["G"])
    out["passed"] = bool(out["f_pass"] and out["G_pass"])
    return out
