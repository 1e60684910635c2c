"""Zone-dependent piecewise-constant weights.

A weight is stored as a list of axis-aligned boxes in the positive orthant,
each with a sign.  The weight at ``y`` is the signed height of the box that
contains ``|y|`` (componentwise absolute value), so the full weight is the
mirror image of the stored pieces across every coordinate hyperplane.  A box
with positive-orthant volume ``mu`` carries height ``sign * 2**-d / mu``, which
makes every piece contribute exactly ``sign`` to the total mass.

Multistep weights use two breakpoint sequences: ``u`` (half-widths along the
first axis, increasing) and ``v`` (half-widths along the remaining axes,
decreasing, with a trailing zero).  Piece ``(i, j)`` covers
``[u[i-1], u[i]] x [v[j+1], v[j]]^(d-1)`` with ``u[0] = 0``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .zones import DomainError, SmoothnessPair, classify

__all__ = [
    "WeightBuildError",
    "WeightSpec",
    "OrientedWeight",
    "build_weight",
    "eval_weight",
    "norms",
    "orient",
    "householder_frame",
    "marginal_averages",
    "moment",
    "alpha_recursion",
    "loglog_volume",
    "check_weight",
    "isotropic_boxcar",
    "KINDS",
]

KINDS = ("boxcar_slow", "boxcar_inactive", "rectangle_P1", "multistep")
GOLDEN = (math.sqrt(5.0) + 1.0) / 2.0
_GAP_RTOL = 1e-14


class WeightBuildError(ValueError):
    """Raised when breakpoint sequences are degenerate or non-monotone."""


@dataclass(frozen=True, eq=False)
class WeightSpec:
    """A signed piecewise-constant weight with analytic norms.

    Attributes
    ----------
    A : SmoothnessPair
    lam : float
        Size parameter.
    kind : str
        One of :data:`KINDS`.
    construction : str
        Finer label of the breakpoint rule (``"two-step"``, ``"recursion"``,
        ``"loglog"``, ``"boxcar"`` or ``"rectangle"``).
    steps : int
        Number of steps ``r`` (1 for boxcars and rectangles).
    u, v : tuple of float
        Breakpoints.  ``v`` carries the trailing zero.
    lo, hi : ndarray, shape (P, d)
        Piece corners in the positive orthant.
    signs : ndarray of int, shape (P,)
    labels : tuple of (int, int)
        Piece indices ``(i, j)``.
    """

    A: SmoothnessPair
    lam: float
    kind: str
    construction: str
    steps: int
    u: tuple
    v: tuple
    lo: np.ndarray
    hi: np.ndarray
    signs: np.ndarray
    labels: tuple
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.A.dim

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volumes(self) -> np.ndarray:
        """Positive-orthant volumes ``mu`` of the pieces."""
        return np.prod(self.widths, axis=1)

    @property
    def heights(self) -> np.ndarray:
        return self.signs * 2.0 ** (-self.dim) / self.volumes

    @property
    def mass(self) -> float:
        return float(math.fsum(float(s) for s in self.signs))

    @property
    def l1(self) -> float:
        return float(len(self.signs))

    @property
    def sum_inverse_mu(self) -> float:
        """``sum 1/mu``, the squared L2 norm of the orthant profile."""
        return math.fsum(1.0 / self.volumes)

    @property
    def l2sq(self) -> float:
        return 2.0 ** (-self.dim) * self.sum_inverse_mu

    @property
    def l2(self) -> float:
        return math.sqrt(self.l2sq)

    @property
    def radius(self) -> float:
        """Largest sup-norm of a point in the support."""
        return float(self.hi.max())

    @property
    def euclidean_radius(self) -> float:
        return float(np.sqrt((self.hi**2).sum(axis=1)).max())

    def __call__(self, y) -> np.ndarray:
        return eval_weight(self, y)

    def to_dict(self) -> dict:
        return {
            "A": self.A.as_dict(),
            "lambda": self.lam,
            "kind": self.kind,
            "construction": self.construction,
            "steps": self.steps,
            "u": list(self.u),
            "v": list(self.v),
            "pieces": [
                {
                    "label": list(lab),
                    "lo": lo.tolist(),
                    "hi": hi.tolist(),
                    "sign": int(s),
                    "height": float(h),
                    "mu": float(mu),
                }
                for lab, lo, hi, s, h, mu in zip(
                    self.labels, self.lo, self.hi, self.signs, self.heights, self.volumes
                )
            ],
            "l1": self.l1,
            "l2sq": self.l2sq,
            "sum_inverse_mu": self.sum_inverse_mu,
            "mass": self.mass,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WeightSpec":
        pieces = data["pieces"]
        return cls(
            A=SmoothnessPair(**data["A"]),
            lam=float(data["lambda"]),
            kind=data["kind"],
            construction=data["construction"],
            steps=int(data["steps"]),
            u=tuple(data["u"]),
            v=tuple(data["v"]),
            lo=np.array([p["lo"] for p in pieces], dtype=float),
            hi=np.array([p["hi"] for p in pieces], dtype=float),
            signs=np.array([p["sign"] for p in pieces], dtype=int),
            labels=tuple(tuple(p["label"]) for p in pieces),
            meta=dict(data.get("meta", {})),
        )


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def alpha_recursion(A: SmoothnessPair, max_steps: int = 10_000) -> tuple[int, list[float]]:
    """Step count ``r`` and exponents ``alpha_0..alpha_{r-1}`` of the recursion.

    ``alpha_0 = 1/beta`` and ``alpha_{k+1} = rho * alpha_k + 1/beta``; ``r`` is
    the integer with ``alpha_{r-1} >= 1/gamma > alpha_{r-2}``.
    """
    g, b, rho = A.gamma, A.beta, A.rho
    alphas = [1.0 / b]
    if alphas[0] >= 1.0 / g:
        raise WeightBuildError(f"alpha recursion needs beta > gamma, got {A}")
    while alphas[-1] < 1.0 / g:
        if len(alphas) > max_steps:
            raise WeightBuildError(f"alpha recursion did not reach 1/gamma for {A}")
        alphas.append(alphas[-1] * rho + 1.0 / b)
    return len(alphas), alphas


def loglog_volume(A: SmoothnessPair, lam: float) -> float:
    """The log-log step driver ``V(lambda)``; ``-inf`` when its argument is not positive."""
    g, b = A.gamma, A.beta
    arg = (g - 1) * (b - g) / (g * b * b) * math.log(1.0 / lam)
    return math.log(arg) if arg > 0 else -math.inf


def _two_step(A: SmoothnessPair, lam: float):
    g, b = A.gamma, A.beta
    u = [lam ** (1 / g), lam ** (1 / b)]
    v = [lam ** ((b - g + 1) / b**2), 0.5 * lam ** (1 / b)]
    return u, v


def _recursion_steps(A: SmoothnessPair, lam: float):
    g, b = A.gamma, A.beta
    r, alphas = alpha_recursion(A)
    u = [lam ** (1 / g)] + [lam ** alphas[r - i] for i in range(2, r + 1)]
    v = [lam ** (1 / b) * u[i] ** (-(g - 1) / b) for i in range(1, r)]
    v.append(0.5 * lam ** (1 / b))
    return u, v


def _loglog_steps(A: SmoothnessPair, lam: float, V: float):
    g, b = A.gamma, A.beta
    half_log_golden = 0.5 * math.log(GOLDEN)
    r = 2
    while V / (r - 1) >= half_log_golden:
        r += 1
    alpha = V / (r - 1)
    nu = math.sqrt(GOLDEN)
    u = [lam ** (1 / g) * math.exp(b / (g - 1) * math.exp(alpha * (i - 1))) for i in range(1, r + 1)]
    v = [lam ** (1 / (g * b)) * math.exp(-nu * math.exp(alpha * i)) for i in range(1, r)]
    v.append(0.5 * lam ** (1 / b))
    return u, v, {"V": V, "alpha": alpha, "nu": nu}


def _check_sequences(A, lam, u, v):
    u_arr = np.asarray(u, dtype=float)
    v_arr = np.asarray(v, dtype=float)
    ctx = f"A={A.as_dict()}, lambda={lam}, u={u}, v={v}"
    if not (np.all(np.isfinite(u_arr)) and np.all(np.isfinite(v_arr))):
        raise WeightBuildError(f"non-finite breakpoints: {ctx}")
    if np.any(u_arr <= 0) or np.any(v_arr <= 0):
        raise WeightBuildError(f"non-positive breakpoints: {ctx}")
    du = np.diff(u_arr)
    if np.any(du <= _GAP_RTOL * u_arr[1:]):
        raise WeightBuildError(f"u is not strictly increasing with resolvable gaps: {ctx}")
    dv = -np.diff(v_arr)
    if np.any(dv <= _GAP_RTOL * v_arr[:-1]):
        raise WeightBuildError(f"v is not strictly decreasing with resolvable gaps: {ctx}")


def _multistep_pieces(d: int, u, v):
    """Pieces of the generic multistep pavement; ``v`` excludes the trailing zero."""
    r = len(u)
    uu = [0.0] + list(u)
    vv = list(v) + [0.0]  # vv[j-1] = v_j, vv[r] = v_{r+1} = 0
    lo, hi, signs, labels = [], [], [], []

    def add(i, j, sign):
        lo.append([uu[i - 1]] + [vv[j]] * (d - 1))
        hi.append([uu[i]] + [vv[j - 1]] * (d - 1))
        signs.append(sign)
        labels.append((i, j))

    add(1, 1, +1)
    for i in range(2, r + 1):
        add(i, i, +1)
        add(i, i - 1, -1)
    return lo, hi, signs, labels


def build_weight(A: SmoothnessPair, lam: float) -> WeightSpec:
    """Construct the weight of form ``A`` and size ``lam``.

    Parameters
    ----------
    A : SmoothnessPair
        Must satisfy ``(gamma, beta) in (0, 2]^2``.
    lam : float
        Size parameter in ``(0, 1]``.

    Returns
    -------
    WeightSpec

    Raises
    ------
    DomainError
        If ``lam`` is outside ``(0, 1]`` or ``A`` is outside the square.
    WeightBuildError
        If the breakpoints collapse or lose monotonicity.
    """
    lam = float(lam)
    if not (0.0 < lam <= 1.0):
        raise DomainError(f"lambda must lie in (0, 1], got {lam}")
    zone = classify(A)
    g, b, d = A.gamma, A.beta, A.dim
    meta: dict = {"zone": zone}

    if zone in ("P4", "P1"):
        if zone == "P1":
            kind, construction = "rectangle_P1", "rectangle"
            w1, w2 = lam ** (1 / g), lam ** (1 / (g * b))
        else:
            if g <= 1 and b <= 1:
                kind, w = "boxcar_slow", lam ** (1 / (g * b))
            else:
                kind, w = "boxcar_inactive", lam ** (1 / b)
            construction = "boxcar"
            w1 = w2 = w
        # the height 2^-d / volume must stay finite in double precision
        volume = w1 * w2 ** (d - 1)
        if not (volume > 0 and math.isfinite(2.0**-d / volume)):
            raise WeightBuildError(f"window underflow for A={A.as_dict()}, lambda={lam}")
        return WeightSpec(
            A=A,
            lam=lam,
            kind=kind,
            construction=construction,
            steps=1,
            u=(w1,),
            v=(w2, 0.0),
            lo=np.zeros((1, d)),
            hi=np.array([[w1] + [w2] * (d - 1)]),
            signs=np.array([1]),
            labels=((1, 1),),
            meta=meta,
        )

    rho = A.rho
    excess = (b - g) / g
    use_loglog = zone == "P2" and excess > (1 + rho) * rho
    if use_loglog:
        V = loglog_volume(A, lam)
        meta["V"] = V
        if V <= 0:
            construction = "two-step"
            u, v = _two_step(A, lam)
        else:
            construction = "loglog"
            u, v, extra = _loglog_steps(A, lam, V)
            meta.update(extra)
    elif rho >= excess:
        construction = "two-step"
        u, v = _two_step(A, lam)
    else:
        construction = "recursion"
        u, v = _recursion_steps(A, lam)

    _check_sequences(A, lam, u, v)
    lo, hi, signs, labels = _multistep_pieces(d, u, v)
    return WeightSpec(
        A=A,
        lam=lam,
        kind="multistep",
        construction=construction,
        steps=len(u),
        u=tuple(u),
        v=tuple(v) + (0.0,),
        lo=np.array(lo, dtype=float),
        hi=np.array(hi, dtype=float),
        signs=np.array(signs, dtype=int),
        labels=tuple(labels),
        meta=meta,
    )


def isotropic_boxcar(A: SmoothnessPair, half_width: float) -> WeightSpec:
    """Cube boxcar of the given half-width, used as an unstructured baseline."""
    if not half_width > 0:
        raise DomainError("half-width must be positive")
    d = A.dim
    return WeightSpec(
        A=A,
        lam=float(half_width),
        kind="boxcar_inactive",
        construction="isotropic-baseline",
        steps=1,
        u=(half_width,),
        v=(half_width, 0.0),
        lo=np.zeros((1, d)),
        hi=np.full((1, d), float(half_width)),
        signs=np.array([1]),
        labels=((1, 1),),
        meta={"zone": "baseline"},
    )


# ---------------------------------------------------------------------------
# evaluation and norms
# ---------------------------------------------------------------------------


def eval_weight(spec: WeightSpec, y) -> np.ndarray | float:
    """Evaluate the weight at one point ``(d,)`` or many points ``(n, d)``."""
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 1
    ay = np.abs(np.atleast_2d(y))
    if ay.shape[-1] != spec.dim:
        raise ValueError(f"expected points of dimension {spec.dim}, got shape {y.shape}")
    out = np.zeros(ay.shape[0])
    for lo, hi, h in zip(spec.lo, spec.hi, spec.heights):
        inside = np.all((ay >= lo) & (ay < hi), axis=1)
        out[inside] = h
    return float(out[0]) if scalar else out


def norms(spec: WeightSpec) -> tuple[float, float]:
    """Analytic ``(L1, L2)`` norms of the full (symmetrized) weight."""
    return spec.l1, spec.l2


# ---------------------------------------------------------------------------
# orientation
# ---------------------------------------------------------------------------


def householder_frame(theta) -> np.ndarray:
    """Orthogonal matrix whose first column is ``theta``.

    Uses the reflection across the bisector of ``e1`` and ``theta``; returns
    the identity at ``theta = e1``.  The denominator ``1 - theta_1`` is
    evaluated as ``|theta_perp|^2 / (1 + theta_1)`` when ``theta_1 > 0`` so the
    frame stays accurate as ``theta`` approaches ``e1``.
    """
    theta = np.asarray(theta, dtype=float)
    norm = np.linalg.norm(theta)
    if norm == 0 or not np.isfinite(norm):
        raise DomainError("orientation must be a nonzero finite vector")
    theta = theta / norm
    d = theta.size
    perp_sq = float(np.dot(theta[1:], theta[1:]))
    if perp_sq == 0.0 and theta[0] > 0:
        return np.eye(d)
    denom = perp_sq / (1 + theta[0]) if theta[0] > 0 else 1 - theta[0]
    w = -theta.copy()
    w[0] = denom  # w = e1 - theta, first entry computed stably
    M = np.eye(d) - np.outer(w, w) / denom
    M[:, 0] = theta
    M[0, :] = theta
    return M


@dataclass(frozen=True, eq=False)
class OrientedWeight:
    """A weight evaluated in the rotated coordinates ``M^T x``."""

    spec: WeightSpec
    theta: np.ndarray
    frame: np.ndarray

    def __call__(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        return eval_weight(self.spec, x @ self.frame)

    @property
    def l1(self) -> float:
        return self.spec.l1

    @property
    def l2(self) -> float:
        return self.spec.l2

    @property
    def radius(self) -> float:
        """Euclidean radius of the support (rotation invariant)."""
        return self.spec.euclidean_radius


def orient(spec: WeightSpec, theta) -> OrientedWeight:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.dim,):
        raise ValueError(f"orientation must have shape ({spec.dim},), got {theta.shape}")
    M = householder_frame(theta)
    return OrientedWeight(spec=spec, theta=M[:, 0].copy(), frame=M)


# ---------------------------------------------------------------------------
# integrals
# ---------------------------------------------------------------------------

_GL16 = np.polynomial.legendre.leggauss(16)
_GL32 = np.polynomial.legendre.leggauss(32)


def _gauss_1d(a: float, b: float, rule=_GL16):
    x, w = rule
    half = 0.5 * (b - a)
    return a + half * (x + 1), half * w


def _gauss_box(lo, hi, rule=_GL16):
    pts, wts = zip(*(_gauss_1d(a, b, rule) for a, b in zip(lo, hi)))
    grid = np.stack(np.meshgrid(*pts, indexing="ij"), axis=-1).reshape(-1, len(lo))
    weights = np.ones(1)
    for w in wts:
        weights = np.multiply.outer(weights, w).ravel()
    return grid, weights


def marginal_averages(
    spec: WeightSpec,
    q1: Callable[[np.ndarray], np.ndarray],
    Q: Callable[[np.ndarray], np.ndarray],
) -> tuple[float, float]:
    """Integrals of the weight against a first-axis and a transverse test function.

    Parameters
    ----------
    q1 : callable
        Maps an array of first coordinates ``(n,)`` to values ``(n,)``.
    Q : callable
        Maps transverse coordinates ``(n, d-1)`` to values ``(n,)``.

    Returns
    -------
    (float, float)
        ``int K(y) q1(y_1) dy`` and ``int K(y) Q(y_2..y_d) dy``, each by
        Gauss-Legendre quadrature on every piece (exact for polynomials of
        degree up to 31).
    """
    d = spec.dim
    first, rest = [], []
    for lo, hi, s in zip(spec.lo, spec.hi, spec.signs):
        x, w = _gauss_1d(lo[0], hi[0])
        sym = np.dot(w, np.asarray(q1(x), float) + np.asarray(q1(-x), float))
        first.append(s * sym / (2.0 * (hi[0] - lo[0])))

        acc = 0.0
        for flips in itertools.product((1.0, -1.0), repeat=d - 1):
            f = np.array(flips)
            a, b = np.minimum(f * lo[1:], f * hi[1:]), np.maximum(f * lo[1:], f * hi[1:])
            pts, wts = _gauss_box(a, b)
            acc += np.dot(wts, np.asarray(Q(pts), float))
        rest.append(s * acc / (2.0 ** (d - 1) * np.prod(hi[1:] - lo[1:])))
    return math.fsum(first), math.fsum(rest)


def _monomial_box_integral(lo, hi, powers) -> float:
    out = 1.0
    for a, b, p in zip(lo, hi, powers):
        out *= (b ** (p + 1) - a ** (p + 1)) / (p + 1)
    return out


def _even_norm_power_integral(lo, hi, k: int) -> float:
    """``int_box ||y||^(2k) dy`` via the multinomial expansion."""
    d = len(lo)
    total = []
    for combo in itertools.combinations_with_replacement(range(d), k):
        powers = [0] * d
        for j in combo:
            powers[j] += 1
        coef = math.factorial(k)
        for p in powers:
            coef //= math.factorial(p)
        total.append(coef * _monomial_box_integral(lo, hi, [2 * p for p in powers]))
    return math.fsum(total)


def moment(spec: WeightSpec, m: float) -> float:
    """``int |K(y)| ||y||^m dy``.

    Exact for even integer ``m`` (per-piece monomial integrals), otherwise
    tensor Gauss-Legendre with 32 nodes per axis on each piece.
    """
    if m < 0:
        raise DomainError(f"moment order must be nonnegative, got {m}")
    d = spec.dim
    even = float(m).is_integer() and int(m) % 2 == 0
    parts = []
    for lo, hi, h in zip(spec.lo, spec.hi, spec.heights):
        if even:
            box = _even_norm_power_integral(lo, hi, int(m) // 2)
        else:
            pts, wts = _gauss_box(lo, hi, _GL32)
            box = float(np.dot(wts, np.linalg.norm(pts, axis=1) ** m))
        parts.append(abs(h) * 2.0**d * box)
    return math.fsum(parts)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


def check_weight(spec: WeightSpec, n_points: int = 10_000, seed: int = 0) -> list[tuple[str, bool, str]]:
    """Re-verify the structural invariants of ``spec``.

    Returns a list of ``(name, passed, detail)`` rows.
    """
    rng = np.random.default_rng(seed)
    d = spec.dim
    rows = []

    mass = math.fsum(float(h * 2.0**d * mu) for h, mu in zip(spec.heights, spec.volumes))
    rows.append(("unit mass", abs(mass - 1.0) <= 1e-12, f"mass={mass!r}"))

    l1 = math.fsum(float(abs(h) * 2.0**d * mu) for h, mu in zip(spec.heights, spec.volumes))
    rows.append(("l1 identity", abs(l1 - (2 * spec.steps - 1)) <= 1e-10 * l1, f"l1={l1!r}, r={spec.steps}"))

    l2sq = math.fsum(float(h * h * 2.0**d * mu) for h, mu in zip(spec.heights, spec.volumes))
    rel = abs(l2sq - spec.l2sq) / spec.l2sq
    rows.append(("l2 identity", rel <= 1e-10, f"l2sq={l2sq!r}, rel={rel:.2e}"))

    R = spec.radius
    y = rng.uniform(-1.2 * R, 1.2 * R, size=(n_points, d))
    sym = bool(np.array_equal(eval_weight(spec, y), eval_weight(spec, -y)))
    rows.append(("symmetry", sym, f"{n_points} points"))

    outside = y[np.max(np.abs(y), axis=1) > R]
    zero_out = bool(np.all(eval_weight(spec, outside) == 0.0))
    rows.append(("support", zero_out, f"{len(outside)} exterior points"))

    if spec.kind == "multistep":
        u, v = np.array(spec.u), np.array(spec.v)
        mono = bool(np.all(np.diff(u) > 0) and np.all(np.diff(v) < 0) and np.all(u > 0))
        rows.append(("monotone breakpoints", mono, f"u={spec.u}, v={spec.v}"))
        u1, vr = spec.u[0], spec.v[spec.steps - 1]
        c = np.array([1.0, 0.3, -0.7, 0.2, 0.05])

        def q1(s):
            return np.polyval(c[::-1], s)

        def Q(t):
            return np.polyval(c[::-1], t.sum(axis=1))

        got1, gotQ = marginal_averages(spec, q1, Q)
        exp1 = _poly_average(c, u1)
        expQ = _transverse_average(Q, vr, d - 1)
        ok = abs(got1 - exp1) <= 1e-10 * abs(exp1) and abs(gotQ - expQ) <= 1e-10 * abs(expQ)
        rows.append(("marginal averages", ok, f"q1 {got1:.6g} vs {exp1:.6g}; Q {gotQ:.6g} vs {expQ:.6g}"))
    return rows


def _poly_average(coefs, half_width: float) -> float:
    """Average of a polynomial over ``[-w, w]`` by its antiderivative."""
    P = np.polynomial.Polynomial(coefs).integ()
    return float((P(half_width) - P(-half_width)) / (2 * half_width))


def _transverse_average(Q, half_width: float, k: int) -> float:
    pts, wts = _gauss_box([-half_width] * k, [half_width] * k)
    return float(np.dot(wts, Q(pts)) / (2 * half_width) ** k)
