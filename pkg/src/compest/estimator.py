"""Oriented linear estimators and pointwise threshold selection.

Every candidate estimator is indexed by a triplet ``J = (A, theta, lam)``:
the weight of form ``A`` and size ``lam`` rotated so that its first axis
points along ``theta``.  For a field of cell increments ``X_i`` the linear
estimate at ``x`` is ``sum_i K_J(t_i - x) X_i``.  On the lattice the weight is
sampled at the cell offsets and rescaled to unit lattice mass, so constants
are reproduced exactly.

The selection rule accepts ``J`` at ``x`` when, for every ``J'`` in the grid,
``|g_{J' * J}(x) - g_{J'}(x)|`` stays below the threshold ``TH(J', J)``, where
``g_{J' * J}`` uses the convolution of the two weights.  The first acceptable
triplet in net order supplies the estimate; with no acceptable triplet the
estimate is 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.fft as sfft
from scipy.signal import fftconvolve

from .field import CompositeFunction, ObservationField
from .weights import OrientedWeight, WeightBuildError, WeightSpec, build_weight, householder_frame, orient
from .zones import DomainError, SmoothnessPair, noise_scale

__all__ = [
    "ResolutionError",
    "SolverError",
    "SelectionConfig",
    "Triplet",
    "GridFunction",
    "SphereNet",
    "EstimateReport",
    "threshold_constant",
    "threshold",
    "solve_lambda",
    "sphere_net",
    "make_grid",
    "discretize",
    "linear_estimate",
    "convolved_weight",
    "delta_estimate",
    "LatticeEngine",
    "select_point",
    "global_estimate",
    "truncation_level",
    "oracle_orientation",
    "smooth_at",
    "required_half_width",
    "margin_cells",
    "eval_cubes",
    "PointDiagnostics",
]


class ResolutionError(ValueError):
    """Raised when a lattice is too coarse for the pieces of a weight."""


class SolverError(RuntimeError):
    """Raised when the balance equation has no sign change on its bracket."""


def threshold_constant(p: float, dim: int) -> float:
    """``C(p, d) = 2 + sqrt(4p + 8d)``."""
    return 2.0 + math.sqrt(4.0 * p + 8.0 * dim)


@dataclass(frozen=True)
class SelectionConfig:
    """Tuning of the selection procedure.

    Attributes
    ----------
    p : float
        Loss power.
    C1 : float
        Constant of the bias-variance balance ``C1 lam = eps sqrt(ln 1/eps) ||K||_2``.
    net_size : int
        Number of orientations.
    eval_spacing : float or None
        Side of the evaluation cubes; ``None`` means 4 lattice cells.
    truncation_floor : float
        Lower bound on the truncation level.
    method : {"direct", "fft"}
        Summation path used by :func:`global_estimate`.
    """

    p: float = 2.0
    C1: float = 1.0
    net_size: int = 64
    eval_spacing: Optional[float] = None
    truncation_floor: float = 1.0
    method: str = "direct"

    def __post_init__(self):
        if self.p <= 0 or self.C1 <= 0:
            raise DomainError("p and C1 must be positive")
        if self.net_size < 2:
            raise DomainError("net_size must be at least 2")
        if self.method not in ("direct", "fft"):
            raise ValueError(f"unknown method {self.method!r}")

    def threshold_constant(self, dim: int) -> float:
        return threshold_constant(self.p, dim)

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class Triplet:
    A: SmoothnessPair
    theta: np.ndarray
    lam: float
    weight: OrientedWeight

    @classmethod
    def build(cls, A: SmoothnessPair, theta, lam: float, spec: Optional[WeightSpec] = None) -> "Triplet":
        spec = spec if spec is not None else build_weight(A, lam)
        ow = orient(spec, theta)
        return cls(A, ow.theta, float(lam), ow)

    @property
    def l1(self) -> float:
        return self.weight.l1

    @property
    def l2(self) -> float:
        return self.weight.l2


def threshold(J1: Triplet, J2: Triplet, eps: float, p: float, dim: int) -> float:
    """``C(p, d) (||K_J1||_1 + ||K_J2||_1) ||K_J1||_2 eps sqrt(ln 1/eps)``."""
    return threshold_constant(p, dim) * (J1.l1 + J2.l1) * J1.l2 * noise_scale(eps)


def solve_lambda(A: SmoothnessPair, eps: float, C1: float = 1.0, rtol: float = 1e-10) -> float:
    """Root of ``C1 lam - eps sqrt(ln 1/eps) ||K_(A, lam)||_2`` by log-space bisection."""
    if not (0 < eps < math.exp(-1)):
        raise DomainError(f"eps must lie in (0, 1/e), got {eps}")
    if C1 <= 0:
        raise DomainError("C1 must be positive")
    s = noise_scale(eps)

    def F(lam):
        return C1 * lam - s * build_weight(A, lam).l2

    # multi-step weights collapse at lam = 1 (all breakpoints coincide), so
    # shrink the upper bracket until the construction resolves
    hi = 1.0
    for _ in range(40):
        try:
            F(hi)
            break
        except WeightBuildError:
            hi *= 0.9
    top = hi
    while F(hi) <= 0:
        # F need not be monotone near lam = 1; look for a positive value below
        hi *= 0.5
        if hi < 1e-12:
            raise SolverError(f"no sign change: F <= 0 on [1e-12, {top:.3g}] for A={A.as_dict()}, eps={eps}, C1={C1}")
    lo = 0.5 * hi
    while F(lo) >= 0:
        lo *= 0.5
        if lo < 1e-280:
            raise SolverError(f"F stays nonnegative down to lambda={lo:.3g} for A={A.as_dict()}, eps={eps}")
    llo, lhi = math.log(lo), math.log(hi)
    while lhi - llo > rtol:
        mid = 0.5 * (llo + lhi)
        if F(math.exp(mid)) < 0:
            llo = mid
        else:
            lhi = mid
    return math.exp(lhi)


@dataclass(frozen=True, eq=False)
class SphereNet:
    points: np.ndarray
    covering_radius: float

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, k):
        return self.points[k]


def sphere_net(dim: int, size: int, probe: int = 20_000, seed: int = 0) -> SphereNet:
    """Deterministic direction set on the unit sphere starting with ``e1``.

    ``dim = 2`` uses equispaced angles (exact covering radius
    ``2 sin(pi / (2 size))``); ``dim >= 3`` uses a Fibonacci lattice with
    ``e1`` prepended and estimates the covering radius from ``probe`` random
    directions.
    """
    if size < 2:
        raise DomainError("size must be at least 2")
    if dim == 2:
        ang = 2 * np.pi * np.arange(size) / size
        pts = np.column_stack([np.cos(ang), np.sin(ang)])
        pts[0] = [1.0, 0.0]
        return SphereNet(pts, 2 * math.sin(math.pi / (2 * size)))
    if dim < 2:
        raise DomainError("dim must be at least 2")
    n = size - 1
    pts = _fibonacci_sphere(dim, n)
    e1 = np.zeros(dim)
    e1[0] = 1.0
    pts = np.vstack([e1, pts])
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((probe, dim))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    cos = np.clip((q @ pts.T).max(axis=1), -1, 1)
    rad = float(np.sqrt(2 - 2 * cos).max())
    return SphereNet(pts, rad)


def _fibonacci_sphere(dim: int, n: int) -> np.ndarray:
    """Quasi-uniform points on S^(dim-1) from a Kronecker sequence mapped by normals."""
    if dim == 3:
        k = np.arange(n) + 0.5
        z = 1 - 2 * k / n
        phi = np.pi * (1 + math.sqrt(5)) * k
        r = np.sqrt(1 - z * z)
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    from scipy.special import ndtri
    from scipy.stats import qmc

    u = qmc.Halton(d=dim, scramble=False).random(n + 1)[1:]
    g = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def make_grid(A: SmoothnessPair, eps: float, cfg: SelectionConfig, lam: Optional[float] = None) -> list[Triplet]:
    """All triplets ``(A, theta, lam_eps(A))`` for ``theta`` in the sphere net."""
    lam = solve_lambda(A, eps, cfg.C1) if lam is None else float(lam)
    spec = build_weight(A, lam)
    net = sphere_net(A.dim, cfg.net_size)
    return [Triplet.build(A, th, lam, spec) for th in net.points]


def margin_cells(spec: WeightSpec, step: float) -> int:
    """Lattice cells needed beyond ``[-1, 1]^d`` for convolved estimates at any point of it."""
    P = int(math.ceil((spec.euclidean_radius + 0.5 * step) / step)) + 1
    return 2 * P + 1


def required_half_width(spec: WeightSpec, step: float) -> float:
    """Smallest domain half-width that keeps two convolved supports inside the domain."""
    return 1.0 + margin_cells(spec, step) * step


# ---------------------------------------------------------------------------
# lattice discretization
# ---------------------------------------------------------------------------


def _min_piece_width(spec: WeightSpec) -> float:
    return float(spec.widths.min())


def _offsets(P: int, dim: int) -> np.ndarray:
    ax = np.arange(-P, P + 1)
    return np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1)


def discretize(weight: OrientedWeight, step: float, offset=None, check: bool = True) -> np.ndarray:
    """Sample ``K(n step - offset)`` on a centred cube of lattice offsets.

    The result has shape ``(2P + 1,) * d`` with index ``P`` at offset zero and
    is rescaled so that ``sum(values) * step^d = 1``.
    """
    d = weight.spec.dim
    offset = np.zeros(d) if offset is None else np.asarray(offset, dtype=float)
    if check and step > _min_piece_width(weight.spec) / 4:
        raise ResolutionError(
            f"step {step:.4g} does not resolve the narrowest piece ({_min_piece_width(weight.spec):.4g}); "
            "need step <= width / 4"
        )
    P = int(math.ceil((weight.radius + np.abs(offset).max()) / step)) + 1
    pts = _offsets(P, d).reshape(-1, d) * step - offset
    vals = weight(pts).reshape((2 * P + 1,) * d)
    mass = vals.sum() * step**d
    if not mass > 0:
        raise ResolutionError("lattice samples of the weight have non-positive mass")
    return vals / mass


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values on the centred lattice ``n * step``, ``n`` in ``[-P, P]^d``."""

    values: np.ndarray
    step: float

    @property
    def half_extent(self) -> int:
        return (self.values.shape[0] - 1) // 2

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.step ** self.values.ndim)

    def l2(self) -> float:
        return float(np.sqrt((self.values**2).sum() * self.step ** self.values.ndim))

    def l1(self) -> float:
        return float(np.abs(self.values).sum() * self.step ** self.values.ndim)

    def padded(self, P: int) -> np.ndarray:
        k = self.half_extent
        if P < k:
            raise ValueError("cannot shrink a grid function")
        return np.pad(self.values, P - k)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        if not math.isclose(self.step, other.step):
            raise ValueError("grid functions live on different lattices")
        P = max(self.half_extent, other.half_extent)
        return GridFunction(self.padded(P) - other.padded(P), self.step)


def convolved_weight(J1: Triplet, J2: Triplet, grid_step: float, offset=None) -> GridFunction:
    """Lattice version of ``K_{J1 * J2}(t) = int K_J1(t - y) K_J2(y) dy``.

    ``K_J1`` is sampled at ``n step - offset`` and ``K_J2`` at ``n step``; with
    the default zero offset the result is symmetric in its two arguments.
    """
    k1 = discretize(J1.weight, grid_step, offset)
    k2 = discretize(J2.weight, grid_step)
    d = k1.ndim
    return GridFunction(fftconvolve(k1, k2) * grid_step**d, grid_step)


# ---------------------------------------------------------------------------
# single-point estimators
# ---------------------------------------------------------------------------


def _nearest_cell(fld: ObservationField, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = np.rint((x + fld.a) / fld.h - 0.5).astype(int)
    delta = x - (-fld.a + (c + 0.5) * fld.h)
    return c, delta


def _patch(fld: ObservationField, c: np.ndarray, P: int) -> np.ndarray:
    if np.any(c - P < 0) or np.any(c + P >= fld.cells_per_axis):
        raise DomainError("weight support escapes the observation domain; enlarge the domain half-width")
    sl = tuple(slice(ci - P, ci + P + 1) for ci in c)
    return fld.data[sl]


def linear_estimate(J: Triplet, x, fld: ObservationField) -> float:
    """``sum_i K_J(t_i - x) X_i`` with the lattice weight rescaled to unit mass."""
    x = np.asarray(x, dtype=float)
    c, delta = _nearest_cell(fld, x)
    k = discretize(J.weight, fld.h, delta)
    P = (k.shape[0] - 1) // 2
    return float(np.sum(k * _patch(fld, c, P)))


def delta_estimate(J1: Triplet, J2: Triplet, x, fld: ObservationField) -> float:
    """``g_{J1 * J2}(x) - g_{J1}(x)``."""
    x = np.asarray(x, dtype=float)
    c, delta = _nearest_cell(fld, x)
    conv = convolved_weight(J1, J2, fld.h, delta)
    P = conv.half_extent
    g_conv = float(np.sum(conv.values * _patch(fld, c, P)))
    return g_conv - linear_estimate(J1, x, fld)


# ---------------------------------------------------------------------------
# lattice engine for many points
# ---------------------------------------------------------------------------


def _same_kernel(M1: np.ndarray, M2: np.ndarray, tol: float = 1e-12) -> bool:
    """Frames differ only by column signs, so coordinatewise-even weights coincide."""
    return bool(np.allclose(np.abs(M1.T @ M2), np.eye(M1.shape[0]), atol=tol, rtol=0))


class LatticeEngine:
    """Discretized kernels of a triplet grid on one field lattice.

    Parameters
    ----------
    grid : sequence of Triplet
        All triplets must share form and size.
    step : float
        Lattice step.
    offset : array_like
        Common offset ``delta`` of the evaluation points from cell centres.
    """

    def __init__(self, grid: Sequence[Triplet], step: float, offset, check: bool = True):
        if not grid:
            raise ValueError("empty triplet grid")
        lam = grid[0].lam
        if any(J.lam != lam or J.A != grid[0].A for J in grid):
            raise ValueError("all triplets in a grid must share form and size")
        self.grid = list(grid)
        self.step = float(step)
        self.offset = np.asarray(offset, dtype=float)
        self.dim = grid[0].A.dim
        uniq: list[int] = []
        index = []
        for J in self.grid:
            for u, k in enumerate(uniq):
                if _same_kernel(self.grid[k].weight.frame, J.weight.frame):
                    index.append(u)
                    break
            else:
                uniq.append(len(index))
                index.append(len(uniq) - 1)
        self.unique = uniq
        self.index = np.array(index)
        U = len(uniq)
        self.k_delta = [discretize(self.grid[k].weight, step, self.offset, check) for k in uniq]
        k_zero = [discretize(self.grid[k].weight, step, None, check) for k in uniq]
        self.P = max((k.shape[0] - 1) // 2 for k in self.k_delta + k_zero)
        self.k_delta = [np.pad(k, self.P - (k.shape[0] - 1) // 2) for k in self.k_delta]
        k_zero = [np.pad(k, self.P - (k.shape[0] - 1) // 2) for k in k_zero]
        self.k_zero = k_zero
        v = self.step**self.dim
        self.k_conv = np.stack(
            [fftconvolve(self.k_delta[a], k_zero[b]) * v for a in range(U) for b in range(U)]
        )  # index a * U + b  <->  (J' = a, J = b)
        self.Pc = 2 * self.P

    @property
    def n_unique(self) -> int:
        return len(self.unique)

    def plain_estimates(self, fld: ObservationField, centers: np.ndarray, chunk: int = 256) -> np.ndarray:
        """Plain estimates only, shape ``(n, U)``."""
        centers = np.atleast_2d(np.asarray(centers, dtype=int))
        if np.any(centers - self.P < 0) or np.any(centers + self.P >= fld.cells_per_axis):
            raise DomainError("weight support escapes the observation domain; enlarge the domain half-width")
        from numpy.lib.stride_tricks import sliding_window_view

        Kp = np.stack([k.ravel() for k in self.k_delta], axis=1)
        win_p = sliding_window_view(fld.data, (2 * self.P + 1,) * self.dim)
        out = np.empty((len(centers), self.n_unique))
        for s in range(0, len(centers), chunk):
            cc = centers[s : s + chunk]
            out[s : s + chunk] = win_p[tuple((cc - self.P).T)].reshape(len(cc), -1) @ Kp
        return out

    def _check_room(self, fld: ObservationField, centers: np.ndarray):
        if np.any(centers - self.Pc < 0) or np.any(centers + self.Pc >= fld.cells_per_axis):
            raise DomainError("convolved supports escape the observation domain; enlarge the domain half-width")

    def estimates(self, fld: ObservationField, centers: np.ndarray, method: str = "direct", chunk: int = 128):
        """Plain and convolved estimates at cell indices ``centers`` (shape ``(n, d)``).

        Returns ``(plain, conv)`` with shapes ``(n, U)`` and ``(n, U, U)``; the
        convolved array is indexed ``[point, J', J]``.
        """
        centers = np.atleast_2d(np.asarray(centers, dtype=int))
        self._check_room(fld, centers)
        U = self.n_unique
        if method == "fft":
            return self._estimates_fft(fld, centers)
        plain = np.empty((len(centers), U))
        conv = np.empty((len(centers), U * U))
        Kp = np.stack([k.ravel() for k in self.k_delta], axis=1)
        Kc = self.k_conv.reshape(U * U, -1).T
        from numpy.lib.stride_tricks import sliding_window_view

        win_p = sliding_window_view(fld.data, (2 * self.P + 1,) * self.dim)
        win_c = sliding_window_view(fld.data, (2 * self.Pc + 1,) * self.dim)
        for s in range(0, len(centers), chunk):
            cc = centers[s : s + chunk]
            idx_p = tuple((cc - self.P).T)
            idx_c = tuple((cc - self.Pc).T)
            plain[s : s + chunk] = win_p[idx_p].reshape(len(cc), -1) @ Kp
            conv[s : s + chunk] = win_c[idx_c].reshape(len(cc), -1) @ Kc
        return plain, conv.reshape(len(centers), U, U)

    def _wrapped(self, k: np.ndarray, shape) -> np.ndarray:
        full = np.zeros(shape)
        P = (k.shape[0] - 1) // 2
        idx = np.ix_(*[np.arange(-P, P + 1) % n for n in shape])
        full[idx] = k
        return full

    def _estimates_fft(self, fld: ObservationField, centers: np.ndarray):
        shape = fld.data.shape
        FX = sfft.rfftn(fld.data)
        U = self.n_unique
        Fd = [np.conj(sfft.rfftn(self._wrapped(k, shape))) for k in self.k_delta]
        F0 = [np.conj(sfft.rfftn(self._wrapped(k, shape))) for k in self.k_zero]
        v = self.step**self.dim
        sel = tuple(centers.T)
        plain = np.empty((len(centers), U))
        conv = np.empty((len(centers), U, U))
        for a in range(U):
            plain[:, a] = sfft.irfftn(FX * Fd[a], s=shape)[sel]
            for b in range(U):
                conv[:, a, b] = sfft.irfftn(FX * Fd[a] * F0[b] * v, s=shape)[sel]
        return plain, conv


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------


def truncation_level(eps: float, floor: float = 1.0) -> float:
    L = math.log(1.0 / eps)
    return max(math.log(L), floor) if L > 1 else floor


def _select(plain_u, conv_u, index, th):
    """Vectorized selection over points given unique-kernel estimates.

    ``plain_u`` is ``(n, U)`` and ``conv_u`` is ``(n, U, U)`` indexed
    ``[point, J', J]``.  Returns per-point chosen net index (``-1`` if none),
    acceptable counts (over the full net) and the delta table.
    """
    delta = conv_u - plain_u[:, :, None]  # [point, J', J]
    ok_u = np.all(np.abs(delta) <= th, axis=1)  # [point, J]; duplicates of J' add nothing new
    ok = ok_u[:, index]  # expand to net order
    count = ok.sum(axis=1)
    first = np.where(count > 0, np.argmax(ok, axis=1), -1)
    return first, count, delta, ok


@dataclass
class PointDiagnostics:
    accepted: np.ndarray
    chosen: int
    fallback: bool
    threshold: float
    deltas: np.ndarray

    def as_dict(self) -> dict:
        return {
            "accepted": self.accepted.tolist(),
            "chosen": self.chosen,
            "fallback": self.fallback,
            "threshold": self.threshold,
        }


def select_point(x, fld: ObservationField, grid: Sequence[Triplet], cfg: SelectionConfig, th_scale: float = 1.0):
    """Selected estimate at one point.

    Returns ``(value, PointDiagnostics)``; ``value`` is 0 when no triplet is
    acceptable.  ``th_scale`` multiplies all thresholds (diagnostic use).
    """
    x = np.asarray(x, dtype=float)
    c, delta = _nearest_cell(fld, x)
    eng = LatticeEngine(grid, fld.h, delta)
    plain, conv = eng.estimates(fld, c[None, :])
    th = th_scale * threshold(grid[0], grid[0], fld.eps, cfg.p, grid[0].A.dim)
    first, count, deltas, ok = _select(plain, conv, eng.index, th)
    k = int(first[0])
    value = float(plain[0, eng.index[k]]) if k >= 0 else 0.0
    return value, PointDiagnostics(ok[0], k, k < 0, th, deltas[0])


@dataclass
class EstimateReport:
    """Piecewise-constant global estimate on the evaluation cubes of ``[-1, 1]^d``."""

    points: np.ndarray
    values: np.ndarray
    raw_values: np.ndarray
    chosen_index: np.ndarray
    chosen_theta: np.ndarray
    accepted_count: np.ndarray
    fallback: np.ndarray
    truncated: np.ndarray
    cube_side: float
    truncation: float
    lam: float
    threshold: float
    covering_radius: float
    meta: dict = field(default_factory=dict)

    def value_at(self, x) -> np.ndarray:
        """Estimate at arbitrary points, constant on each evaluation cube."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = self.points.shape[1]
        n = int(round(len(self.points) ** (1.0 / d)))
        k = np.clip(np.floor((x + 1.0) / self.cube_side).astype(int), 0, n - 1)
        flat = np.ravel_multi_index(tuple(k.T), (n,) * d)
        return self.values[flat]

    def as_dict(self) -> dict:
        return {
            "points": self.points.tolist(),
            "values": self.values.tolist(),
            "chosen_index": self.chosen_index.tolist(),
            "chosen_theta": self.chosen_theta.tolist(),
            "accepted_count": self.accepted_count.tolist(),
            "fallback": self.fallback.tolist(),
            "truncated": self.truncated.tolist(),
            "cube_side": self.cube_side,
            "truncation": self.truncation,
            "lambda": self.lam,
            "threshold": self.threshold,
            "covering_radius": self.covering_radius,
            "meta": self.meta,
        }

    def csv_rows(self):
        d = self.points.shape[1]
        header = [f"x{j + 1}" for j in range(d)] + ["value"] + [f"theta{j + 1}" for j in range(d)]
        header += ["accepted_count", "fallback"]
        yield header
        for i in range(len(self.values)):
            yield (
                [repr(float(v)) for v in self.points[i]]
                + [repr(float(self.values[i]))]
                + [repr(float(v)) for v in self.chosen_theta[i]]
                + [str(int(self.accepted_count[i])), str(int(self.fallback[i]))]
            )


def eval_cubes(fld: ObservationField, spacing: Optional[float]):
    """Cube centres tiling ``[-1, 1]^d`` and their lattice cell indices.

    Returns ``(points, cells, delta, side)``.  The cube side must be an
    integer number of lattice steps so that every centre sits at the same
    offset ``delta`` from its cell centre.
    """
    h = fld.h
    side = 4 * h if spacing is None else float(spacing)
    q = side / h
    if abs(q - round(q)) > 1e-9 * max(1.0, q) or round(q) < 1:
        raise ValueError(
            f"evaluation spacing {side} is not a positive integer multiple of the lattice step {h}"
        )
    n = int(math.ceil(2.0 / side - 1e-9))
    axis = -1.0 + (np.arange(n) + 0.5) * side
    c_axis = np.floor((axis + fld.a) / h + 1e-9).astype(int)
    deltas = axis - (-fld.a + (c_axis + 0.5) * h)
    if np.ptp(deltas) > 1e-9 * h:
        raise ValueError("evaluation cubes are not commensurate with the field lattice")
    d = fld.dim
    pts = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    cells = np.stack(np.meshgrid(*([c_axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return pts, cells, np.full(d, float(np.mean(deltas))), side


def global_estimate(
    fld: ObservationField,
    A: SmoothnessPair,
    cfg: SelectionConfig,
    g_support_info=None,
    grid: Optional[Sequence[Triplet]] = None,
    engine: Optional[LatticeEngine] = None,
) -> EstimateReport:
    """Run the selection at every evaluation-cube centre and truncate.

    ``g_support_info`` is accepted for interface compatibility and ignored:
    the estimator only uses the field and the form ``A``.  A prebuilt
    ``grid`` and ``engine`` may be passed to reuse kernels across fields
    that share a lattice.
    """
    if A.dim != fld.dim:
        raise ValueError("form and field dimensions differ")
    pts, cells, delta, side = eval_cubes(fld, cfg.eval_spacing)
    if grid is None:
        grid = make_grid(A, fld.eps, cfg)
    if engine is None:
        engine = LatticeEngine(grid, fld.h, delta)
    elif not np.allclose(engine.offset, delta) or not math.isclose(engine.step, fld.h):
        raise ValueError("engine was built for a different lattice")
    plain, conv = engine.estimates(fld, cells, cfg.method)
    th = threshold(grid[0], grid[0], fld.eps, cfg.p, A.dim)
    first, count, _, _ = _select(plain, conv, engine.index, th)
    raw = np.where(first >= 0, plain[np.arange(len(first)), engine.index[np.maximum(first, 0)]], 0.0)
    T = truncation_level(fld.eps, cfg.truncation_floor)
    vals = np.clip(raw, -T, T)
    thetas = np.stack([grid[k].theta if k >= 0 else np.full(A.dim, np.nan) for k in first])
    net = sphere_net(A.dim, len(grid)) if len(grid) == cfg.net_size else None
    return EstimateReport(
        points=pts,
        values=vals,
        raw_values=raw,
        chosen_index=first,
        chosen_theta=thetas,
        accepted_count=count,
        fallback=first < 0,
        truncated=np.abs(raw) > T,
        cube_side=side,
        truncation=T,
        lam=grid[0].lam,
        threshold=th,
        covering_radius=net.covering_radius if net is not None else float("nan"),
        meta={"A": A.as_dict(), "eps": fld.eps, "seed": fld.seed, "cfg": cfg.as_dict()},
    )


# ---------------------------------------------------------------------------
# oracle probes
# ---------------------------------------------------------------------------


def oracle_orientation(g: CompositeFunction, x) -> np.ndarray:
    """``grad G(x) / |grad G(x)|`` when ``beta > 1`` and the gradient is nonzero, else ``e1``."""
    x = np.asarray(x, dtype=float)
    e1 = np.zeros(g.dim)
    e1[0] = 1.0
    if g.beta <= 1:
        return e1
    if g.grad_G is None:
        raise ValueError("composite function carries no gradient oracle")
    grad = np.asarray(g.grad_G(x[None, :]), dtype=float)[0]
    n = np.linalg.norm(grad)
    return e1 if n < 1e-12 else grad / n


def smooth_at(J: Triplet, g, x, nodes: int = 8, subdivisions: int = 8) -> float:
    """``[K_J * g](x) = int K_J(t - x) g(t) dt`` by composite Gauss quadrature.

    Each stored piece is integrated in rotated coordinates over its ``2^d``
    mirror images with ``subdivisions`` panels of ``nodes`` Gauss points per
    axis.
    """
    import itertools

    x = np.asarray(x, dtype=float)
    spec = J.weight.spec
    d = spec.dim
    M = J.weight.frame
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    total = []
    for lo, hi, height in zip(spec.lo, spec.hi, spec.heights):
        axes_pts, axes_w = [], []
        for a, b in zip(lo, hi):
            edges = np.linspace(a, b, subdivisions + 1)
            half = 0.5 * np.diff(edges)
            mids = 0.5 * (edges[:-1] + edges[1:])
            axes_pts.append((mids[:, None] + half[:, None] * gx[None, :]).ravel())
            axes_w.append((half[:, None] * gw[None, :]).ravel())
        z = np.stack(np.meshgrid(*axes_pts, indexing="ij"), axis=-1).reshape(-1, d)
        w = np.ones(1)
        for aw in axes_w:
            w = np.multiply.outer(w, aw).ravel()
        acc = 0.0
        for flips in itertools.product((1.0, -1.0), repeat=d):
            acc += np.dot(w, g(x + (z * np.array(flips)) @ M.T))
        total.append(height * acc)
    return math.fsum(total)
