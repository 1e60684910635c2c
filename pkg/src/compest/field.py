"""Composite test functions and discretized white-noise observations.

The observation model is ``dX = g(t) dt + eps dW(t)`` on ``[-a, a]^d``.  On a
regular lattice of cubes with side ``h`` and volume ``v = h^d`` the cell
increments are ``X_i = g(t_i) v + eps sqrt(v) xi_i`` with ``t_i`` the cell
centres (midpoint rule for the drift) and ``xi_i`` iid standard normal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .zones import DomainError

__all__ = [
    "CompositeFunction",
    "ObservationField",
    "HolderReport",
    "bump",
    "bump_prime",
    "plateau_bump",
    "plateau_bump_prime",
    "BUMP_SUP_D1",
    "BUMP_SUP_D2",
    "make_composite",
    "holder_check",
    "synthesize",
    "save_field",
    "load_field",
    "eps_from_sample_size",
    "PRESETS",
    "DEFAULT_MAX_CELLS",
]

PRESETS = ("quad-ridge", "sin-ridge", "power-bump", "custom")
DEFAULT_MAX_CELLS = 1 << 24
# Declared Hoelder constants of the presets carry 1% headroom over the sharp
# value so floating-point round-off cannot flip a sampled check.
_HEADROOM = 1.01

# ---------------------------------------------------------------------------
# the smooth bump f0 and its plateau variant
# ---------------------------------------------------------------------------


def bump(u) -> np.ndarray:
    """``exp(1 - 1/(1 - 4u^2))`` on ``|u| < 1/2``, zero elsewhere; ``bump(0) = 1``."""
    u = np.asarray(u, dtype=float)
    s = 1.0 - 4.0 * u * u
    out = np.zeros_like(u)
    inside = s > 0
    out[inside] = np.exp(1.0 - 1.0 / s[inside])
    return out


def bump_prime(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    s = 1.0 - 4.0 * u * u
    out = np.zeros_like(u)
    inside = s > 0
    ui, si = u[inside], s[inside]
    out[inside] = np.exp(1.0 - 1.0 / si) * (-8.0 * ui / si**2)
    return out


def _bump_second(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    s = 1.0 - 4.0 * u * u
    out = np.zeros_like(u)
    inside = s > 0
    ui, si = u[inside], s[inside]
    out[inside] = np.exp(1.0 - 1.0 / si) * (
        64.0 * ui**2 / si**4 - 8.0 / si**2 - 128.0 * ui**2 / si**3
    )
    return out


def _sup_abs(fn, n: int = 400_001) -> float:
    grid = np.linspace(-0.5, 0.5, n)
    return float(np.max(np.abs(fn(grid))))


BUMP_SUP_D1 = _sup_abs(bump_prime)
BUMP_SUP_D2 = _sup_abs(_bump_second)


def _psi(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def _psi_prime(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos]) / x[pos] ** 2
    return out


def plateau_bump(u) -> np.ndarray:
    """Smooth even bump equal to 1 on ``[-1/4, 1/4]`` and 0 outside ``(-1/2, 1/2)``."""
    x = (0.5 - np.abs(np.asarray(u, dtype=float))) / 0.25
    a, b = _psi(x), _psi(1.0 - x)
    return a / (a + b)


def plateau_bump_prime(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    x = (0.5 - np.abs(u)) / 0.25
    a, b = _psi(x), _psi(1.0 - x)
    da, db = _psi_prime(x), -_psi_prime(1.0 - x)
    dS_dx = (da * (a + b) - a * (da + db)) / (a + b) ** 2
    return dS_dx * (-np.sign(u) / 0.25)


PLATEAU_SUP_D1 = _sup_abs(plateau_bump_prime)

# ---------------------------------------------------------------------------
# composite functions
# ---------------------------------------------------------------------------

Fn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class CompositeFunction:
    """``g = f o G`` with declared Hoelder tags.

    ``f`` maps ``(n,)`` to ``(n,)``; ``G`` maps ``(n, d)`` to ``(n,)`` and
    ``grad_G`` maps ``(n, d)`` to ``(n, d)``.
    """

    f: Fn
    G: Fn
    gamma: float
    beta: float
    L1: float
    L2: float
    dim: int
    grad_G: Optional[Fn] = None
    f_prime: Optional[Fn] = None
    preset: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_2d(np.asarray(t, dtype=float))
        return np.asarray(self.f(self.G(t)), dtype=float)

    def describe(self) -> dict:
        return {
            "preset": self.preset,
            "gamma": self.gamma,
            "beta": self.beta,
            "L1": self.L1,
            "L2": self.L2,
            "dim": self.dim,
            "params": {k: v for k, v in self.params.items() if _jsonable(v)},
        }


def _jsonable(v) -> bool:
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False


def _unit(theta, dim: int) -> np.ndarray:
    if theta is None:
        out = np.zeros(dim)
        out[0] = 1.0
        return out
    if np.isscalar(theta):
        if dim != 2:
            raise ValueError("a scalar orientation angle is only meaningful for dim = 2")
        return np.array([math.cos(theta), math.sin(theta)])
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (dim,):
        raise ValueError(f"orientation must have shape ({dim},)")
    n = np.linalg.norm(theta)
    if n == 0:
        raise DomainError("orientation must be nonzero")
    return theta / n


def _power_outer(gamma: float, L1: float):
    """``L1 |u|^gamma`` together with its Hoelder constant for exponent ``gamma``."""

    def f(u):
        return L1 * np.abs(u) ** gamma

    def fp(u):
        u = np.asarray(u, dtype=float)
        return L1 * gamma * np.sign(u) * np.abs(u) ** (gamma - 1.0)

    const = L1 if gamma <= 1 else L1 * 2.0 ** (2.0 - gamma)
    return f, (fp if gamma > 1 else None), const * _HEADROOM


def _interp_const(c_small: float, c_large: float, order: float) -> float:
    """Constant of ``min(c_small x^k, c_large x^(k-1)) <= C x^order``.

    With ``k = 2`` for ``order`` in (1, 2] and ``k = 1`` for ``order`` in (0, 1]
    (where ``c_large`` multiplies ``x^0``).
    """
    if order > 1:
        return c_small ** (order - 1) * c_large ** (2 - order)
    return c_small**order * c_large ** (1 - order)


def make_composite(preset: str, params: Optional[dict] = None) -> CompositeFunction:
    """Build a preset composite function.

    Presets
    -------
    quad-ridge
        ``G(t) = c0 + theta.t + kappa |t_perp|^2`` and ``f(u) = L1 |u|^gamma``.
        Parameters: ``gamma`` (1), ``beta`` (2), ``dim`` (2), ``theta`` (angle
        or vector, default ``e1``), ``c0`` (0), ``kappa`` (0.25), ``L1`` (0.5),
        ``a`` (domain half-width used for the declared constants, 1.5).
    sin-ridge
        ``G(t) = L0 sin(s theta.t)`` and ``f(u) = Lf h^gamma f0(u/h)``.
        Parameters: ``gamma``, ``beta``, ``dim``, ``theta``, ``L0`` (0.5),
        ``s`` (1), ``h`` (0.25), ``Lf`` (defaults to ``L0``).
    power-bump
        ``g(t) = |L0 h^beta phi0((t - center)/h)|^gamma`` with the plateau
        bump ``phi0 = prod f0``.  Parameters: ``gamma``, ``beta`` (both in
        (0, 1]), ``dim``, ``L0`` (0.5), ``h`` (0.25), ``center`` (origin).
    custom
        ``f``, ``G``, ``gamma``, ``beta``, ``L1``, ``L2``, ``dim`` and
        optionally ``grad_G`` and ``f_prime``.
    """
    p = dict(params or {})
    if preset == "custom":
        missing = [k for k in ("f", "G", "gamma", "beta", "L1", "L2", "dim") if k not in p]
        if missing:
            raise ValueError(f"custom composite is missing parameters: {missing}")
        return CompositeFunction(
            f=p["f"],
            G=p["G"],
            gamma=float(p["gamma"]),
            beta=float(p["beta"]),
            L1=float(p["L1"]),
            L2=float(p["L2"]),
            dim=int(p["dim"]),
            grad_G=p.get("grad_G"),
            f_prime=p.get("f_prime"),
            preset="custom",
            params={k: v for k, v in p.items() if k not in ("f", "G", "grad_G", "f_prime")},
        )

    dim = int(p.setdefault("dim", 2))
    gamma = float(p.setdefault("gamma", 1.0))
    beta = float(p.setdefault("beta", 2.0))
    if not (gamma > 0 and beta > 0):
        raise DomainError("gamma and beta must be positive")

    if preset == "quad-ridge":
        theta = _unit(p.get("theta"), dim)
        c0 = float(p.setdefault("c0", 0.0))
        kappa = float(p.setdefault("kappa", 0.25))
        L1 = float(p.setdefault("L1", 0.5))
        a = float(p.setdefault("a", 1.5))
        p["theta"] = theta.tolist()
        P = np.eye(dim) - np.outer(theta, theta)

        def G(t):
            t = np.atleast_2d(t)
            tp = t @ P
            return c0 + t @ theta + kappa * np.einsum("ij,ij->i", tp, tp)

        def grad_G(t):
            t = np.atleast_2d(t)
            return theta[None, :] + 2.0 * kappa * (t @ P)

        diam = 2.0 * a * math.sqrt(dim)
        if beta > 1:
            L2 = max(kappa, 1e-300) * diam ** (2.0 - beta) * _HEADROOM
        else:
            L2 = (1.0 + 2.0 * kappa * a * math.sqrt(dim)) * diam ** (1.0 - beta) * _HEADROOM
        f, fp, Lf = _power_outer(gamma, L1)
        return CompositeFunction(f, G, gamma, beta, Lf, L2, dim, grad_G, fp, preset, p)

    if preset == "sin-ridge":
        theta = _unit(p.get("theta"), dim)
        L0 = float(p.setdefault("L0", 0.5))
        s = float(p.setdefault("s", 1.0))
        h = float(p.setdefault("h", 0.25))
        Lf = float(p.setdefault("Lf", L0))
        p["theta"] = theta.tolist()

        def G(t):
            return L0 * np.sin(s * (np.atleast_2d(t) @ theta))

        def grad_G(t):
            c = L0 * s * np.cos(s * (np.atleast_2d(t) @ theta))
            return c[:, None] * theta[None, :]

        def f(u):
            return Lf * h**gamma * bump(np.asarray(u) / h)

        def fp(u):
            return Lf * h ** (gamma - 1) * bump_prime(np.asarray(u) / h)

        if gamma > 1:
            L1 = Lf * _interp_const(BUMP_SUP_D2 / 2, 2 * BUMP_SUP_D1, gamma) * _HEADROOM
        else:
            L1 = Lf * _interp_const(BUMP_SUP_D1, 2.0, gamma) * _HEADROOM
        if beta > 1:
            L2 = _interp_const(L0 * s * s / 2, 2 * L0 * s, beta) * _HEADROOM
        else:
            L2 = _interp_const(L0 * s, 2 * L0, beta) * _HEADROOM
        return CompositeFunction(f, G, gamma, beta, L1, L2, dim, grad_G, fp, preset, p)

    if preset == "power-bump":
        if gamma > 1 or beta > 1:
            raise DomainError("power-bump needs gamma, beta in (0, 1]")
        L0 = float(p.setdefault("L0", 0.5))
        h = float(p.setdefault("h", 0.25))
        center = np.asarray(p.get("center", np.zeros(dim)), dtype=float)
        p["center"] = center.tolist()

        def G(t):
            z = (np.atleast_2d(t) - center) / h
            return L0 * h**beta * np.prod(plateau_bump(z), axis=1)

        def grad_G(t):
            z = (np.atleast_2d(t) - center) / h
            vals = plateau_bump(z)
            ders = plateau_bump_prime(z)
            out = np.empty_like(z)
            for j in range(dim):
                others = np.prod(np.delete(vals, j, axis=1), axis=1)
                out[:, j] = ders[:, j] * others
            return L0 * h ** (beta - 1) * out

        def f(u):
            return np.abs(u) ** gamma

        grad_sup = PLATEAU_SUP_D1 * math.sqrt(dim)
        L2 = _interp_const(L0 * grad_sup, 2 * L0, beta) * _HEADROOM
        return CompositeFunction(f, G, gamma, beta, _HEADROOM, L2, dim, grad_G, None, preset, p)

    raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")


# ---------------------------------------------------------------------------
# Hoelder check
# ---------------------------------------------------------------------------


@dataclass
class HolderReport:
    max_ratio: float
    passed: bool
    worst_x: list
    worst_y: list
    samples: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def holder_check(
    h: Fn,
    order: float,
    L: float,
    dim: int,
    samples: int = 10_000,
    seed: int = 0,
    grad: Optional[Fn] = None,
    a: float = 1.5,
) -> HolderReport:
    """Sample the Hoelder ratio ``|h(y) - T_x h(y)| / (L |y - x|^order)``.

    ``T_x`` is the Taylor polynomial of degree 0 (``order <= 1``) or 1
    (``order`` in (1, 2], needing ``grad``).  Pairs are drawn with ``x``
    uniform in ``[-a, a]^d`` and ``y = x + r w`` for a random direction ``w``
    and log-uniform ``r`` in ``[1e-3, 2a]``, clipped to the cube; symmetric
    pairs ``(delta e, -delta e)`` are added to probe the origin.

    ``h`` and ``grad`` take arrays of shape ``(n, dim)``.
    """
    if not (0 < order <= 2):
        raise DomainError(f"order must lie in (0, 2], got {order}")
    if order > 1 and grad is None:
        raise ValueError("a gradient oracle is required when order > 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-a, a, size=(samples, dim))
    w = rng.standard_normal((samples, dim))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    r = np.exp(rng.uniform(math.log(1e-3), math.log(2 * a), size=samples))
    y = np.clip(x + r[:, None] * w, -a, a)

    deltas = np.logspace(-6, 0, 25) * a
    e = np.ones(dim) / math.sqrt(dim)
    x = np.vstack([x, deltas[:, None] * e])
    y = np.vstack([y, -deltas[:, None] * e])

    dist = np.linalg.norm(y - x, axis=1)
    keep = dist > 0
    x, y, dist = x[keep], y[keep], dist[keep]
    rem = np.asarray(h(y), float) - np.asarray(h(x), float)
    if order > 1:
        rem = rem - np.einsum("ij,ij->i", np.asarray(grad(x), float), y - x)
    ratio = np.abs(rem) / (L * dist**order) if L > 0 else np.where(np.abs(rem) > 0, np.inf, 0.0)
    k = int(np.argmax(ratio))
    mr = float(ratio[k])
    return HolderReport(mr, mr <= 1.0, x[k].tolist(), y[k].tolist(), int(len(ratio)))


# ---------------------------------------------------------------------------
# observation fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ObservationField:
    """Cell increments of the white-noise model on a regular lattice.

    ``data`` has shape ``(m,) * d`` in C order; cell ``i`` has centre
    ``-a + (i + 1/2) h`` along each axis.
    """

    a: float
    cells_per_axis: int
    dim: int
    eps: float
    seed: int
    data: np.ndarray
    noiseless: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def h(self) -> float:
        return 2.0 * self.a / self.cells_per_axis

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def axis_centers(self) -> np.ndarray:
        return -self.a + (np.arange(self.cells_per_axis) + 0.5) * self.h

    def sidecar(self) -> dict:
        return {
            "a": self.a,
            "cells_per_axis": self.cells_per_axis,
            "dim": self.dim,
            "eps": self.eps,
            "seed": self.seed,
            "noiseless": self.noiseless,
            "dtype": "float64",
            "order": "C",
            "shape": list(self.data.shape),
            "meta": self.meta,
        }


def synthesize(
    g: Callable[[np.ndarray], np.ndarray],
    eps: float,
    a: float,
    cells_per_axis: int,
    seed: int,
    dim: Optional[int] = None,
    noiseless: bool = False,
    max_cells: int = DEFAULT_MAX_CELLS,
    meta: Optional[dict] = None,
) -> ObservationField:
    """Draw one observation field.

    Noise for the slab of cells with first index ``i`` comes from
    ``numpy.random.default_rng([seed, i])``, so every slab is reproducible on
    its own and the result does not depend on evaluation order.

    Parameters
    ----------
    g : callable
        Maps ``(n, d)`` points to ``(n,)`` values; a :class:`CompositeFunction`
        works directly.
    noiseless : bool
        Drop the noise term while keeping ``eps`` as the nominal level.
    """
    if not (0 < eps < 1):
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    if not a > 1:
        raise DomainError(f"domain half-width must exceed 1, got {a}")
    if cells_per_axis < 8:
        raise DomainError(f"need at least 8 cells per axis, got {cells_per_axis}")
    if dim is None:
        dim = getattr(g, "dim", None)
        if dim is None:
            raise ValueError("dim is required when g carries no dimension")
    m = int(cells_per_axis)
    if m**dim > max_cells:
        raise MemoryError(f"{m}^{dim} cells exceed the configured cap of {max_cells}")
    hstep = 2.0 * a / m
    v = hstep**dim
    axis = -a + (np.arange(m) + 0.5) * hstep
    data = np.empty((m,) * dim)
    rest = np.stack(np.meshgrid(*([axis] * (dim - 1)), indexing="ij"), axis=-1).reshape(-1, dim - 1)
    sd = eps * math.sqrt(v)
    for i in range(m):
        pts = np.column_stack([np.full(len(rest), axis[i]), rest])
        slab = np.asarray(g(pts), dtype=float) * v
        if not noiseless:
            slab = slab + sd * np.random.default_rng([int(seed), i]).standard_normal(len(rest))
        data[i] = slab.reshape((m,) * (dim - 1))
    return ObservationField(float(a), m, int(dim), float(eps), int(seed), data, bool(noiseless), dict(meta or {}))


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_field(fld: ObservationField, path) -> tuple[Path, Path]:
    """Write ``path`` (raw little-endian float64, C order) and ``path.json``."""
    path = Path(path)
    np.ascontiguousarray(fld.data, dtype="<f8").tofile(path)
    side = _sidecar_path(path)
    side.write_text(json.dumps(fld.sidecar(), indent=2))
    return path, side


def load_field(path) -> ObservationField:
    path = Path(path)
    meta = json.loads(_sidecar_path(path).read_text())
    data = np.fromfile(path, dtype="<f8").reshape(meta["shape"])
    return ObservationField(
        a=meta["a"],
        cells_per_axis=meta["cells_per_axis"],
        dim=meta["dim"],
        eps=meta["eps"],
        seed=meta["seed"],
        data=data.astype(float),
        noiseless=meta.get("noiseless", False),
        meta=meta.get("meta", {}),
    )


def eps_from_sample_size(n: int, sigma: float = 1.0) -> float:
    """Noise level matching a regression sample of size ``n`` with noise ``sigma``."""
    if n <= 0:
        raise DomainError("sample size must be positive")
    return sigma / math.sqrt(n)
