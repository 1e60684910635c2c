"""Monte Carlo rate sweeps, baselines, configuration files and result emission.

A sweep runs the structured estimator (and optionally an isotropic boxcar
baseline on the same fields) over a decreasing list of noise levels, records
the sup-norm error over the evaluation lattice for every replicate, and fits
the slope of ``log R(eps)`` against ``log(eps sqrt(ln 1/eps))``.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .estimator import (
    LatticeEngine,
    SelectionConfig,
    Triplet,
    eval_cubes,
    global_estimate,
    make_grid,
    margin_cells,
    solve_lambda,
)
from .field import make_composite, synthesize
from .weights import build_weight, isotropic_boxcar
from .zones import DomainError, SmoothnessPair, noise_scale, rate_info

__all__ = [
    "SweepPlan",
    "RateSweepResult",
    "SweepError",
    "LatticeLayout",
    "lattice_layout",
    "baseline_half_width",
    "replicate_seed",
    "run_sweep",
    "compare_structures",
    "fit_slope",
    "emit",
    "load_result",
    "parse_config",
    "plan_from_config",
    "CONFIG_KEYS",
]

CSV_COLUMNS = ["eps", "noise_scale", "risk", "stderr", "baseline_risk", "baseline_stderr", "n_in", "cells"]


class SweepError(RuntimeError):
    """A replicate failed; ``partial`` holds the results gathered so far."""

    def __init__(self, message: str, partial: Optional[dict] = None):
        super().__init__(message)
        self.partial = partial


@dataclass
class SweepPlan:
    """Everything needed to reproduce a sweep.

    Attributes
    ----------
    gamma, beta, dim : smoothness form.
    preset : str
        Test-function preset passed to :func:`compest.field.make_composite`.
    preset_params : dict
    eps_list : list of float
        Strictly decreasing noise levels in ``(0, 1/e)``.
    replicates : int
    seed : int
    cfg : SelectionConfig
    cell_cap : int
        Maximum lattice cells per axis, margins included.
    cells_per_axis : list of int or None
        Explicit cells inside ``[-1, 1]`` per noise level; ``None`` picks the
        finest lattice under ``cell_cap``.
    noiseless : bool
        Drop the noise but keep nominal thresholds (diagnostic mode).
    baseline : bool
        Also run the isotropic boxcar baseline.
    """

    gamma: float
    beta: float
    dim: int = 2
    preset: str = "quad-ridge"
    preset_params: dict = field(default_factory=dict)
    eps_list: list = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])
    replicates: int = 20
    seed: int = 0
    cfg: SelectionConfig = field(default_factory=SelectionConfig)
    cell_cap: int = 512
    cells_per_axis: Optional[list] = None
    noiseless: bool = False
    baseline: bool = False

    def __post_init__(self):
        eps = list(map(float, self.eps_list))
        if any(not (0 < e < math.exp(-1)) for e in eps):
            raise DomainError("every eps must lie in (0, 1/e)")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise DomainError("eps_list must be strictly decreasing")
        if self.replicates < 1:
            raise DomainError("replicates must be positive")
        if self.cells_per_axis is not None and len(self.cells_per_axis) != len(eps):
            raise ValueError("cells_per_axis needs one entry per eps")
        self.eps_list = eps

    @property
    def A(self) -> SmoothnessPair:
        return SmoothnessPair(self.gamma, self.beta, self.dim)

    def composite(self):
        params = dict(self.preset_params)
        params.update(gamma=self.gamma, beta=self.beta, dim=self.dim)
        return make_composite(self.preset, params)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["cfg"] = self.cfg.as_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SweepPlan":
        data = dict(data)
        data["cfg"] = SelectionConfig(**data["cfg"])
        return cls(**data)


@dataclass
class RateSweepResult:
    plan: dict
    eps: list
    risk: list
    stderr: list
    errors: list
    seeds: list
    slope: float
    slope_stderr: float
    intercept: float
    residuals: list
    exponent: float
    lam: list
    layouts: list
    baseline_risk: Optional[list] = None
    baseline_stderr: Optional[list] = None
    baseline_errors: Optional[list] = None
    baseline_slope: Optional[float] = None
    baseline_slope_stderr: Optional[float] = None
    baseline_exponent: Optional[float] = None
    baseline_half_width: Optional[list] = None
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RateSweepResult":
        return cls(**data)


# ---------------------------------------------------------------------------
# lattice sizing and seeds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatticeLayout:
    n_in: int
    margin: int
    step: float

    @property
    def cells(self) -> int:
        return self.n_in + 2 * self.margin

    @property
    def a(self) -> float:
        return 1.0 + self.margin * self.step


def lattice_layout(radius_specs, cap: int, q: int = 4, n_in: Optional[int] = None) -> LatticeLayout:
    """Finest lattice ``step = 2 / n_in`` whose total width fits in ``cap`` cells.

    ``n_in`` is a multiple of ``q`` so evaluation cubes of ``q`` cells tile
    ``[-1, 1]``; the margin covers convolved supports of every spec given.
    """

    def margin(step):
        return max(margin_cells(s, step) for s in radius_specs)

    if n_in is not None:
        step = 2.0 / n_in
        return LatticeLayout(int(n_in), margin(step), step)
    best = None
    k = q
    while True:
        step = 2.0 / k
        total = k + 2 * margin(step)
        if total > cap:
            break
        best = LatticeLayout(k, margin(step), step)
        k += q
    if best is None:
        raise DomainError(f"no lattice fits within {cap} cells per axis")
    return best


def replicate_seed(seed: int, eps_index: int, replicate: int) -> int:
    """Field seed keyed by ``(plan seed, eps index, replicate index)``."""
    return int(np.random.SeedSequence([seed, eps_index, replicate]).generate_state(1, np.uint32)[0])


def baseline_half_width(A: SmoothnessPair, eps: float, C1: float = 1.0) -> float:
    """Half-width ``b`` of the isotropic boxcar with ``C1 b^alpha = eps sqrt(ln 1/eps) (2b)^(-d/2)``."""
    alpha = A.effective_smoothness
    d = A.dim
    return (noise_scale(eps) / (C1 * 2 ** (d / 2))) ** (1.0 / (alpha + d / 2))


def fit_slope(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float, np.ndarray]:
    """Least-squares line ``y = intercept + slope x``; returns ``(slope, stderr, intercept, residuals)``."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    n = len(x)
    if n > 2:
        s2 = float(resid @ resid) / (n - 2)
        cov = s2 * np.linalg.inv(X.T @ X)
        se = math.sqrt(cov[1, 1])
    else:
        se = float("nan")
    return float(coef[1]), se, float(coef[0]), resid


# ---------------------------------------------------------------------------
# sweep execution
# ---------------------------------------------------------------------------

_WORKER_CACHE: dict = {}


def _level_setup(plan: SweepPlan, i: int):
    """Triplet grid, baseline triplet and lattice for noise level ``i`` (cached per process)."""
    key = (json.dumps(plan.as_dict(), sort_keys=True, default=str), i)
    if key in _WORKER_CACHE:
        return _WORKER_CACHE[key]
    A = plan.A
    eps = plan.eps_list[i]
    cfg = plan.cfg
    lam = solve_lambda(A, eps, cfg.C1)
    spec = build_weight(A, lam)
    specs = [spec]
    base = None
    if plan.baseline:
        hb = baseline_half_width(A, eps, cfg.C1)
        base = isotropic_boxcar(A, hb)
        specs.append(base)
    q = 4
    if cfg.eval_spacing is not None:
        raise ValueError("sweeps size the evaluation cubes themselves; leave eval_spacing unset")
    n_in = plan.cells_per_axis[i] if plan.cells_per_axis is not None else None
    layout = lattice_layout(specs, plan.cell_cap, q, n_in)
    grid = make_grid(A, eps, cfg, lam)
    g = plan.composite()
    probe = synthesize(g, eps, layout.a, layout.cells, 0, dim=A.dim, noiseless=True)
    _, _, delta, _ = eval_cubes(probe, None)
    engine = LatticeEngine(grid, layout.step, delta)
    base_engine = None
    if base is not None:
        e1 = np.zeros(A.dim)
        e1[0] = 1.0
        base_engine = LatticeEngine([Triplet.build(A, e1, base.lam, base)], layout.step, delta)
    out = (grid, engine, base_engine, layout, lam, base.lam if base is not None else None)
    _WORKER_CACHE.clear()
    _WORKER_CACHE[key] = out
    return out


def _run_task(plan: SweepPlan, i: int, r: int) -> dict:
    grid, engine, base_engine, layout, lam, hb = _level_setup(plan, i)
    eps = plan.eps_list[i]
    g = plan.composite()
    seed = replicate_seed(plan.seed, i, r)
    fld = synthesize(g, eps, layout.a, layout.cells, seed, dim=plan.dim, noiseless=plan.noiseless)
    rep = global_estimate(fld, plan.A, plan.cfg, grid=grid, engine=engine)
    truth = g(rep.points)
    out = {
        "i": i,
        "r": r,
        "seed": seed,
        "error": float(np.max(np.abs(rep.values - truth))),
        "fallback": int(rep.fallback.sum()),
        "first_choice": float(np.mean(rep.chosen_index == 0)),
        "mean_accepted": float(np.mean(rep.accepted_count)),
    }
    if base_engine is not None:
        _, cells, _, _ = eval_cubes(fld, None)
        b = base_engine.plain_estimates(fld, cells)[:, 0]
        b = np.clip(b, -rep.truncation, rep.truncation)
        out["baseline_error"] = float(np.max(np.abs(b - truth)))
    return out


def _risk(errors: np.ndarray, p: float) -> tuple[float, float]:
    """``(mean e^p)^(1/p)`` and its delta-method standard error."""
    ep = errors**p
    m = float(ep.mean())
    risk = m ** (1.0 / p)
    n = len(errors)
    se_m = float(ep.std(ddof=1)) / math.sqrt(n) if n > 1 else float("nan")
    return risk, risk * se_m / (p * m) if m > 0 else float("nan")


def run_sweep(plan: SweepPlan, workers: int = 1, dump_dir: Optional[Path] = None) -> RateSweepResult:
    """Execute the sweep; results do not depend on ``workers``."""
    tasks = [(i, r) for i in range(len(plan.eps_list)) for r in range(plan.replicates)]
    records: list[dict] = []
    try:
        if workers <= 1:
            for i, r in tasks:
                records.append(_run_task(plan, i, r))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_run_task, plan, i, r) for i, r in tasks]
                for fut in futures:
                    records.append(fut.result())
    except Exception as exc:
        partial = {"plan": plan.as_dict(), "records": records}
        if dump_dir is not None:
            Path(dump_dir).mkdir(parents=True, exist_ok=True)
            (Path(dump_dir) / "partial.json").write_text(json.dumps(partial, indent=2))
        raise SweepError(f"replicate failed: {exc!r}", partial) from exc
    return _aggregate(plan, records)


def _aggregate(plan: SweepPlan, records: list[dict]) -> RateSweepResult:
    records = sorted(records, key=lambda d: (d["i"], d["r"]))
    n_eps = len(plan.eps_list)
    p = plan.cfg.p
    errors = [[d["error"] for d in records if d["i"] == i] for i in range(n_eps)]
    seeds = [[d["seed"] for d in records if d["i"] == i] for i in range(n_eps)]
    risk, se = zip(*(_risk(np.array(e), p) for e in errors))
    x = np.log([noise_scale(e) for e in plan.eps_list])
    slope, slope_se, icpt, resid = fit_slope(x, np.log(risk))
    lams, layouts, hbs = [], [], []
    for i in range(n_eps):
        _, _, _, layout, lam, hb = _level_setup(plan, i)
        lams.append(lam)
        layouts.append({"n_in": layout.n_in, "margin": layout.margin, "cells": layout.cells, "step": layout.step, "a": layout.a})
        hbs.append(hb)
    res = RateSweepResult(
        plan=plan.as_dict(),
        eps=list(plan.eps_list),
        risk=list(risk),
        stderr=list(se),
        errors=errors,
        seeds=seeds,
        slope=slope,
        slope_stderr=slope_se,
        intercept=icpt,
        residuals=resid.tolist(),
        exponent=rate_info(plan.A).exponent,
        lam=lams,
        layouts=layouts,
        diagnostics={
            "fallback_points": [sum(d["fallback"] for d in records if d["i"] == i) for i in range(n_eps)],
            "first_net_choice_fraction": [
                float(np.mean([d["first_choice"] for d in records if d["i"] == i])) for i in range(n_eps)
            ],
            "mean_accepted": [float(np.mean([d["mean_accepted"] for d in records if d["i"] == i])) for i in range(n_eps)],
        },
    )
    if plan.baseline:
        berr = [[d["baseline_error"] for d in records if d["i"] == i] for i in range(n_eps)]
        brisk, bse = zip(*(_risk(np.array(e), p) for e in berr))
        bslope, bslope_se, _, _ = fit_slope(x, np.log(brisk))
        alpha = plan.A.effective_smoothness
        res.baseline_risk = list(brisk)
        res.baseline_stderr = list(bse)
        res.baseline_errors = berr
        res.baseline_slope = bslope
        res.baseline_slope_stderr = bslope_se
        res.baseline_exponent = 2 * alpha / (2 * alpha + plan.dim)
        res.baseline_half_width = hbs
    return res


def compare_structures(plan: SweepPlan, workers: int = 1, result: Optional[RateSweepResult] = None) -> list[dict]:
    """Per-eps table of structured and baseline risks on shared fields."""
    if result is None:
        if not plan.baseline:
            plan = SweepPlan.from_dict({**plan.as_dict(), "baseline": True})
        result = run_sweep(plan, workers)
    rows = []
    for i, eps in enumerate(result.eps):
        s = np.array(result.errors[i])
        b = np.array(result.baseline_errors[i])
        rows.append(
            {
                "eps": eps,
                "risk": result.risk[i],
                "baseline_risk": result.baseline_risk[i],
                "ratio": result.risk[i] / result.baseline_risk[i],
                "median_error": float(np.median(s)),
                "median_baseline_error": float(np.median(b)),
                "median_ratio": float(np.median(s) / np.median(b)),
            }
        )
    return rows


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def emit(result: RateSweepResult, fmt: str, path) -> Path:
    """Write ``result`` as JSON, as CSV (plan and slope in ``#`` footer lines) or as a two-column rate file."""
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(result.as_dict(), indent=2))
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i, eps in enumerate(result.eps):
            br = result.baseline_risk[i] if result.baseline_risk else ""
            bs = result.baseline_stderr[i] if result.baseline_stderr else ""
            lay = result.layouts[i]
            w.writerow([repr(eps), repr(noise_scale(eps)), repr(result.risk[i]), repr(result.stderr[i]),
                        repr(br) if br != "" else "", repr(bs) if bs != "" else "", lay["n_in"], lay["cells"]])
        buf.write(f"# slope={result.slope!r} slope_stderr={result.slope_stderr!r} exponent={result.exponent!r}\n")
        if result.baseline_slope is not None:
            buf.write(f"# baseline_slope={result.baseline_slope!r} baseline_exponent={result.baseline_exponent!r}\n")
        buf.write("# plan=" + json.dumps(result.plan, sort_keys=True) + "\n")
        buf.write("# seeds=" + json.dumps(result.seeds) + "\n")
        path.write_text(buf.getvalue())
    elif fmt == "rate":
        lines = ["# log(eps*sqrt(ln(1/eps))) log(risk)"]
        lines += [f"{math.log(noise_scale(e))!r} {math.log(r)!r}" for e, r in zip(result.eps, result.risk)]
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def load_result(path) -> RateSweepResult:
    return RateSweepResult.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# configuration files
# ---------------------------------------------------------------------------

CONFIG_KEYS = {
    "preset": "test-function preset (quad-ridge, sin-ridge, power-bump)",
    "gamma": "outer smoothness",
    "beta": "inner smoothness",
    "dim": "dimension",
    "eps": "noise level (estimate) or comma-separated decreasing list (rate-sweep)",
    "seed": "base seed",
    "C1": "balance constant",
    "p": "loss power",
    "net_size": "number of orientations",
    "eval_spacing": "evaluation-cube side (estimate only)",
    "truncation_floor": "lower bound of the truncation level",
    "method": "direct or fft",
    "replicates": "replicates per noise level (rate-sweep)",
    "cell_cap": "maximum cells per axis including margins",
    "cells": "cells per axis inside [-1, 1]; one value or one per eps",
    "noiseless": "true to drop noise while keeping nominal thresholds",
    "baseline": "true to run the isotropic boxcar baseline",
    "field": "field file written by simulate (estimate; synthesized from the preset when absent)",
    "out": "output path (estimate JSON) or directory (rate-sweep)",
    "csv": "CSV output path (estimate)",
}


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines (``#`` comments allowed) into a dict of strings."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string("[run]\n" + text)
    data = dict(cp["run"])
    unknown = set(data) - set(CONFIG_KEYS) - {k for k in data if k.startswith("param.")}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return data


def _bool(s: str) -> bool:
    return s.strip().lower() in ("1", "true", "yes", "on")


def _floats(s: str) -> list[float]:
    return [float(t) for t in s.replace(",", " ").split()]


def selection_config_from(data: dict) -> SelectionConfig:
    kw = {}
    for key, conv in (("p", float), ("C1", float), ("net_size", int), ("eval_spacing", float),
                      ("truncation_floor", float), ("method", str)):
        if key in data:
            kw[key] = conv(data[key])
    return SelectionConfig(**kw)


def preset_params_from(data: dict) -> dict:
    params = {}
    for k, v in data.items():
        if k.startswith("param."):
            vals = _floats(v)
            params[k[6:]] = vals[0] if len(vals) == 1 else vals
    return params


def plan_from_config(data: dict) -> SweepPlan:
    eps = _floats(data["eps"])
    cells = [int(c) for c in _floats(data["cells"])] if "cells" in data else None
    if cells is not None and len(cells) == 1:
        cells = cells * len(eps)
    return SweepPlan(
        gamma=float(data["gamma"]),
        beta=float(data["beta"]),
        dim=int(data.get("dim", 2)),
        preset=data.get("preset", "quad-ridge"),
        preset_params=preset_params_from(data),
        eps_list=eps,
        replicates=int(data.get("replicates", 20)),
        seed=int(data.get("seed", 0)),
        cfg=selection_config_from(data),
        cell_cap=int(data.get("cell_cap", 512)),
        cells_per_axis=cells,
        noiseless=_bool(data.get("noiseless", "false")),
        baseline=_bool(data.get("baseline", "false")),
    )
