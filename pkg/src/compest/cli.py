"""Command-line entry point ``compest``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .estimator import global_estimate, solve_lambda
from .field import load_field, make_composite, save_field, synthesize
from .harness import (
    emit,
    lattice_layout,
    parse_config,
    plan_from_config,
    preset_params_from,
    run_sweep,
    selection_config_from,
)
from .lowerbound import build_family, kl_divergence, scan_L0, separation, smoothness_certificate
from .weights import WeightSpec, build_weight, check_weight
from .zones import DomainError, SmoothnessPair, classify, phi, rate_info

__all__ = ["main", "build_parser"]


def _dump(obj, out: Optional[str]) -> None:
    text = json.dumps(obj, indent=2, default=_jsonify)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _jsonify(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _params(items: Sequence[str]) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--param expects key=value, got {item!r}")
        vals = [float(t) for t in value.replace(",", " ").split()]
        out[key.strip()] = vals[0] if len(vals) == 1 else vals
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_zones(args) -> int:
    A = SmoothnessPair(args.gamma, args.beta, args.dim)
    info = rate_info(A)
    out = {
        "gamma": A.gamma,
        "beta": A.beta,
        "dim": A.dim,
        "zone": classify(A) if A.in_estimator_square else None,
        "branch": info.branch,
        "exponent": info.exponent,
        "effective_smoothness": info.effective_smoothness,
        "rho": info.rho,
    }
    if args.eps is not None:
        out["eps"] = args.eps
        out["phi"] = phi(args.eps, A)
    _dump(out, None)
    return 0


def cmd_weight_build(args) -> int:
    spec = build_weight(SmoothnessPair(args.gamma, args.beta, args.dim), args.lam)
    _dump(spec.to_dict(), args.out)
    return 0


def cmd_weight_check(args) -> int:
    if args.spec:
        spec = WeightSpec.from_dict(json.loads(Path(args.spec).read_text()))
    else:
        if None in (args.gamma, args.beta, args.lam):
            raise SystemExit("weight check needs --spec or --gamma/--beta/--lambda")
        spec = build_weight(SmoothnessPair(args.gamma, args.beta, args.dim), args.lam)
    rows = check_weight(spec)
    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    return 0 if all(r[1] for r in rows) else 1


def cmd_simulate(args) -> int:
    params = _params(args.param)
    params.setdefault("dim", args.dim)
    g = make_composite(args.preset, params)
    fld = synthesize(g, args.eps, args.a, args.cells, args.seed, dim=args.dim, noiseless=args.noiseless,
                     meta={"composite": g.describe()})
    data, side = save_field(fld, args.out)
    print(f"wrote {data} and {side}")
    return 0


def _estimate_field(data: dict):
    if "field" in data:
        fld = load_field(data["field"])
        return fld, SmoothnessPair(float(data["gamma"]), float(data["beta"]), fld.dim), None
    dim = int(data.get("dim", 2))
    A = SmoothnessPair(float(data["gamma"]), float(data["beta"]), dim)
    eps = float(data["eps"])
    cfg = selection_config_from(data)
    params = preset_params_from(data)
    params.setdefault("gamma", A.gamma)
    params.setdefault("beta", A.beta)
    params.setdefault("dim", dim)
    g = make_composite(data.get("preset", "quad-ridge"), params)
    spec = build_weight(A, solve_lambda(A, eps, cfg.C1))
    n_in = int(data["cells"]) if "cells" in data else None
    layout = lattice_layout([spec], int(data.get("cell_cap", 512)), 4, n_in)
    fld = synthesize(g, eps, layout.a, layout.cells, int(data.get("seed", 0)), dim=dim,
                     noiseless=data.get("noiseless", "false").lower() in ("1", "true", "yes", "on"))
    return fld, A, g


def cmd_estimate(args) -> int:
    data = parse_config(Path(args.config).read_text())
    fld, A, g = _estimate_field(data)
    cfg = selection_config_from(data)
    rep = global_estimate(fld, A, cfg)
    out = rep.as_dict()
    if g is not None:
        truth = g(rep.points)
        out["sup_error"] = float(np.max(np.abs(rep.values - truth)))
    _dump(out, data.get("out", "estimate.json"))
    csv_path = data.get("csv", "estimate.csv")
    with open(csv_path, "w", newline="") as fh:
        csv.writer(fh).writerows(rep.csv_rows())
    summary = {
        "points": len(rep.values),
        "fallback": int(rep.fallback.sum()),
        "lambda": rep.lam,
        "sup_error": out.get("sup_error"),
    }
    print(json.dumps(summary))
    return 0


def cmd_lowerbound(args) -> int:
    A = SmoothnessPair(args.gamma, args.beta, args.dim)
    L0, scan = args.L0, None
    if L0 is None:
        scan = scan_L0(A, args.eps, args.regime) if args.regime == "ridge" else None
        L0 = scan["admissible_L0"] if scan and scan["admissible_L0"] else 0.25
    fam = build_family(A, args.eps, L0, args.regime)
    ks = range(1, min(fam.m, args.max_pairs) + 1)
    sep = [{"l": 0, "k": k, **separation(fam, 0, k).as_dict()} for k in ks]
    if fam.m > 1:
        sep.append({"l": 1, "k": 2, **separation(fam, 1, 2).as_dict()})
    kl = [{"k": k, **kl_divergence(fam, k).as_dict()} for k in ks]
    out = {
        "family": fam.describe(),
        "separation": sep,
        "separation_over_h_gamma": min(r["value"] for r in sep) / fam.h**A.gamma,
        "kl": kl,
        "kl_bound": float(np.log(fam.m) / 16) if fam.m > 1 else 0.0,
        "L0_scan": scan,
        "certificate": smoothness_certificate(fam) if args.regime == "ridge" else None,
    }
    _dump(out, args.out)
    return 0


def cmd_rate_sweep(args) -> int:
    data = parse_config(Path(args.config).read_text())
    plan = plan_from_config(data)
    out = Path(args.out or data.get("out", "sweep_out"))
    out.mkdir(parents=True, exist_ok=True)
    result = run_sweep(plan, workers=args.workers, dump_dir=out)
    emit(result, "json", out / "result.json")
    emit(result, "csv", out / "result.csv")
    emit(result, "rate", out / "rate.dat")
    print(json.dumps({"slope": result.slope, "slope_stderr": result.slope_stderr, "exponent": result.exponent}))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="compest", description="Sup-norm estimation of composite functions under white noise.")
    sub = p.add_subparsers(dest="command", required=True)

    z = sub.add_parser("zones", help="zone, rate branch and exponent of a smoothness pair")
    z.add_argument("--gamma", type=float, required=True)
    z.add_argument("--beta", type=float, required=True)
    z.add_argument("--dim", type=int, default=2)
    z.add_argument("--eps", type=float)
    z.set_defaults(func=cmd_zones)

    w = sub.add_parser("weight", help="build or verify a weight")
    wsub = w.add_subparsers(dest="weight_command", required=True)
    wb = wsub.add_parser("build")
    wb.add_argument("--gamma", type=float, required=True)
    wb.add_argument("--beta", type=float, required=True)
    wb.add_argument("--lambda", dest="lam", type=float, required=True)
    wb.add_argument("--dim", type=int, default=2)
    wb.add_argument("--out")
    wb.set_defaults(func=cmd_weight_build)
    wc = wsub.add_parser("check")
    wc.add_argument("--spec", help="JSON written by 'weight build'")
    wc.add_argument("--gamma", type=float)
    wc.add_argument("--beta", type=float)
    wc.add_argument("--lambda", dest="lam", type=float)
    wc.add_argument("--dim", type=int, default=2)
    wc.set_defaults(func=cmd_weight_check)

    s = sub.add_parser("simulate", help="draw an observation field")
    s.add_argument("--preset", required=True)
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--cells", type=int, required=True)
    s.add_argument("--dim", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--a", type=float, default=1.5, help="half-width of the observation cube")
    s.add_argument("--param", action="append", metavar="KEY=VALUE", help="preset parameter (repeatable)")
    s.add_argument("--noiseless", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="run the global estimator from a config file")
    e.add_argument("--config", required=True)
    e.set_defaults(func=cmd_estimate)

    lb = sub.add_parser("lowerbound", help="hypothesis family certificates")
    lb.add_argument("--gamma", type=float, required=True)
    lb.add_argument("--beta", type=float, required=True)
    lb.add_argument("--dim", type=int, default=2)
    lb.add_argument("--eps", type=float, required=True)
    lb.add_argument("--L0", type=float)
    lb.add_argument("--regime", choices=("ridge", "bump"), default="ridge")
    lb.add_argument("--max-pairs", type=int, default=8, help="number of hypotheses tabulated")
    lb.add_argument("--out")
    lb.set_defaults(func=cmd_lowerbound)

    r = sub.add_parser("rate-sweep", help="Monte Carlo rate sweep from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out")
    r.set_defaults(func=cmd_rate_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except (DomainError, ValueError) as exc:
        print(f"compest: error: {exc}", file=sys.stderr)
        return 2
