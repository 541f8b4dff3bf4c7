"""Command line entry point: ``gelscope {bounds|cascade|grid|mlsim|scan|check}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

from . import __version__, plots
from .bounds import BoundSpec, additive_gel_bound, gel_time_bound
from .errors import GelscopeError
from .harness import checks
from .harness.config import RunConfig, load_config
from .harness.csvio import write_csv
from .harness.experiment import run_experiment
from .harness.scan import DEFAULT_ALPHAS, ScanBudget, criticality_scan
from .kernels import parse_kernel
from .spectrum import parse_spectrum

log = logging.getLogger("gelscope")

BOUNDS_COLUMNS = ("kernel", "x0", "r", "kappa", "tgel_bound", "route")


def _floats(text: str) -> list[float]:
    return [float(s) for s in text.split(",") if s.strip()]


def _ints(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def _solver_config(args, solver: str, mapping: dict) -> RunConfig:
    base = load_config(args.config) if args.config else RunConfig(solver)
    if base.solver != solver:
        raise GelscopeError(f"config is for solver {base.solver!r}, not {solver!r}")
    over = {field: getattr(args, attr) for attr, field in mapping.items() if getattr(args, attr, None) is not None}
    if args.no_plots:
        over["plots"] = False
    return dataclasses.replace(base, **over).validate()


def _report(res) -> int:
    for p in res.files:
        print(p)
    log.info("wall time %.3fs", res.wall_time)
    return 0


def cmd_cascade(args) -> int:
    mapping = {"kernel": "kernel", "nmax": "n_max", "tend": "t_end", "tol": "tol", "out": "out",
               "threshold": "threshold"}
    if args.alpha is not None:
        args.kernel = f"k0log(alpha={args.alpha!r})"
    else:
        args.kernel = None
    return _report(run_experiment(_solver_config(args, "cascade", mapping)))


def cmd_grid(args) -> int:
    mapping = {"kernel": "kernel", "nmax": "N_max", "tend": "t_end", "tol": "tol", "out": "out", "f0": "f0",
               "threshold": "threshold", "spectrum": "spectrum"}
    return _report(run_experiment(_solver_config(args, "grid", mapping)))


def cmd_mlsim(args) -> int:
    mapping = {"kernel": "kernel", "n": "n", "seeds": "seeds", "seed": "seed", "tend": "t_end", "rule": "rule",
               "out": "out", "f0": "f0"}
    return _report(run_experiment(_solver_config(args, "mlsim", mapping)))


def cmd_bounds(args) -> int:
    kernel = parse_kernel(args.kernel)
    f0 = parse_spectrum(args.f0)
    route = args.route
    if route == "auto":
        route = "additive" if kernel.family == "k1log" and kernel.p("alpha") > 1 else "theorem"
    if route == "additive":
        if kernel.family != "k1log":
            raise GelscopeError("the additive route needs a k1log kernel")
        rep = additive_gel_bound(kernel.p("alpha"), f0)
    else:
        rep = gel_time_bound(kernel, f0, BoundSpec(args.x0, args.r, args.tol))
    row = rep.as_row(kernel)
    out = Path(args.out)
    write_csv(out, BOUNDS_COLUMNS, [[row[c] for c in BOUNDS_COLUMNS]])
    print(out)
    if not args.no_plots and rep.H_profile:
        p = plots.plot_H_profile(rep.H_profile, out.with_suffix(".png"), kernel.render())
        print(p)
    return 0


SCAN_BASE = ("family", "alpha", "verdict", "predicted", "agrees", "tendency", "exponent", "gel_time_estimate",
             "bound", "bound_route", "within_bound")


def cmd_scan(args) -> int:
    fams = ["k0log", "k1log"] if args.family == "both" else [args.family]
    rows = []
    for fam in fams:
        b = ScanBudget.default(fam)
        over = {}
        if args.levels:
            over["levels"] = tuple(_ints(args.levels))
        for attr in ("tol", "threshold", "rule", "margin", "workers"):
            v = getattr(args, attr)
            if v is not None:
                over[attr] = v
        if args.tend is not None:
            over["t_end"] = args.tend
        b = dataclasses.replace(b, **over)
        rows += criticality_scan(fam, _floats(args.alphas) if args.alphas else DEFAULT_ALPHAS, b)
    k = max(len(r.levels) for r in rows)
    header = list(SCAN_BASE) + [f"level_{i + 1}" for i in range(k)] + [f"loss_time_{i + 1}" for i in range(k)] + ["reason"]
    table = []
    for r in rows:
        lv = list(r.levels) + [None] * (k - len(r.levels))
        lt = ["censored" if v is None else float(v) for v in r.loss_times] + [None] * (k - len(r.loss_times))
        table.append([r.family, r.alpha, r.verdict, r.predicted, r.agrees, r.tendency, r.exponent,
                      r.gel_time_estimate, r.bound, r.bound_route, r.within_bound, *lv, *lt, r.reason])
    out = Path(args.out)
    write_csv(out, header, table)
    print(out)
    if not args.no_plots:
        print(plots.plot_scan(rows, out.with_suffix(".png")))
    for r in rows:
        est = "-" if r.gel_time_estimate is None else f"{r.gel_time_estimate:.4g}"
        bound = "inf" if math.isinf(r.bound) else f"{r.bound:.4g}"
        log.info("%s alpha=%g: %s (predicted %s), estimate %s, bound %s", r.family, r.alpha, r.verdict,
                 r.predicted, est, bound)
    return 0 if all(r.verdict != "inconclusive" for r in rows) else 3


def cmd_check(args) -> int:
    results = checks.run_suite(full=args.full)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gelscope", description="Numerical laboratory for gelation in coagulation.")
    p.add_argument("--version", action="version", version=f"gelscope {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_config=True):
        sp.add_argument("--out", help="output CSV path")
        sp.add_argument("--no-plots", action="store_true", help="skip the PNG figure")
        if with_config:
            sp.add_argument("--config", help="key=value config file; flags override it")

    b = sub.add_parser("bounds", help="explicit gel-time bound")
    b.add_argument("--kernel", required=True)
    b.add_argument("--x0", type=float, default=0.5)
    b.add_argument("--r", type=float, default=2.0)
    b.add_argument("--f0", default="delta(1)")
    b.add_argument("--tol", type=float, default=1e-10)
    b.add_argument("--route", choices=("auto", "theorem", "additive"), default="auto")
    common(b, with_config=False)
    b.set_defaults(func=cmd_bounds, out="bounds.csv")

    c = sub.add_parser("cascade", help="dyadic cascade for the gap-log kernel from a unit Dirac")
    c.add_argument("--alpha", type=float)
    c.add_argument("--nmax", type=int)
    c.add_argument("--tend", type=float)
    c.add_argument("--tol", type=float)
    c.add_argument("--threshold", type=float)
    common(c)
    c.set_defaults(func=cmd_cascade)

    g = sub.add_parser("grid", help="integer-mass Smoluchowski solver")
    g.add_argument("--kernel")
    g.add_argument("--f0")
    g.add_argument("--nmax", type=int)
    g.add_argument("--tend", type=float)
    g.add_argument("--tol", type=float)
    g.add_argument("--threshold", type=float)
    g.add_argument("--spectrum", action="store_const", const=True, help="also dump the final spectrum")
    common(g)
    g.set_defaults(func=cmd_grid)

    m = sub.add_parser("mlsim", help="Marcus-Lushnikov particle simulation")
    m.add_argument("--kernel")
    m.add_argument("--f0")
    m.add_argument("--n", type=int)
    m.add_argument("--seeds", type=int)
    m.add_argument("--seed", type=int)
    m.add_argument("--tend", type=float)
    m.add_argument("--rule", help="n23 or frac:EPS")
    common(m)
    m.set_defaults(func=cmd_mlsim)

    s = sub.add_parser("scan", help="criticality scan over alpha")
    s.add_argument("--family", choices=("k0log", "k1log", "sqrtlog", "both"), default="both",
                   help="both = k0log and k1log; sqrtlog is run only on request")
    s.add_argument("--alphas", help="comma-separated list")
    s.add_argument("--levels", help="comma-separated refinement levels (n_max or N_max)")
    s.add_argument("--tend", type=float)
    s.add_argument("--tol", type=float)
    s.add_argument("--threshold", type=float)
    s.add_argument("--rule", choices=("exponent", "drift"))
    s.add_argument("--margin", type=float)
    s.add_argument("--workers", type=int)
    common(s, with_config=False)
    s.set_defaults(func=cmd_scan, out="scan.csv")

    k = sub.add_parser("check", help="run the invariant suite; nonzero exit on failure")
    k.add_argument("--full", action="store_true", help="include the criticality scan")
    k.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except GelscopeError as exc:
        print(f"gelscope: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"gelscope: I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
