"""Run one configured experiment and write its artifacts."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import mlsim, plots
from ..bounds import cascade_bound_sequence
from ..cascade import integrate_cascade
from ..errors import GelscopeError
from ..grid import integrate_grid, loss_time_from_moments
from ..kernels import parse_kernel
from ..spectrum import MOMENT_COLUMNS, parse_spectrum
from .config import RunConfig
from .csvio import write_atomic, write_csv

CASCADE_COLUMNS = ("t", "n", "c_n", "M1", "xlogx_moment", "overflow_cum")
MLSIM_COLUMNS = ("run_index", "seed", "gel_time", "largest_cluster_final", "n_events")
SUMMARY_COLUMNS = ("config_hash", "solver", "kernel", "f0", "seed", "t_reached", "M1_final",
                   "lost_mass_final", "gel_time", "n_runs")


class ExperimentError(GelscopeError):
    """A solver failure, reported together with the config that caused it."""


@dataclass
class RunResult:
    config: RunConfig
    files: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    wall_time: float = 0.0
    payload: object = None


def _paths(cfg: RunConfig):
    out = Path(cfg.out)
    stem = out.with_suffix("")
    return out, Path(f"{stem}.summary.csv"), Path(f"{stem}.png"), Path(f"{stem}.timing.json")


def run_experiment(cfg: RunConfig) -> RunResult:
    """Dispatch to the configured solver and write CSV (plus figure) atomically.

    The main CSV and the summary CSV depend only on the config, so a rerun
    gives byte-identical files.  Wall time goes to a JSON sidecar.
    """
    cfg = cfg.with_env().validate()
    out, summary_path, fig_path, timing_path = _paths(cfg)
    t0 = time.perf_counter()
    try:
        runner = {"cascade": _run_cascade, "grid": _run_grid, "mlsim": _run_mlsim}[cfg.solver]
        header, rows, summary, payload, figure = runner(cfg)
    except GelscopeError as exc:
        raise ExperimentError(f"{type(exc).__name__}: {exc}\n--- config ---\n{cfg.render()}") from exc
    wall = time.perf_counter() - t0
    files = [write_csv(out, header, rows)]
    summary = {"config_hash": cfg.digest(), "solver": cfg.solver, "kernel": cfg.kernel, "f0": cfg.f0,
               "seed": cfg.seed, **summary}
    files.append(write_csv(summary_path, SUMMARY_COLUMNS, [[summary.get(c) for c in SUMMARY_COLUMNS]]))
    if cfg.plots:
        files.append(figure(fig_path))
    files.append(write_atomic(timing_path, json.dumps({"config_hash": cfg.digest(), "wall_time_s": wall}) + "\n"))
    return RunResult(cfg, files, summary, wall, payload)


def _run_cascade(cfg: RunConfig):
    alpha = cfg.alpha
    run = integrate_cascade(alpha, cfg.t_end, cfg.n_max, cfg.tol)
    traj = run.trajectory
    M1 = run.M1
    xl = traj.column("xlogx_moment")
    lost = run.overflow
    rows = []
    for i, t in enumerate(traj.times):
        for n in range(cfg.n_max + 1):
            rows.append((float(t), n, float(traj.conc[i, n]), float(M1[i]), float(xl[i]), float(lost[i])))
    lt = loss_time_from_moments(traj.moments, cfg.threshold)
    summary = {"t_reached": float(traj.times[-1]), "M1_final": float(M1[-1]),
               "lost_mass_final": float(lost[-1]), "gel_time": "none" if lt is None else lt, "n_runs": 1}
    bn = cascade_bound_sequence(alpha, cfg.n_max).bn if alpha <= 2 else None
    return CASCADE_COLUMNS, rows, summary, run, lambda p: plots.plot_cascade(run, bn, p)


def _run_grid(cfg: RunConfig):
    kernel = parse_kernel(cfg.kernel)
    f0 = parse_spectrum(cfg.f0)
    run = integrate_grid(kernel, f0, cfg.N_max, cfg.t_end, cfg.tol, snapshots="ends")
    mom = run.moments
    rows = [tuple(float(v) for v in r) for r in mom]
    lt = loss_time_from_moments(mom, cfg.threshold)
    summary = {"t_reached": float(mom[-1, 0]), "M1_final": float(mom[-1, 2]),
               "lost_mass_final": float(mom[-1, 5]), "gel_time": "none" if lt is None else lt, "n_runs": 1}
    if cfg.spectrum:
        stem = Path(cfg.out).with_suffix("")
        fin = run.trajectory.final
        write_csv(f"{stem}.spectrum.csv", ("mass", "concentration"),
                  [(float(m), float(fin[m])) for m in fin.support()])
    return MOMENT_COLUMNS, rows, summary, run, lambda p: plots.plot_moments(run.trajectory, p, kernel.render())


def _run_mlsim(cfg: RunConfig):
    kernel = parse_kernel(cfg.kernel)
    f0 = parse_spectrum(cfg.f0)
    rule = mlsim.parse_rule(cfg.rule)
    runs = mlsim.replicate(kernel, cfg.n, f0, cfg.seed, cfg.seeds, cfg.t_end)
    thr = rule.threshold(cfg.n)
    rows = []
    for i, r in enumerate(runs):
        g = r.first_passage(thr)
        rows.append((i, r.seed, "censored" if g is None else g, r.largest_final, r.n_events))
    est = mlsim.gel_time_estimate(runs, rule)
    last = runs[-1]
    m1 = sum(m * c for m, c in last.final.items()) / cfg.n
    summary = {"t_reached": float(last.t_final), "M1_final": float(m1), "lost_mass_final": 0.0,
               "gel_time": "censored" if est.median is None else est.median, "n_runs": len(runs)}
    return MLSIM_COLUMNS, rows, summary, runs, lambda p: plots.plot_largest(runs, thr, p)
