"""Experiment orchestration: build the discretisation, dispatch a solver, write artifacts."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .basis import UncertainSpace
from .boundary import split_run
from .burgers import BurgersProblem, SpatialGrid, UnsupportedCase
from .config import ConfigError, RunConfig
from .dlra import DLRAContext, FactorState, basis_on_grid, dlra_run
from .filters import FilterConfig, filter_factors
from .postprocess import (FieldPair, export_basis, export_errors, export_fields, export_matrix,
                          l2_error, moments_to_fields)
from .runlog import NumericalFailure, RunLog
from .sg import sg_run

log = logging.getLogger(__name__)

THREADS_ENV = "UQLR_THREADS"


def thread_limit() -> int | None:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(THREADS_ENV, f"expected an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(THREADS_ENV, "must be at least 1")
    return n


def _blas_limit(n: int | None = None):
    n = thread_limit() if n is None else n
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def build_problem(cfg: RunConfig) -> BurgersProblem:
    try:
        return BurgersProblem(
            x_left=cfg.x_left, x_right=cfg.x_right, x0=cfg.x0, u_left=cfg.u_left, u_right=cfg.u_right,
            sigma1=cfg.sigma1, sigma2=cfg.sigma2, t_end=cfg.t_end,
        )
    except UnsupportedCase as exc:
        raise ConfigError("u_left", str(exc)) from None


def build_discretisation(cfg: RunConfig):
    problem = build_problem(cfg)
    grid = SpatialGrid(cfg.x_left, cfg.x_right, cfg.nx)
    space = UncertainSpace.build(cfg.degree, problem.densities, nq=cfg.nq)
    return problem, grid, space


@dataclass
class Outcome:
    moments: np.ndarray
    log: RunLog
    basis_state: FactorState | None = None


def solve(cfg: RunConfig, problem, grid, space, runlog: RunLog | None = None) -> Outcome:
    """Run the configured method to ``t_end`` and return the final moment field."""
    runlog = RunLog() if runlog is None else runlog
    factors = None
    if cfg.filtered:
        factors = filter_factors(FilterConfig(cfg.lam, cfg.exponent_form), space.basis.multi_indices())
    if cfg.method in ("sg", "fsg"):
        res = sg_run(problem, grid, space, cfl=cfg.cfl, filter_factors=factors, runlog=runlog)
        return Outcome(res.moments, runlog)
    if cfg.bc_mode == "fixed-basis":
        res = split_run(problem, grid, space, cfg.rank, integrator=cfg.integrator, cfl=cfg.cfl, runlog=runlog)
        lr = res.state.remainder
        ctx_reduced = _reduced_modal(problem, grid, space, cfg)
        return Outcome(res.moments, runlog, FactorState(lr.X, lr.S, ctx_reduced @ lr.W))
    ctx = DLRAContext.for_problem(problem, grid, space, stabilize=cfg.stabilizers)
    res = dlra_run(problem, grid, space, cfg.rank, integrator=cfg.integrator, cfl=cfg.cfl,
                   filter_factors=factors, nodal=cfg.method.endswith("-nodal"), ctx=ctx, runlog=runlog)
    return Outcome(res.state.reconstruct(), runlog, res.state)


def _reduced_modal(problem, grid, space, cfg):
    from .boundary import SplitContext
    return SplitContext.for_problem(problem, grid, space, cfg.integrator).reduced.modal


def problem_hash(cfg: RunConfig) -> str:
    """Key of the reference field: end time, grid and problem parameters."""
    key = {k: cfg.to_dict()[k] for k in ("t_end", "nx", "x_left", "x_right", "x0", "u_left",
                                         "u_right", "sigma1", "sigma2")}
    return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]


def reference_fields(cfg: RunConfig, problem: BurgersProblem, grid: SpatialGrid,
                     cache_dir: str | os.PathLike | None = None) -> FieldPair:
    """Exact mean and variance at the cell centres, cached on disk when ``cache_dir`` is set."""
    path = None
    if cache_dir:
        path = Path(cache_dir) / f"reference_{problem_hash(cfg)}.npy"
        if path.exists():
            data = np.load(path)
            return FieldPair(data[0], data[1])
    mean, var = problem.reference_moments_exact(cfg.t_end, grid)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".{os.getpid()}.tmp.npy")
        np.save(tmp, np.stack([mean, var]))
        os.replace(tmp, path)
    return FieldPair(mean, var)


def run_experiment(cfg: RunConfig, out: str | os.PathLike | None = None, threads: int | None = None) -> dict:
    """
    Write fields.csv, reference.csv, runlog.csv and summary.json to the output
    directory; low-rank methods add basis.csv and the factors Xhat.csv,
    S.csv, What.csv. Returns the summary.

    A non-finite state raises NumericalFailure after the run log and a
    summary marked as failed have been written. ``threads`` caps the BLAS
    pool and defaults to UQLR_THREADS.
    """
    out = Path(cfg.out if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    problem, grid, space = build_discretisation(cfg)
    ref = reference_fields(cfg, problem, grid, cfg.cache_dir or None)
    export_fields(out / "reference.csv", grid.centers, ref)
    runlog = RunLog()
    summary = {"config": cfg.to_dict(), "status": "ok"}
    start = time.perf_counter()
    try:
        with _blas_limit(threads):
            outcome = solve(cfg, problem, grid, space, runlog)
    except NumericalFailure as exc:
        runlog.wall_time = time.perf_counter() - start
        runlog.to_csv(out / "runlog.csv")
        summary.update(status="numerical_failure", message=str(exc), wall_time=runlog.wall_time)
        _write_json(out / "summary.json", summary)
        raise
    runlog.wall_time = time.perf_counter() - start
    fields = moments_to_fields(outcome.moments)
    export_fields(out / "fields.csv", grid.centers, fields)
    runlog.to_csv(out / "runlog.csv")
    if outcome.basis_state is not None:
        pts, vals = basis_on_grid(outcome.basis_state, space, cfg.basis_points)
        export_basis(out / "basis.csv", pts, vals)
        for name, mat in (("Xhat", outcome.basis_state.X), ("S", outcome.basis_state.S), ("What", outcome.basis_state.W)):
            export_matrix(out / f"{name}.csv", mat)
    summary.update(
        err_mean=l2_error(fields.mean, ref.mean, grid.dx),
        err_var=l2_error(fields.variance, ref.variance, grid.dx),
        bc_left_max=_nanmax(runlog.column("bc_left")),
        bc_right_max=_nanmax(runlog.column("bc_right")),
        steps=len(runlog.rows) - 1,
        counters=dict(runlog.counters),
        wall_time=runlog.wall_time,
    )
    _write_json(out / "summary.json", summary)
    return summary


def _nanmax(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.nanmax(a)) if np.any(np.isfinite(a)) else float("nan")


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def parse_ranks(text: str) -> list[int]:
    """``"2..16"`` (inclusive range) or ``"2,4,9"``."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            vals = list(range(int(lo), int(hi) + 1))
        else:
            vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("ranks", f"cannot parse {text!r}") from None
    if not vals or min(vals) < 1:
        raise ConfigError("ranks", "need at least one positive rank")
    return vals


def sg_degree(moments: int) -> int:
    """Per-dimension degree of a tensor SG basis with ``moments`` functions."""
    side = math.isqrt(moments)
    if side < 1 or side * side != moments:
        raise ConfigError("sg_moments", f"{moments} is not a square number")
    return side - 1


def sweep_configs(base: RunConfig, ranks, sg_moments, methods=("dlra-psi",)) -> list[tuple[str, RunConfig]]:
    """(label, config) for every low-rank method and rank, then every SG size."""
    jobs = []
    for method in methods:
        for r in ranks:
            cfg = replace(base, method=method, rank=r).validate()
            jobs.append((f"{method}_r{r}", cfg))
    for m in sg_moments:
        cfg = replace(base, method="sg", degree=sg_degree(m), bc_mode="project").validate()
        jobs.append((f"sg_m{m}", cfg))
    return jobs


def _sweep_entry(args):
    label, cfg, out, threads = args
    try:
        s = run_experiment(cfg, out, threads)
        return s["err_mean"], s["err_var"]
    except NumericalFailure as exc:
        log.warning("sweep entry %s failed: %s", label, exc)
        return float("nan"), float("nan")


def run_sweep(base: RunConfig, ranks, sg_moments, out: str | os.PathLike, methods=("dlra-psi",)) -> Path:
    """
    Run every entry of the sweep into ``out/runs/<label>`` and collect the L2
    errors of mean and variance in ``out/errors.csv``. Failed entries give NaN
    errors. Entries run in separate processes when UQLR_THREADS > 1.
    """
    out = Path(out)
    cache = Path(base.cache_dir) if base.cache_dir else out / "cache"
    base = replace(base, cache_dir=str(cache))
    jobs = sweep_configs(base, ranks, sg_moments, methods)
    # fill the reference cache once before any worker starts
    problem, grid, _ = build_discretisation(base)
    reference_fields(base, problem, grid, cache)
    workers = thread_limit() or 1
    # parallel entries get one BLAS thread each so the total stays within the cap
    threads = 1 if workers > 1 else None
    args = [(label, cfg, out / "runs" / label, threads) for label, cfg in jobs]
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(args))) as pool:
            errors = list(pool.map(_sweep_entry, args))
    else:
        errors = [_sweep_entry(a) for a in args]
    rows = []
    for (label, cfg), (em, ev) in zip(jobs, errors):
        unknowns = cfg.rank if cfg.is_dlra else cfg.moments
        rank = cfg.rank if cfg.is_dlra else cfg.moments
        rows.append((cfg.method, unknowns, rank, float(em), float(ev)))
    return export_errors(out / "errors.csv", rows)
