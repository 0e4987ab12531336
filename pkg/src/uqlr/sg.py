"""
Stochastic-Galerkin moment system for Burgers' equation, advanced with a
kinetic Lax-Friedrichs finite-volume scheme and forward Euler.

Moment fields are arrays of shape (Nx, M): row j holds the gPC coefficients
of the cell value in cell j.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .basis import UncertainSpace
from .burgers import BurgersProblem, SpatialGrid, lf_flux, physical_flux
from .filters import apply_filter_sg
from .runlog import NumericalFailure, RunLog, time_steps

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GhostPair:
    """Basis projections of the Dirichlet data, held fixed in time."""

    left: np.ndarray
    right: np.ndarray


def boundary_nodal(problem: BurgersProblem, space: UncertainSpace):
    """Dirichlet data at the quadrature nodes."""
    nodes = space.quad.nodes
    return problem.left_state(nodes), problem.right_state(nodes)


def ghost_pair(problem: BurgersProblem, space: UncertainSpace) -> GhostPair:
    left, right = boundary_nodal(problem, space)
    return GhostPair(space.project(left), space.project(right))


def project_initial(problem: BurgersProblem, grid: SpatialGrid, space: UncertainSpace) -> np.ndarray:
    """u_hat[j, m] = sum_k w_k u_IC(x_j, xi_k) phi_m(xi_k), sampled at cell centres."""
    values = problem.initial_condition(grid.centers, space.quad.nodes)
    return space.project(values)


def kinetic_flux(u_left: np.ndarray, u_right: np.ndarray, phi: np.ndarray, weights: np.ndarray, dx: float, dt: float):
    """
    Moment-space flux sum_k w_k f*(u_L(xi_k), u_R(xi_k)) phi(xi_k).

    Accepts single moment vectors or stacks of them (rows).
    """
    ul = u_left @ phi
    ur = u_right @ phi
    return (lf_flux(ul, ur, dx, dt) * weights) @ phi.T


def sg_step(u: np.ndarray, ghosts: GhostPair | None, space: UncertainSpace, dx: float, dt: float,
            periodic: bool = False) -> np.ndarray:
    """One forward-Euler finite-volume update of the moment field."""
    if periodic:
        ext = np.vstack([u[-1:], u, u[:1]])
    else:
        ext = np.vstack([ghosts.left[None, :], u, ghosts.right[None, :]])
    nodal = ext @ space.phi
    flux_nodal = lf_flux(nodal[:-1], nodal[1:], dx, dt)
    flux = (flux_nodal * space.weights) @ space.phi.T
    return u - (dt / dx) * (flux[1:] - flux[:-1])


def max_speed(u: np.ndarray, space: UncertainSpace) -> float:
    return float(np.max(np.abs(u @ space.phi)))


@dataclass
class SGResult:
    moments: np.ndarray
    log: RunLog
    t: float


def sg_run(problem: BurgersProblem, grid: SpatialGrid, space: UncertainSpace, cfl: float = 0.5,
           filter_factors: np.ndarray | None = None, u0: np.ndarray | None = None,
           runlog: RunLog | None = None) -> SGResult:
    """
    March to ``problem.t_end`` with dt = cfl * dx / u_L, shortening the last step.

    When ``filter_factors`` is given the field is filtered before every flux
    evaluation.
    """
    runlog = RunLog() if runlog is None else runlog
    u = project_initial(problem, grid, space) if u0 is None else u0.copy()
    ghosts = ghost_pair(problem, space)
    bl, br = boundary_nodal(problem, space)
    dt_nominal = cfl * grid.dx / abs(problem.u_left)
    t = 0.0
    runlog.record(0, t, u[:, 0], _bc_error(u, space, bl, br))
    for n, dt in enumerate(time_steps(problem.t_end, dt_nominal), start=1):
        if dt > grid.dx / max(max_speed(u, space), 1e-300):
            runlog.count("cfl_warnings")
            log.warning("CFL condition violated at step %d", n)
        if filter_factors is not None:
            u = apply_filter_sg(u, filter_factors)
        u = sg_step(u, ghosts, space, grid.dx, dt)
        t += dt
        bad = not np.all(np.isfinite(u))
        runlog.record(n, t, u[:, 0], _bc_error(u, space, bl, br), nan=bad)
        if bad:
            raise NumericalFailure(n, t)
    return SGResult(u, runlog, t)


def _bc_error(u, space, bl, br):
    first = u[0] @ space.phi
    last = u[-1] @ space.phi
    return float(np.max(np.abs(first - bl))), float(np.max(np.abs(last - br)))


def scalar_lf_run(u0: np.ndarray, u_left: float, u_right: float, dx: float, steps) -> np.ndarray:
    """Plain Lax-Friedrichs finite-volume solver for deterministic Burgers data."""
    u = np.asarray(u0, dtype=float).copy()
    for dt in steps:
        ext = np.concatenate([[u_left], u, [u_right]])
        flux = lf_flux(ext[:-1], ext[1:], dx, dt)
        u = u - (dt / dx) * (flux[1:] - flux[:-1])
    return u


__all__ = [
    "GhostPair", "SGResult", "boundary_nodal", "ghost_pair", "kinetic_flux", "max_speed",
    "physical_flux", "project_initial", "scalar_lf_run", "sg_run", "sg_step",
]
