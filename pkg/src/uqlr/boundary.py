"""
Exact Dirichlet data for the low-rank solver.

The Dirichlet states span a small set of conserved uncertain functions V_i
that are never evolved; the low-rank part lives in the orthogonal complement
spanned by a reduced basis P_j. After every step the boundary cells are
overwritten so the boundary values are represented exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .basis import UncertainSpace
from .burgers import BurgersProblem, SpatialGrid, lf_flux
from .dlra import FactorState, truncated_svd_init
from .linalg import qr_positive
from .runlog import NumericalFailure, RunLog, time_steps
from .sg import boundary_nodal, project_initial

log = logging.getLogger(__name__)

SKIP_TOL = 1e-10


def _gram_schmidt(candidates: np.ndarray, weights: np.ndarray, against: np.ndarray | None = None,
                  tol: float = SKIP_TOL):
    """
    Modified Gram-Schmidt with one re-orthogonalisation pass, on nodal values
    (columns) under the inner product diag(weights). Candidates whose residual
    norm falls below ``tol`` times their own norm are skipped.
    """
    basis = [] if against is None else [against[:, i] for i in range(against.shape[1])]
    n_fixed = len(basis)
    kept = []
    for i in range(candidates.shape[1]):
        v = candidates[:, i].astype(float).copy()
        norm0 = np.sqrt(np.sum(weights * v * v))
        if norm0 == 0.0:
            continue
        for _ in range(2):
            for b in basis:
                v -= np.sum(weights * b * v) * b
        norm = np.sqrt(np.sum(weights * v * v))
        if norm < tol * norm0:
            log.debug("Gram-Schmidt candidate %d skipped (residual %.2e)", i, norm / norm0)
            continue
        v /= norm
        basis.append(v)
        kept.append(i)
    out = np.array(basis[n_fixed:]).T if len(basis) > n_fixed else np.zeros((candidates.shape[0], 0))
    return out, kept


@dataclass(frozen=True)
class ConservedBasis:
    """Nodal values V (Nq, Nc), gPC coefficients and boundary coefficients E[u_b V_i]."""

    nodal: np.ndarray
    modal: np.ndarray
    left_coeffs: np.ndarray
    right_coeffs: np.ndarray

    @property
    def count(self) -> int:
        return self.nodal.shape[1]


@dataclass(frozen=True)
class ReducedBasis:
    """gPC coefficients (M, M_P) and nodal values (Nq, M_P) of the functions P_j."""

    modal: np.ndarray
    nodal: np.ndarray

    @property
    def size(self) -> int:
        return self.modal.shape[1]


def build_conserved_basis(u_left: np.ndarray, u_right: np.ndarray, space: UncertainSpace) -> ConservedBasis:
    """
    Orthonormal V_1, V_2 spanning the Dirichlet states (given at the nodes).
    A right state parallel to the left one yields a single function.
    """
    w = space.weights
    cands = np.stack([u_left, u_right], axis=1).astype(float)
    if not np.any(cands):
        raise ValueError("boundary data must not vanish identically")
    V, kept = _gram_schmidt(cands, w)
    if V.shape[1] < 2:
        log.info("Dirichlet states are linearly dependent; using %d conserved function(s)", V.shape[1])
    return ConservedBasis(
        nodal=V,
        modal=space.project(V.T).T,
        left_coeffs=V.T @ (w * u_left),
        right_coeffs=V.T @ (w * u_right),
    )


def build_reduced_basis(space: UncertainSpace, conserved: ConservedBasis) -> ReducedBasis:
    """Gram-Schmidt of the gPC functions phi_0, phi_1, ... against V and each other."""
    P, kept = _gram_schmidt(space.phi.T, space.weights, against=conserved.nodal)
    expected = space.size - conserved.count
    if P.shape[1] != expected:
        log.warning("reduced basis has %d functions instead of %d", P.shape[1], expected)
    return ReducedBasis(modal=space.project(P.T).T, nodal=P)


@dataclass(frozen=True)
class SplitState:
    """Conserved moments (Nx, Nc) plus a low-rank remainder whose W is in P-coordinates."""

    conserved: np.ndarray
    remainder: FactorState

    def nodal_values(self, cb: ConservedBasis, rb: ReducedBasis) -> np.ndarray:
        lr = self.remainder
        return self.conserved @ cb.nodal.T + lr.X @ lr.S @ (rb.nodal @ lr.W).T

    def moments(self, cb: ConservedBasis, rb: ReducedBasis) -> np.ndarray:
        lr = self.remainder
        return self.conserved @ cb.modal.T + lr.X @ lr.S @ (rb.modal @ lr.W).T


@dataclass(frozen=True)
class SplitContext:
    space: UncertainSpace
    dx: float
    conserved: ConservedBasis
    reduced: ReducedBasis
    u_left: np.ndarray
    u_right: np.ndarray
    integrator: str = "ui"

    @classmethod
    def for_problem(cls, problem: BurgersProblem, grid: SpatialGrid, space: UncertainSpace,
                    integrator: str = "ui") -> "SplitContext":
        ul, ur = boundary_nodal(problem, space)
        cb = build_conserved_basis(ul, ur, space)
        rb = build_reduced_basis(space, cb)
        return cls(space, grid.dx, cb, rb, ul, ur, integrator)


def split_init(u_hat: np.ndarray, ctx: SplitContext, rank: int) -> SplitState:
    """Split projected moments into the conserved part and a truncated remainder."""
    w = ctx.space.weights
    nodal = u_hat @ ctx.space.phi
    conserved = (nodal * w) @ ctx.conserved.nodal
    rest = nodal - conserved @ ctx.conserved.nodal.T
    coeffs = (rest * w) @ ctx.reduced.nodal
    rank = min(rank, coeffs.shape[0], coeffs.shape[1])
    return enforce_boundary(SplitState(conserved, truncated_svd_init(coeffs, rank)), ctx)


def enforce_boundary(state: SplitState, ctx: SplitContext) -> SplitState:
    """Overwrite boundary cells: conserved moments from the data, remainder K rows zero."""
    uc = state.conserved.copy()
    uc[0] = ctx.conserved.left_coeffs
    uc[-1] = ctx.conserved.right_coeffs
    lr = state.remainder
    K = lr.X @ lr.S
    K[0] = 0.0
    K[-1] = 0.0
    X, R, _ = qr_positive(K)
    return SplitState(uc, FactorState(X, R, lr.W))


def _lf_increment(U: np.ndarray, ctx: SplitContext, dt: float) -> np.ndarray:
    """LF(U) - U at the nodes with exact Dirichlet ghost cells."""
    ext = np.vstack([ctx.u_left[None, :], U, ctx.u_right[None, :]])
    flux = lf_flux(ext[:-1], ext[1:], ctx.dx, dt)
    return -(dt / ctx.dx) * (flux[1:] - flux[:-1])


def split_step(state: SplitState, ctx: SplitContext, dt: float, runlog: RunLog | None = None) -> SplitState:
    """
    Advance the conserved moments with the kinetic LF flux of the full
    reconstruction, advance the remainder with the low-rank integrator (the
    conserved part frozen at its old value), then re-impose the boundary.
    """
    w = ctx.space.weights
    V, Pn = ctx.conserved.nodal, ctx.reduced.nodal
    lr = state.remainder
    c0 = state.conserved @ V.T

    def incr(U):
        return _lf_increment(c0 + U, ctx, dt)

    X0, S0, W0 = lr.X, lr.S, lr.W
    Wn0 = Pn @ W0
    full0 = c0 + X0 @ S0 @ Wn0.T
    uc1 = state.conserved + (_lf_increment(full0, ctx, dt) * w) @ V

    deficient = False
    if ctx.integrator == "psi":
        K1 = X0 @ S0 + (incr(X0 @ S0 @ Wn0.T) * w) @ Wn0
        X1, S_hat, bad = qr_positive(K1)
        deficient |= bad
        S_tilde = S_hat - X1.T @ (incr(X1 @ S_hat @ Wn0.T) * w) @ Wn0
        L = W0 @ S_tilde.T
        L1 = L + Pn.T @ (w[:, None] * (incr(X1 @ (Pn @ L).T).T @ X1))
        W1, R, bad = qr_positive(L1)
        deficient |= bad
        S1 = R.T
    elif ctx.integrator == "ui":
        K1 = X0 @ S0 + (incr(X0 @ S0 @ Wn0.T) * w) @ Wn0
        X1, _, bad = qr_positive(K1)
        deficient |= bad
        L = W0 @ S0.T
        L1 = L + Pn.T @ (w[:, None] * (incr(X0 @ (Pn @ L).T).T @ X0))
        W1, _, bad = qr_positive(L1)
        deficient |= bad
        S = (X1.T @ X0) @ S0 @ (W1.T @ W0).T
        Wn1 = Pn @ W1
        S1 = S + X1.T @ (incr(X1 @ S @ Wn1.T) * w) @ Wn1
    else:
        raise ValueError(f"unknown integrator {ctx.integrator!r}")
    if deficient and runlog is not None:
        runlog.count("qr_warnings")
    return enforce_boundary(SplitState(uc1, FactorState(X1, S1, W1)), ctx)


@dataclass
class SplitResult:
    state: SplitState
    moments: np.ndarray
    log: RunLog
    t: float


def split_run(problem: BurgersProblem, grid: SpatialGrid, space: UncertainSpace, rank: int,
              integrator: str = "ui", cfl: float = 0.5, runlog: RunLog | None = None) -> SplitResult:
    runlog = RunLog() if runlog is None else runlog
    ctx = SplitContext.for_problem(problem, grid, space, integrator)
    state = split_init(project_initial(problem, grid, space), ctx, rank)
    dt_nominal = cfl * grid.dx / abs(problem.u_left)
    t = 0.0
    runlog.record(0, t, _mean(state, ctx), bc_error=boundary_error(state, ctx))
    for n, dt in enumerate(time_steps(problem.t_end, dt_nominal), start=1):
        state = split_step(state, ctx, dt, runlog)
        t += dt
        bad = not np.all(np.isfinite(state.remainder.S))
        runlog.record(n, t, _mean(state, ctx), bc_error=boundary_error(state, ctx), nan=bad)
        if bad:
            raise NumericalFailure(n, t)
    return SplitResult(state, state.moments(ctx.conserved, ctx.reduced), runlog, t)


def _mean(state: SplitState, ctx: SplitContext) -> np.ndarray:
    return state.nodal_values(ctx.conserved, ctx.reduced) @ ctx.space.weights


def boundary_error(state: SplitState, ctx: SplitContext):
    """Largest deviation over all nodes of the (first, last) cell values from the Dirichlet data."""
    return nodal_boundary_error(state.nodal_values(ctx.conserved, ctx.reduced), ctx.u_left, ctx.u_right)


def nodal_boundary_error(U: np.ndarray, u_left: np.ndarray, u_right: np.ndarray):
    return float(np.max(np.abs(U[0] - u_left))), float(np.max(np.abs(U[-1] - u_right)))
