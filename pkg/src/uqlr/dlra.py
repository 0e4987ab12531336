"""
Dynamical low-rank approximation of the Burgers moment system.

The solution is kept as u = X S W^T with X (Nx, r) holding cell values of the
spatial basis and W (M, r) the gPC coefficients of the uncertain basis, both
with orthonormal columns. Each substep is a forward-Euler Lax-Friedrichs
update projected onto the relevant factor; the quadratic flux is contracted
through the three-index tensors a_ijm, W~ and L~ so that the full field is
never assembled.

Dirichlet ghost cells hold the boundary data projected onto the current
uncertain basis. Their contribution to the S- and L-steps is added as an
explicit boundary source, so that the spatial sums themselves use zero
extension.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .basis import UncertainSpace
from .burgers import BurgersProblem, SpatialGrid
from .filters import apply_filter_dlra
from .linalg import qr_positive
from .runlog import NumericalFailure, RunLog, time_steps
from .sg import boundary_nodal, project_initial

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FactorState:
    X: np.ndarray
    S: np.ndarray
    W: np.ndarray

    @property
    def rank(self) -> int:
        return self.S.shape[0]

    def reconstruct(self) -> np.ndarray:
        return reconstruct_moments(self)


@dataclass(frozen=True)
class NodalFactorState:
    """Low-rank state whose uncertain basis is stored as values at quadrature nodes."""

    X: np.ndarray
    S: np.ndarray
    W: np.ndarray

    @property
    def rank(self) -> int:
        return self.S.shape[0]

    def to_modal(self, space: UncertainSpace) -> FactorState:
        return FactorState(self.X, self.S, space.project(self.W.T).T)

    def nodal_values(self) -> np.ndarray:
        return self.X @ self.S @ self.W.T


@dataclass(frozen=True)
class DLRAContext:
    """
    Discretisation data shared by all substeps.

    ``boundary`` holds the Dirichlet data at the quadrature nodes; ``None``
    switches to zero ghost cells. ``flux_scale`` multiplies the physical flux
    and ``lf_diffusion`` toggles the dissipative part of the K-step flux; both
    exist so that transport can be switched off in tests.
    """

    space: UncertainSpace
    dx: float
    boundary: tuple[np.ndarray, np.ndarray] | None = None
    stabilize: bool = True
    lf_diffusion: bool = True
    flux_scale: float = 1.0
    ui_l_projection: str = "old"

    @classmethod
    def for_problem(cls, problem: BurgersProblem, grid: SpatialGrid, space: UncertainSpace, **kw) -> "DLRAContext":
        return cls(space=space, dx=grid.dx, boundary=boundary_nodal(problem, space), **kw)


def truncated_svd_init(u: np.ndarray, rank: int) -> FactorState:
    """Best rank-r approximation of the moment field in the Frobenius norm."""
    nx, m = u.shape
    if not 1 <= rank <= min(nx, m):
        raise ValueError(f"rank must lie in [1, {min(nx, m)}]")
    U, sig, Vt = np.linalg.svd(u, full_matrices=False)
    # fix the SVD sign ambiguity: largest entry of each right vector positive
    V = Vt[:rank].T
    flip = np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(rank)])
    flip[flip == 0] = 1.0
    return FactorState(U[:, :rank] * flip, np.diag(sig[:rank]), V * flip)


def reconstruct_moments(state: FactorState) -> np.ndarray:
    return state.X @ state.S @ state.W.T


def compute_A_tensor(W: np.ndarray, phi: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """a_ijm = sum_k w_k W_i(xi_k) W_j(xi_k) W_m(xi_k) with W(xi_k) = (Phi^T W)_ki."""
    return _a_tensor_nodal(phi.T @ W, weights)


def _a_tensor_nodal(Wn: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.einsum("k,ki,kj,km->ijm", weights, Wn, Wn, Wn, optimize=True)


def flux_jacobian(K: np.ndarray, A: np.ndarray) -> np.ndarray:
    """B_nj = sum_i K_i a_ijn, the K-step flux Jacobian at the state K."""
    return np.einsum("i,ijn->nj", K, A)


def _flux_moments(K: np.ndarray, A: np.ndarray) -> np.ndarray:
    """f_m(K_j) = 1/2 K_j^T A_m K_j for every row of K."""
    return 0.5 * np.einsum("ja,abm,jb->jm", K, A, K, optimize=True)


def _ghosts(ctx: DLRAContext, Wn: np.ndarray):
    """Ghost coefficients K_g = E[u_b W] and their nodal values W K_g."""
    r = Wn.shape[1]
    if ctx.boundary is None:
        zero = np.zeros(r)
        return (zero, zero), None
    w = ctx.space.weights
    kl = Wn.T @ (w * ctx.boundary[0])
    kr = Wn.T @ (w * ctx.boundary[1])
    return (kl, kr), (Wn @ kl, Wn @ kr)


def k_step(K: np.ndarray, A: np.ndarray, ghost_k, ctx: DLRAContext, dt: float) -> np.ndarray:
    """
    Forward-Euler finite-volume update of K = X S with the Lax-Friedrichs flux
    g_m(a, b) = (f_m(a) + f_m(b)) / 2 - dx/(2 dt) (b_m - a_m).
    """
    ext = np.vstack([ghost_k[0][None, :], K, ghost_k[1][None, :]])
    fk = ctx.flux_scale * _flux_moments(ext, A)
    g = 0.5 * (fk[:-1] + fk[1:])
    if ctx.lf_diffusion:
        g -= 0.5 * (ctx.dx / dt) * (ext[1:] - ext[:-1])
    return K - (dt / ctx.dx) * (g[1:] - g[:-1])


def x_integral_terms(X: np.ndarray, dx: float, Xp: np.ndarray | None = None) -> np.ndarray:
    """
    Centred-difference integrals <d_x(X_l X_q) X_k> for cell-value coefficients:

        Xt[l, q, k] = 1/dx * sum_j 1/2 (X[j+1,l] X[j+1,q] - X[j-1,l] X[j-1,q]) Xp[j,k]

    with zero rows beyond both ends. ``Xp`` defaults to ``X``.
    """
    Xp = X if Xp is None else Xp
    nx, r = X.shape
    prod = (X[:, :, None] * X[:, None, :]).reshape(nx, r * r)
    diff = np.zeros_like(prod)
    diff[:-1] += prod[1:]
    diff[1:] -= prod[:-1]
    return (0.5 / dx) * (diff.T @ Xp).reshape(r, r, Xp.shape[1])


def averaging_matrix(X: np.ndarray, Xp: np.ndarray | None = None) -> np.ndarray:
    """C[k, l] = 1/2 sum_j Xp[j,k] (X[j+1,l] + X[j-1,l]) with zero extension."""
    Xp = X if Xp is None else Xp
    nb = np.zeros_like(X)
    nb[:-1] += X[1:]
    nb[1:] += X[:-1]
    return 0.5 * Xp.T @ nb


def stabilizer_terms(X: np.ndarray, S: np.ndarray | None = None, L: np.ndarray | None = None):
    """
    Lax-Friedrichs averaging corrections (S_bar, L_bar):

        S_bar = C S - S,   L_bar[m, k] = sum_l C[k, l] L[m, l] - L[m, k]
    """
    C = averaging_matrix(X)
    s_bar = None if S is None else C @ S - S
    l_bar = None if L is None else L @ C.T - L
    return s_bar, l_bar


def _pair_products(Ln: np.ndarray) -> np.ndarray:
    """(Nq, r*r) array of L_l(xi_k) L_q(xi_k)."""
    nq, r = Ln.shape
    return (Ln[:, :, None] * Ln[:, None, :]).reshape(nq, r * r)


def _boundary_source(ctx: DLRAContext, ghosts_nodal, dt: float):
    """Nodal increments of the first and last cell caused by the ghost cells."""
    if ghosts_nodal is None:
        return None
    gl, gr = ghosts_nodal
    fl = ctx.flux_scale * 0.5 * gl**2
    fr = ctx.flux_scale * 0.5 * gr**2
    c = 0.5 * dt / ctx.dx
    bl = c * fl
    br = -c * fr
    if ctx.stabilize:
        bl = bl + 0.5 * gl
        br = br + 0.5 * gr
    return bl, br


def s_increment(X: np.ndarray, S: np.ndarray, Wn: np.ndarray, ctx: DLRAContext, dt: float,
                ghosts_nodal=None, Xt: np.ndarray | None = None) -> np.ndarray:
    """
    Forward increment of the coefficient matrix,

        dS = -dt/2 sum_lq Xt[l,q,k] W~[l,q,m] + S_bar + boundary source,

    with W~[l,q,m] = sum_k w_k L_l L_q W_m and L = W S^T at the nodes.
    """
    w = ctx.space.weights
    r = S.shape[0]
    Xt = x_integral_terms(X, ctx.dx) if Xt is None else Xt
    Ln = Wn @ S.T
    w_tilde = Wn.T @ (_pair_products(Ln) * w[:, None])  # (m, l*q)
    inc = -0.5 * dt * ctx.flux_scale * (Xt.reshape(r * r, r).T @ w_tilde.T)
    if ctx.stabilize:
        inc += stabilizer_terms(X, S=S)[0]
    src = _boundary_source(ctx, ghosts_nodal, dt)
    if src is not None:
        bl, br = src
        inc += np.outer(X[0], Wn.T @ (w * bl)) + np.outer(X[-1], Wn.T @ (w * br))
    return inc


def s_step(X, S, Wn, ctx: DLRAContext, dt: float, direction: str = "backward", ghosts_nodal=None):
    """S-step; ``backward`` for the projector-splitting integrator, ``forward`` for the unconventional one."""
    inc = s_increment(X, S, Wn, ctx, dt, ghosts_nodal)
    if direction == "backward":
        return S - inc
    if direction == "forward":
        return S + inc
    raise ValueError("direction must be 'forward' or 'backward'")


def l_increment(X: np.ndarray, L: np.ndarray, ctx: DLRAContext, dt: float, ghosts_nodal=None,
                Xp: np.ndarray | None = None) -> np.ndarray:
    """
    Forward increment of the modal coefficients L (M, r) of L_k = sum_i S_ki W_i,

        dL[m,k] = -dt/2 sum_lq Xt[l,q,k] L~[l,q,m] + L_bar[m,k] + boundary source,

    with L~[l,q,m] = sum_k w_k L_l L_q phi_m. The solution is evaluated with
    ``X`` and projected onto ``Xp`` (default ``X``).
    """
    space = ctx.space
    w = space.weights
    r = L.shape[1]
    Xp = X if Xp is None else Xp
    Xt = x_integral_terms(X, ctx.dx, Xp)
    Ln = space.phi.T @ L
    l_tilde = space.phi @ (_pair_products(Ln) * w[:, None])  # (M, l*q)
    inc = -0.5 * dt * ctx.flux_scale * (l_tilde @ Xt.reshape(r * r, -1))
    if ctx.stabilize:
        C = averaging_matrix(X, Xp)
        inc += L @ C.T - L @ (Xp.T @ X).T
    src = _boundary_source(ctx, ghosts_nodal, dt)
    if src is not None:
        bl, br = src
        inc += np.outer(space.project(bl), Xp[0]) + np.outer(space.project(br), Xp[-1])
    return inc


def l_step(X, L, ctx: DLRAContext, dt: float, ghosts_nodal=None, Xp=None):
    """Advance L and refactor L = W R; returns (W1, R, rank_deficient)."""
    L1 = L + l_increment(X, L, ctx, dt, ghosts_nodal, Xp)
    return qr_positive(L1)


def l_increment_nodal(X: np.ndarray, Ln: np.ndarray, ctx: DLRAContext, dt: float, ghosts_nodal=None) -> np.ndarray:
    """Pointwise L-step increment at the quadrature nodes."""
    r = Ln.shape[1]
    Xt = x_integral_terms(X, ctx.dx)
    inc = -0.5 * dt * ctx.flux_scale * (_pair_products(Ln) @ Xt.reshape(r * r, r))
    if ctx.stabilize:
        inc += stabilizer_terms(X, L=Ln)[1]
    src = _boundary_source(ctx, ghosts_nodal, dt)
    if src is not None:
        bl, br = src
        inc += np.outer(bl, X[0]) + np.outer(br, X[-1])
    return inc


def l_step_nodal(X, Ln, ctx: DLRAContext, dt: float, ghosts_nodal=None):
    """Nodal L-step followed by QR in the quadrature-weighted inner product."""
    L1 = Ln + l_increment_nodal(X, Ln, ctx, dt, ghosts_nodal)
    return qr_positive(L1, ctx.space.weights)


def _note(runlog: RunLog | None, deficient: bool, where: str) -> None:
    if deficient:
        log.debug("rank-deficient QR in %s", where)
        if runlog is not None:
            runlog.count("qr_warnings")


def psi_step(state: FactorState, ctx: DLRAContext, dt: float, filter_factors=None,
             runlog: RunLog | None = None) -> FactorState:
    """Matrix projector-splitting step: K-step, backward S-step, L-step."""
    space = ctx.space
    X0, S0, W0 = state.X, state.S, state.W
    Wn0 = space.phi.T @ W0
    ghost_k, ghosts_nodal = _ghosts(ctx, Wn0)
    A = _a_tensor_nodal(Wn0, space.weights)
    K1 = k_step(X0 @ S0, A, ghost_k, ctx, dt)
    X1, S_hat, bad = qr_positive(K1)
    _note(runlog, bad, "K-step")
    S_tilde = s_step(X1, S_hat, Wn0, ctx, dt, "backward", ghosts_nodal)
    W1, R, bad = l_step(X1, W0 @ S_tilde.T, ctx, dt, ghosts_nodal)
    _note(runlog, bad, "L-step")
    S1 = R.T
    if filter_factors is not None:
        W1, S1 = apply_filter_dlra(W1, S1, filter_factors)
    return FactorState(X1, S1, W1)


def ui_step(state: FactorState, ctx: DLRAContext, dt: float, filter_factors=None,
            runlog: RunLog | None = None) -> FactorState:
    """
    Unconventional integrator step: K- and L-steps from the same initial
    factors, basis change S <- M S N^T, then a forward S-step in the new bases.
    """
    space = ctx.space
    X0, S0, W0 = state.X, state.S, state.W
    Wn0 = space.phi.T @ W0
    ghost_k, ghosts_nodal = _ghosts(ctx, Wn0)
    A = _a_tensor_nodal(Wn0, space.weights)
    K1 = k_step(X0 @ S0, A, ghost_k, ctx, dt)
    X1, _, bad = qr_positive(K1)
    _note(runlog, bad, "K-step")
    if ctx.ui_l_projection == "old":
        Xp = X0
    elif ctx.ui_l_projection == "new":
        Xp = X1
    else:
        raise ValueError("ui_l_projection must be 'old' or 'new'")
    W1, _, bad = l_step(X0, W0 @ S0.T, ctx, dt, ghosts_nodal, Xp)
    _note(runlog, bad, "L-step")
    M = X1.T @ X0
    N = W1.T @ W0
    S = M @ S0 @ N.T
    Wn1 = space.phi.T @ W1
    _, ghosts_nodal1 = _ghosts(ctx, Wn1)
    S1 = s_step(X1, S, Wn1, ctx, dt, "forward", ghosts_nodal1)
    if filter_factors is not None:
        W1, S1 = apply_filter_dlra(W1, S1, filter_factors)
    return FactorState(X1, S1, W1)


def psi_step_nodal(state: NodalFactorState, ctx: DLRAContext, dt: float,
                   runlog: RunLog | None = None) -> NodalFactorState:
    """Projector-splitting step with the uncertain basis held at quadrature nodes."""
    w = ctx.space.weights
    X0, S0, Wn0 = state.X, state.S, state.W
    ghost_k, ghosts_nodal = _ghosts(ctx, Wn0)
    A = _a_tensor_nodal(Wn0, w)
    K1 = k_step(X0 @ S0, A, ghost_k, ctx, dt)
    X1, S_hat, bad = qr_positive(K1)
    _note(runlog, bad, "K-step")
    S_tilde = s_step(X1, S_hat, Wn0, ctx, dt, "backward", ghosts_nodal)
    Wn1, R, bad = l_step_nodal(X1, Wn0 @ S_tilde.T, ctx, dt, ghosts_nodal)
    _note(runlog, bad, "L-step")
    return NodalFactorState(X1, R.T, Wn1)


def nodal_from_modal(state: FactorState, space: UncertainSpace) -> NodalFactorState:
    """Nodal state with the same reconstruction; the nodal basis is re-orthonormalised."""
    Wn, R, _ = qr_positive(space.phi.T @ state.W, space.weights)
    return NodalFactorState(state.X, state.S @ R.T, Wn)


def ui_step_nodal(state: NodalFactorState, ctx: DLRAContext, dt: float,
                  runlog: RunLog | None = None) -> NodalFactorState:
    """Unconventional step in the nodal representation (L projected on the old spatial basis)."""
    w = ctx.space.weights
    X0, S0, Wn0 = state.X, state.S, state.W
    ghost_k, ghosts_nodal = _ghosts(ctx, Wn0)
    A = _a_tensor_nodal(Wn0, w)
    X1, _, bad = qr_positive(k_step(X0 @ S0, A, ghost_k, ctx, dt))
    _note(runlog, bad, "K-step")
    Wn1, _, bad = l_step_nodal(X0, Wn0 @ S0.T, ctx, dt, ghosts_nodal)
    _note(runlog, bad, "L-step")
    S = (X1.T @ X0) @ S0 @ (Wn1.T @ (w[:, None] * Wn0)).T
    _, ghosts_nodal1 = _ghosts(ctx, Wn1)
    S1 = s_step(X1, S, Wn1, ctx, dt, "forward", ghosts_nodal1)
    return NodalFactorState(X1, S1, Wn1)


INTEGRATORS = {"psi": psi_step, "ui": ui_step}
NODAL_INTEGRATORS = {"psi": psi_step_nodal, "ui": ui_step_nodal}


@dataclass
class DLRAResult:
    state: FactorState
    log: RunLog
    t: float
    nodal_state: NodalFactorState | None = None


def dlra_run(problem: BurgersProblem, grid: SpatialGrid, space: UncertainSpace, rank: int,
             integrator: str = "psi", cfl: float = 0.5, filter_factors=None, nodal: bool = False,
             ctx: DLRAContext | None = None, state0: FactorState | None = None,
             runlog: RunLog | None = None) -> DLRAResult:
    """Project the initial data, compress to rank ``rank`` and march to ``problem.t_end``."""
    runlog = RunLog() if runlog is None else runlog
    ctx = DLRAContext.for_problem(problem, grid, space) if ctx is None else ctx
    if state0 is None:
        state0 = truncated_svd_init(project_initial(problem, grid, space), rank)
    if nodal:
        if filter_factors is not None:
            raise ValueError("filters are not available for the nodal discretisation")
        state = nodal_from_modal(state0, space)
        step = NODAL_INTEGRATORS[integrator]
    else:
        state = state0
        step = INTEGRATORS[integrator]
    dt_nominal = cfl * grid.dx / abs(problem.u_left)
    t = 0.0
    runlog.record(0, t, _mean_field(state, space, nodal), _bc_error(state, space, nodal, ctx))
    for n, dt in enumerate(time_steps(problem.t_end, dt_nominal), start=1):
        if nodal:
            state = step(state, ctx, dt, runlog=runlog)
        else:
            state = step(state, ctx, dt, filter_factors=filter_factors, runlog=runlog)
        t += dt
        mean = _mean_field(state, space, nodal)
        bad = not (np.all(np.isfinite(state.X)) and np.all(np.isfinite(state.S)) and np.all(np.isfinite(state.W)))
        runlog.record(n, t, mean, _bc_error(state, space, nodal, ctx), nan=bad)
        if bad:
            raise NumericalFailure(n, t)
    runlog.count("steps", len(runlog.rows) - 1)
    if nodal:
        return DLRAResult(state.to_modal(space), runlog, t, nodal_state=state)
    return DLRAResult(state, runlog, t)


def _mean_field(state, space: UncertainSpace, nodal: bool) -> np.ndarray:
    if nodal:
        return state.X @ state.S @ (state.W.T @ space.weights)
    return state.X @ state.S @ state.W[0]


def _bc_error(state, space: UncertainSpace, nodal: bool, ctx: DLRAContext):
    if ctx.boundary is None:
        return np.nan, np.nan
    Wn = state.W if nodal else space.phi.T @ state.W
    K = state.X[[0, -1]] @ state.S
    ends = K @ Wn.T
    return float(np.max(np.abs(ends[0] - ctx.boundary[0]))), float(np.max(np.abs(ends[1] - ctx.boundary[1])))


def with_options(ctx: DLRAContext, **kw) -> DLRAContext:
    return replace(ctx, **kw)


def basis_on_grid(state: FactorState, space: UncertainSpace, npts: int = 41):
    """Uncertain basis functions W_i on a tensor grid; returns (points (n, p), values (n, r))."""
    axes = [np.linspace(d.a, d.b, npts) for d in space.basis.densities]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return pts, space.basis.evaluate(pts).T @ state.W
