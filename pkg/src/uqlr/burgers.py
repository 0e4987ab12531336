"""Burgers' equation with an uncertain shock: fluxes, data and the exact solution."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import Density1D, Quadrature, gauss_quadrature


class UnsupportedCase(ValueError):
    """Raised for configurations the exact solution does not cover (rarefactions)."""


def physical_flux(u):
    return 0.5 * np.square(u)


def lf_flux(u_left, u_right, dx: float, dt: float):
    """Lax-Friedrichs numerical flux with dissipation dx / (2 dt)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return 0.5 * (physical_flux(u_left) + physical_flux(u_right)) - 0.5 * (dx / dt) * (
        np.asarray(u_right) - np.asarray(u_left)
    )


@dataclass(frozen=True)
class SpatialGrid:
    x_left: float
    x_right: float
    nx: int

    def __post_init__(self):
        if self.nx < 1:
            raise ValueError("nx must be positive")
        if not self.x_right > self.x_left:
            raise ValueError("x_left must be smaller than x_right")

    @property
    def dx(self) -> float:
        return (self.x_right - self.x_left) / self.nx

    @property
    def centers(self) -> np.ndarray:
        return self.x_left + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def edges(self) -> np.ndarray:
        return self.x_left + np.arange(self.nx + 1) * self.dx


@dataclass(frozen=True)
class BurgersProblem:
    """
    Shock initial condition u_L for x < x0 + sigma1*xi1, else u_R + sigma2*xi2,
    with xi1 ~ U(-1, 1) and xi2 ~ U(0, 1). Dirichlet data equal the two states.
    """

    x_left: float = 0.0
    x_right: float = 1.0
    x0: float = 0.5
    u_left: float = 12.0
    u_right: float = 1.0
    sigma1: float = 0.2
    sigma2: float = 5.0
    t_end: float = 0.01
    densities: tuple[Density1D, Density1D] = (Density1D(-1.0, 1.0), Density1D(0.0, 1.0))

    def __post_init__(self):
        if not self.x_left < self.x_right:
            raise ValueError("x_left must be smaller than x_right")
        if not self.u_left > self.u_right + self.sigma2 * self.densities[1].b:
            raise UnsupportedCase("u_L must exceed every right state for a shock")

    @property
    def deterministic(self) -> bool:
        return self.sigma1 == 0.0 and self.sigma2 == 0.0

    def right_state(self, xi):
        xi = np.atleast_2d(xi)
        return self.u_right + self.sigma2 * xi[:, 1]

    def left_state(self, xi):
        xi = np.atleast_2d(xi)
        return np.full(xi.shape[0], float(self.u_left))

    def initial_condition(self, x, xi):
        """Broadcasts over ``x`` (shape (n,)) and ``xi`` rows (shape (k, 2)); returns (n, k)."""
        return self.exact_solution(0.0, x, xi)

    def shock_speed(self, xi):
        return 0.5 * (self.u_left + self.right_state(xi))

    def exact_solution(self, t: float, x, xi):
        """Entropy shock: u_L left of x0 + sigma1*xi1 + s(xi2)*t, the right state otherwise."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        x_arr = np.asarray(x, dtype=float)
        u_r = self.right_state(xi)
        if np.any(u_r >= self.u_left):
            raise UnsupportedCase("rarefaction configuration")
        pos = self.x0 + self.sigma1 * xi[:, 0] + self.shock_speed(xi) * t
        xx = np.atleast_1d(x_arr)[:, None]
        out = np.where(xx < pos[None, :], self.u_left, u_r[None, :])
        if x_arr.ndim == 0 and xi.shape[0] == 1:
            return float(out[0, 0])
        return out

    def reference_moments(self, t: float, grid: SpatialGrid, quad: Quadrature):
        """Mean and variance at cell centres by quadrature of the exact solution."""
        u = self.exact_solution(t, grid.centers, quad.nodes)
        mean = u @ quad.weights
        second = np.square(u) @ quad.weights
        return mean, np.maximum(second - mean**2, 0.0)

    def reference_moments_exact(self, t: float, grid: SpatialGrid, npts: int = 8):
        """
        Mean and variance at cell centres integrated exactly in xi1 and piecewise
        by Gauss rules in xi2 between the kinks of the shock-passage probability.
        """
        d1, d2 = self.densities
        x = grid.centers
        u_l = float(self.u_left)
        # probability that the point x lies left of the shock as a function of xi2
        # p(xi2) = P(xi1 > c(xi2)) with c linear in xi2
        g = gauss_quadrature(npts)
        s_ref, w_ref = g.nodes[:, 0], g.weights
        mean = np.empty_like(x)
        second = np.empty_like(x)
        for j, xj in enumerate(x):
            breaks = [d2.a, d2.b]
            if self.sigma1 > 0:
                # c(xi2) = (xj - x0 - 0.5*(u_l + u_r + sigma2*xi2)*t) / sigma1 hits d1.a or d1.b
                slope = -0.5 * self.sigma2 * t / self.sigma1
                c0 = (xj - self.x0 - 0.5 * (u_l + self.u_right) * t) / self.sigma1
                if slope != 0.0:
                    for edge in (d1.a, d1.b):
                        z = (edge - c0) / slope
                        if d2.a < z < d2.b:
                            breaks.append(z)
            breaks = np.unique(breaks)
            m_acc = 0.0
            s_acc = 0.0
            for lo, hi in zip(breaks[:-1], breaks[1:]):
                xi2 = 0.5 * (hi - lo) * s_ref + 0.5 * (hi + lo)
                wt = w_ref * (hi - lo) / (d2.b - d2.a)
                u_r = self.u_right + self.sigma2 * xi2
                p = self._left_probability(t, xj, xi2)
                m_acc += np.sum(wt * (p * u_l + (1.0 - p) * u_r))
                s_acc += np.sum(wt * (p * u_l**2 + (1.0 - p) * u_r**2))
            mean[j] = m_acc
            second[j] = s_acc
        return mean, np.maximum(second - mean**2, 0.0)

    def _left_probability(self, t, x, xi2):
        d1 = self.densities[0]
        shift = x - self.x0 - 0.5 * (self.u_left + self.u_right + self.sigma2 * xi2) * t
        if self.sigma1 == 0.0:
            return (shift < 0.0).astype(float)
        c = shift / self.sigma1
        return np.clip((d1.b - c) / (d1.b - d1.a), 0.0, 1.0)
