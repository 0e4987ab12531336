"""
Orthonormal Legendre families for uniform densities, Gauss quadrature with
density-absorbed weights, and tensorization into a flat gPC basis.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Density1D:
    """Uniform probability density on [a, b]."""

    a: float = -1.0
    b: float = 1.0
    kind: str = "uniform"

    def __post_init__(self):
        if self.kind != "uniform":
            raise ValueError(f"unsupported density kind {self.kind!r}")
        if not self.b > self.a:
            raise ValueError("density support must satisfy a < b")

    def to_reference(self, t):
        """Affine map [a, b] -> [-1, 1]."""
        return (2.0 * np.asarray(t, dtype=float) - self.a - self.b) / (self.b - self.a)

    def from_reference(self, s):
        return 0.5 * (self.b - self.a) * np.asarray(s, dtype=float) + 0.5 * (self.a + self.b)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= self.a) & (t <= self.b)
        return np.where(inside, 1.0 / (self.b - self.a), 0.0)


def _legendre_table(nmax: int, s: np.ndarray) -> np.ndarray:
    """Orthonormal Legendre values sqrt(2n+1) P_n(s) for n = 0..nmax, shape (nmax+1, *s.shape)."""
    out = np.empty((nmax + 1,) + s.shape)
    p_prev = np.ones_like(s)
    out[0] = p_prev
    if nmax >= 1:
        p = s.copy()
        out[1] = math.sqrt(3.0) * p
        for n in range(1, nmax):
            p_next = ((2 * n + 1) * s * p - n * p_prev) / (n + 1)
            p_prev, p = p, p_next
            out[n + 1] = math.sqrt(2 * n + 3) * p
    return out


def legendre_eval(n: int, t, density: Density1D = Density1D()) -> np.ndarray | float:
    """
    Degree-``n`` polynomial of the family orthonormal w.r.t. ``density``.

    Evaluated by the three-term Legendre recurrence after mapping ``t`` to
    [-1, 1]. Raises ``ValueError`` for points outside the support.
    """
    if n < 0:
        raise ValueError("degree must be non-negative")
    t_arr = np.asarray(t, dtype=float)
    tol = 1e-12 * (density.b - density.a)
    if np.any(t_arr < density.a - tol) or np.any(t_arr > density.b + tol):
        raise ValueError(f"point outside support [{density.a}, {density.b}]")
    s = np.clip(density.to_reference(t_arr), -1.0, 1.0)
    val = _legendre_table(n, np.atleast_1d(s))[n]
    return float(val[0]) if t_arr.ndim == 0 else val.reshape(t_arr.shape)


def legendre_table(nmax: int, t, density: Density1D = Density1D()) -> np.ndarray:
    """All degrees 0..nmax at points ``t``; shape (nmax+1, len(t))."""
    s = density.to_reference(np.atleast_1d(np.asarray(t, dtype=float)))
    return _legendre_table(nmax, s)


@dataclass(frozen=True)
class Quadrature:
    """Nodes (n_points, dims) and weights summing to one (density absorbed)."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def dims(self) -> int:
        return self.nodes.shape[1]

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"xi{d + 1}" for d in range(self.dims)] + ["weight"])
            for node, weight in zip(self.nodes, self.weights):
                writer.writerow([f"{v:.17g}" for v in node] + [f"{weight:.17g}"])


def gauss_quadrature(nq: int, density: Density1D = Density1D()) -> Quadrature:
    """
    Gauss-Legendre rule with ``nq`` points for a uniform density.

    Nodes come from the symmetric Jacobi matrix and are polished by Newton
    steps on P_nq; weights use the derivative formula and are divided by the
    support length so that they sum to one.
    """
    if nq < 1:
        raise ValueError("nq must be at least 1")
    if nq == 1:
        s = np.zeros(1)
        w = np.ones(1)
    else:
        k = np.arange(1, nq)
        beta = k / np.sqrt(4.0 * k * k - 1.0)
        s = np.linalg.eigvalsh(np.diag(beta, 1) + np.diag(beta, -1))
        for _ in range(3):
            p, dp = _legendre_and_derivative(nq, s)
            s = s - p / dp
        _, dp = _legendre_and_derivative(nq, s)
        w = 2.0 / ((1.0 - s * s) * dp * dp)
        # enforce exact symmetry of the rule
        s = 0.5 * (s - s[::-1])
        w = 0.5 * (w + w[::-1])
        w = 0.5 * w
    nodes = density.from_reference(s)
    return Quadrature(nodes=nodes.reshape(-1, 1), weights=w / w.sum())


def _legendre_and_derivative(n: int, s: np.ndarray):
    p_prev = np.ones_like(s)
    p = s.copy()
    for k in range(1, n):
        p_prev, p = p, ((2 * k + 1) * s * p - k * p_prev) / (k + 1)
    dp = n * (s * p - p_prev) / (s * s - 1.0)
    return p, dp


def default_nq(degree: int) -> int:
    """Points per dimension resolving triple products of degree-N polynomials."""
    return max(16, math.ceil((3 * degree + 1) / 2))


@dataclass(frozen=True)
class TensorBasis:
    """
    Tensor-product gPC basis with degree ``degree`` in each dimension.

    Flat index of multi-index (m_1, ..., m_p) is sum m_d (N+1)^(d-1), i.e. the
    first dimension runs fastest.
    """

    degree: int
    densities: tuple[Density1D, ...]

    @property
    def dims(self) -> int:
        return len(self.densities)

    @property
    def size(self) -> int:
        return (self.degree + 1) ** self.dims

    def flatten(self, multi_index) -> int:
        n1 = self.degree + 1
        if len(multi_index) != self.dims:
            raise ValueError("multi-index has wrong dimension")
        flat = 0
        for d, m in enumerate(multi_index):
            if not 0 <= m <= self.degree:
                raise ValueError(f"index {m} out of range in dimension {d}")
            flat += int(m) * n1**d
        return flat

    def unflatten(self, flat: int) -> tuple[int, ...]:
        if not 0 <= flat < self.size:
            raise ValueError("flat index out of range")
        n1 = self.degree + 1
        out = []
        for _ in range(self.dims):
            flat, m = divmod(flat, n1)
            out.append(m)
        return tuple(out)

    def multi_indices(self) -> np.ndarray:
        """Array (M, p) of multi-indices in flat order."""
        return np.array([self.unflatten(i) for i in range(self.size)], dtype=int).reshape(self.size, self.dims)

    def evaluate(self, points) -> np.ndarray:
        """Basis values at ``points`` (n, p); returns shape (M, n)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        tables = [legendre_table(self.degree, points[:, d], dens) for d, dens in enumerate(self.densities)]
        idx = self.multi_indices()
        out = np.ones((self.size, points.shape[0]))
        for d in range(self.dims):
            out *= tables[d][idx[:, d]]
        return out


def tensor_quadrature(quads) -> Quadrature:
    """Product rule; first dimension runs fastest in the flattened node list."""
    quads = list(quads)
    grids = [q.nodes[:, 0] for q in quads]
    nodes = np.array([pt[::-1] for pt in itertools.product(*[g for g in grids[::-1]])])
    weights = np.array([np.prod(wt[::-1]) for wt in itertools.product(*[q.weights for q in quads[::-1]])])
    return Quadrature(nodes=nodes.reshape(-1, len(quads)), weights=weights)


def tensorize(basis: TensorBasis, quads) -> tuple[TensorBasis, Quadrature, np.ndarray]:
    """Product quadrature and the evaluation table Phi[m, k] = phi_m(xi_k)."""
    quads = list(quads)
    if len(quads) != basis.dims:
        raise ValueError("need one quadrature per basis dimension")
    quad = tensor_quadrature(quads)
    return basis, quad, basis.evaluate(quad.nodes)


def basis_gram(phi: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return (phi * weights) @ phi.T


def gram_report(phi: np.ndarray, weights: np.ndarray, tol: float = 1e-8) -> dict:
    """Validation summary of the discrete Gram matrix; flags aliasing above ``tol``."""
    gram = basis_gram(phi, weights)
    dev = np.abs(gram - np.eye(gram.shape[0]))
    off = dev - np.diag(np.diag(dev))
    return {
        "max_deviation": float(dev.max()),
        "max_offdiag": float(off.max()),
        "aliased": bool(off.max() > tol),
    }


@dataclass
class UncertainSpace:
    """Basis, quadrature and evaluation table bundled for the solvers."""

    basis: TensorBasis
    quad: Quadrature
    phi: np.ndarray = field(repr=False)

    @property
    def weights(self) -> np.ndarray:
        return self.quad.weights

    @property
    def size(self) -> int:
        return self.basis.size

    def project(self, nodal: np.ndarray) -> np.ndarray:
        """gPC coefficients of nodal values; last axis runs over quadrature nodes."""
        return (nodal * self.quad.weights) @ self.phi.T

    def expectation(self, nodal: np.ndarray) -> np.ndarray:
        return nodal @ self.quad.weights

    @classmethod
    def build(cls, degree: int, densities, nq: int | None = None) -> "UncertainSpace":
        densities = tuple(densities)
        nq = default_nq(degree) if nq is None else nq
        basis = TensorBasis(degree, densities)
        _, quad, phi = tensorize(basis, [gauss_quadrature(nq, d) for d in densities])
        return cls(basis, quad, phi)

    def to_csv(self, path) -> None:
        """Nodes, weights and the basis table as columns phi0..phi(M-1)."""
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            dims = self.quad.dims
            writer.writerow([f"xi{d + 1}" for d in range(dims)] + ["weight"] + [f"phi{m}" for m in range(self.size)])
            for k in range(self.quad.size):
                row = list(self.quad.nodes[k]) + [self.quad.weights[k]] + list(self.phi[:, k])
                writer.writerow([f"{v:.17g}" for v in row])
