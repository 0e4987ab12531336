"""L2 filters damping high-order gPC coefficients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import qr_positive

EXPONENT_FORMS = ("i2(i+1)2", "i2(i-1)2")


@dataclass(frozen=True)
class FilterConfig:
    strength: float = 0.0
    exponent_form: str = "i2(i+1)2"

    def __post_init__(self):
        if self.strength < 0:
            raise ValueError("filter strength must be non-negative")
        if self.exponent_form not in EXPONENT_FORMS:
            raise ValueError(f"exponent_form must be one of {EXPONENT_FORMS}")

    @property
    def active(self) -> bool:
        return self.strength > 0.0

    def penalty(self, i):
        i = np.asarray(i, dtype=float)
        if self.exponent_form == "i2(i+1)2":
            return i**2 * (i + 1.0) ** 2
        return i**2 * (i - 1.0) ** 2


def filter_factor(config: FilterConfig, multi_index) -> float:
    """g = 1 / (1 + lambda * sum_d e(m_d))."""
    return float(1.0 / (1.0 + config.strength * np.sum(config.penalty(np.atleast_1d(multi_index)))))


def filter_factors(config: FilterConfig, multi_indices: np.ndarray) -> np.ndarray:
    """Damping factor for every row of ``multi_indices`` (M, p)."""
    pen = config.penalty(multi_indices).sum(axis=1)
    g = 1.0 / (1.0 + config.strength * pen)
    g[pen == 0] = 1.0
    return g


def apply_filter_sg(moments: np.ndarray, factors: np.ndarray) -> np.ndarray:
    """Scale column m of the (Nx, M) moment field by g(m)."""
    return moments * factors[None, :]


def apply_filter_dlra(W: np.ndarray, S: np.ndarray, factors: np.ndarray):
    """
    Filter the coefficients L = W S^T row-wise and refactor by QR.

    Returns the new (W, S); the spatial basis is untouched.
    """
    L = (W @ S.T) * factors[:, None]
    Q, R, _ = qr_positive(L)
    return Q, R.T
