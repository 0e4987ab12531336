"""Small dense linear-algebra helpers shared by the low-rank solvers."""
from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)

RANK_TOL = 1e-14


def qr_positive(a: np.ndarray, weights: np.ndarray | None = None):
    """
    Reduced QR with nonnegative diagonal of R.

    With ``weights`` the columns of Q are orthonormal in the inner product
    diag(weights). Returns (Q, R, deficient) where ``deficient`` flags a
    diagonal entry of R below ``RANK_TOL`` relative to the largest.
    """
    if weights is None:
        q, r = np.linalg.qr(a)
    else:
        sw = np.sqrt(weights)
        q, r = np.linalg.qr(a * sw[:, None])
        q = q / sw[:, None]
    signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    q = q * signs[None, :]
    r = r * signs[:, None]
    diag = np.abs(np.diag(r))
    scale = max(diag.max(initial=0.0), 1.0)
    deficient = bool(np.any(diag < RANK_TOL * scale))
    if deficient:
        log.debug("rank-deficient QR: min |R_ii| = %.3e", diag.min())
    return q, r, deficient
