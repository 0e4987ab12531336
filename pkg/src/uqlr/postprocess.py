"""Quantities of interest, error norms and CSV export."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

VARIANCE_CLAMP = -1e-14


@dataclass(frozen=True)
class FieldPair:
    mean: np.ndarray
    variance: np.ndarray


def moments_to_fields(u: np.ndarray) -> FieldPair:
    """Mean is the zeroth coefficient, variance the sum of squares of the others."""
    u = np.atleast_2d(u)
    mean = u[:, 0].copy()
    var = np.sum(u[:, 1:] ** 2, axis=1)
    return FieldPair(mean, _clamp(var))


def nodal_fields(values: np.ndarray, weights: np.ndarray) -> FieldPair:
    """Mean and variance from values at quadrature nodes (Nx, Nq)."""
    mean = values @ weights
    var = ((values - mean[:, None]) ** 2) @ weights
    return FieldPair(mean, _clamp(var))


def _clamp(var: np.ndarray) -> np.ndarray:
    neg = var < 0.0
    if np.any(var < VARIANCE_CLAMP):
        log.warning("variance below %.1e clamped in %d cells", VARIANCE_CLAMP, int(np.sum(var < VARIANCE_CLAMP)))
    if np.any(neg):
        var = np.where(neg, 0.0, var)
    return var


def l2_error(field, reference, dx: float) -> float:
    field = np.asarray(field, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if field.shape != reference.shape:
        raise ValueError(f"length mismatch: {field.shape} vs {reference.shape}")
    return float(np.sqrt(dx * np.sum((field - reference) ** 2)))


def total_variation(field) -> float:
    return float(np.sum(np.abs(np.diff(np.asarray(field, dtype=float)))))


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def export_csv(path, header, rows) -> Path:
    """Write ``rows`` under ``header``; floats with 17 significant digits, LF endings."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def export_fields(path, x, fields: FieldPair) -> Path:
    return export_csv(path, ["x", "mean", "variance"], zip(x, fields.mean, fields.variance))


def export_errors(path, rows) -> Path:
    """Rows of (method, unknowns, rank, err_mean, err_var)."""
    return export_csv(path, ["method", "unknowns", "rank", "err_mean", "err_var"], rows)


def export_basis(path, points: np.ndarray, values: np.ndarray) -> Path:
    header = [f"xi{d + 1}" for d in range(points.shape[1])] + [f"W{i + 1}" for i in range(values.shape[1])]
    return export_csv(path, header, np.hstack([points, values]).tolist())


def export_matrix(path, a: np.ndarray) -> Path:
    """Matrix rows under a c1..cn header."""
    a = np.atleast_2d(a)
    return export_csv(path, [f"c{i + 1}" for i in range(a.shape[1])], a.tolist())


def read_fields(path) -> tuple[np.ndarray, FieldPair]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], FieldPair(data[:, 1], data[:, 2])
