"""Per-step diagnostics collected while a solver runs."""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class NumericalFailure(RuntimeError):
    """A solver produced non-finite values."""

    def __init__(self, step: int, t: float, what: str = "state"):
        super().__init__(f"non-finite {what} at step {step} (t={t:.6g})")
        self.step = step
        self.t = t


@dataclass
class RunLog:
    rows: list = field(default_factory=list)
    counters: Counter = field(default_factory=Counter)
    wall_time: float = 0.0

    def record(self, step: int, t: float, mean: np.ndarray, bc_error=(np.nan, np.nan), nan: bool = False) -> None:
        """``bc_error`` is the max deviation from the Dirichlet data in the (first, last) cell."""
        self.rows.append(
            {
                "step": step,
                "t": t,
                "min_mean": float(np.min(mean)),
                "max_mean": float(np.max(mean)),
                "bc_left": float(bc_error[0]),
                "bc_right": float(bc_error[1]),
                "qr_warnings": self.counters["qr_warnings"],
                "nan": int(nan),
            }
        )

    def column(self, key: str) -> np.ndarray:
        return np.array([row[key] for row in self.rows])

    def count(self, key: str, n: int = 1) -> None:
        self.counters[key] += n

    def to_csv(self, path) -> None:
        cols = ["step", "t", "min_mean", "max_mean", "bc_left", "bc_right", "qr_warnings", "nan"]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(cols)
            for row in self.rows:
                writer.writerow(
                    [row[c] if isinstance(row[c], int) else f"{row[c]:.17g}" for c in cols]
                )


def time_steps(t_end: float, dt: float):
    """Step sizes of a uniform march whose last step is shortened to land on ``t_end``."""
    if t_end <= 0.0:
        return []
    n = max(1, int(np.ceil(t_end / dt - 1e-9)))
    return [dt] * (n - 1) + [t_end - (n - 1) * dt]
