"""Error statistics and CDFs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ErrorReport:
    per_sample_errors: np.ndarray  # sorted, nonnegative
    mean: float
    median: float
    p90: float
    units: str = ""

    @classmethod
    def from_errors(cls, errors, units: str = "") -> "ErrorReport":
        e = np.sort(np.asarray(errors, dtype=np.float64).ravel())
        if e.size == 0:
            raise ValueError("no errors to summarize")
        if np.any(e < 0) or not np.all(np.isfinite(e)):
            raise ValueError("errors must be finite and nonnegative")
        return cls(e, float(e.mean()), percentile(e, 50), percentile(e, 90), units)

    def summary(self) -> dict:
        return {
            "n": int(self.per_sample_errors.size),
            "mean": self.mean,
            "median": self.median,
            "p90": self.p90,
            "units": self.units,
        }


def percentile(values, q: float) -> float:
    """Linear-interpolation percentile (numpy's default method)."""
    return float(np.percentile(np.asarray(values, dtype=np.float64), q, method="linear"))


def error_cdf(errors) -> list[tuple[float, float]]:
    """Empirical CDF points (e_(i), i / N) over the sorted errors, i = 1..N."""
    e = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    if e.size == 0:
        raise ValueError("empty error list")
    n = e.size
    return [(float(v), (i + 1) / n) for i, v in enumerate(e)]


def cdf_csv(errors) -> str:
    lines = ["error,cdf"]
    lines += [f"{v!r},{f!r}" for v, f in error_cdf(errors)]
    return "\n".join(lines) + "\n"
