"""Monte Carlo estimates and the delta method."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

Z_DEFAULT = 3.0


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n: int
    seed: int | None = None

    @property
    def ci(self) -> tuple[float, float]:
        return (self.value - Z_DEFAULT * self.stderr, self.value + Z_DEFAULT * self.stderr)

    def within(self, target: float, z: float = Z_DEFAULT, slack: float = 0.0) -> bool:
        return abs(self.value - target) <= z * self.stderr + slack

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ci"] = list(self.ci)
        return d


def mean_estimate(samples: np.ndarray, seed: int | None = None) -> Estimate:
    samples = np.asarray(samples, dtype=float)
    n = len(samples)
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return Estimate(float(samples.mean()), se, n, seed)


def sqrt_estimate(second_moment: Estimate) -> Estimate:
    """Norm from a second-moment estimate: d sqrt(m) = dm / (2 sqrt(m))."""
    m = max(second_moment.value, 0.0)
    r = math.sqrt(m)
    se = second_moment.stderr / (2 * r) if r > 0 else math.sqrt(second_moment.stderr)
    return Estimate(r, se, second_moment.n, second_moment.seed)


def delta_estimate(columns: np.ndarray, fn, grad, seed: int | None = None) -> Estimate:
    """Estimate ``fn(means)`` with stderr from the gradient and sample covariance.

    ``columns`` is (n, k): k per-sample quantities drawn jointly.
    """
    columns = np.asarray(columns, dtype=float)
    n = columns.shape[0]
    mu = columns.mean(axis=0)
    cov = np.atleast_2d(np.cov(columns, rowvar=False)) / n
    g = np.asarray(grad(mu), dtype=float)
    var = float(g @ cov @ g)
    return Estimate(float(fn(mu)), math.sqrt(max(var, 0.0)), n, seed)


def combined_stderr(*estimates: Estimate) -> float:
    return math.sqrt(sum(e.stderr**2 for e in estimates))
