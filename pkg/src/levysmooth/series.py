"""Poisson series in log space, dyadic truncation scans, divergence rule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .dsl import Functional, evaluate_on_counts


def log_factorials(m: int) -> np.ndarray:
    """ln n! for n = 0..m, by cumulative summation of ln k."""
    out = np.zeros(m + 1)
    if m >= 2:
        out[2:] = np.cumsum(np.log(np.arange(2, m + 1, dtype=float)))
    return out


def stirling_log_factorial(n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    return n * np.log(n) - n + 0.5 * np.log(2 * np.pi * n) + 1 / (12 * n) - 1 / (360 * n**3) + 1 / (1260 * n**5)


def poisson_log_pmf(lam: float, m: int, logfact: np.ndarray | None = None) -> np.ndarray:
    n = np.arange(m + 1, dtype=float)
    logfact = log_factorials(m) if logfact is None else logfact[: m + 1]
    if lam == 0:
        out = np.full(m + 1, -np.inf)
        out[0] = 0.0
        return out
    return -lam + n * math.log(lam) - logfact


class CountPhi:
    """phi(n) given through ln phi(n)^2, for Y = phi(N(A))."""

    def __init__(self, log_sq: Callable[[np.ndarray], np.ndarray], label: str = "phi"):
        self._log_sq = log_sq
        self.label = label

    def log_sq(self, n: np.ndarray) -> np.ndarray:
        return self._log_sq(np.asarray(n))

    def __repr__(self):
        return f"CountPhi({self.label})"

    @classmethod
    def from_functional(cls, f: Functional) -> CountPhi:
        def log_sq(n):
            v = evaluate_on_counts(f, n)
            with np.errstate(divide="ignore"):
                return 2 * np.log(np.abs(v))

        return cls(log_sq, str(f))


@dataclass
class SeriesScan:
    """Partial sums of a nonnegative series at dyadic checkpoints."""

    partial: float
    checkpoints: list[int]
    sums: list[float]
    status: str
    growth_exponent: float = 0.0
    growth_stderr: float = 0.0
    notes: list[str] = field(default_factory=list)

    @property
    def trace(self) -> list[tuple[int, float]]:
        return list(zip(self.checkpoints, self.sums))


def dyadic_checkpoints(m: int, start: int = 2) -> list[int]:
    out, k = [], start
    while k <= m:
        out.append(k)
        k *= 2
    return out


def scan_terms(terms: np.ndarray, fit_points: int = 4) -> SeriesScan:
    """Apply the dyadic divergence rule to terms a_0..a_m.

    Divergent when the increments over the last three dyadic blocks fail to
    decrease and a power-law fit of the last ``fit_points`` partial sums has
    exponent above 0 by more than two standard errors of the fit.
    """
    m = len(terms) - 1
    with np.errstate(over="ignore"):
        sums = np.cumsum(terms)
    partial = float(sums[-1])
    cps = dyadic_checkpoints(m)
    at = [float(sums[c]) for c in cps]
    if not math.isfinite(partial):
        return SeriesScan(partial, cps, at, "divergent", math.inf, 0.0, ["partial sum overflowed"])
    if len(cps) < 4:
        return SeriesScan(partial, cps, at, "finite", 0.0, 0.0, ["too few checkpoints for the rule"])
    inc = np.diff(at)
    stalled = inc[-2] >= inc[-3] and inc[-1] >= inc[-2] and inc[-1] > 0
    xs = np.log(cps[-fit_points:])
    ys = np.array(at[-fit_points:])
    if np.all(ys > 0):
        fit = stats.linregress(xs, np.log(ys))
        slope, se = float(fit.slope), float(fit.stderr)
    else:
        slope, se = 0.0, 0.0
    growing = slope - 2 * se > 0
    status = "divergent" if (stalled and growing) else "finite"
    return SeriesScan(partial, cps, at, status, slope, se)


def poisson_series_terms(phi: CountPhi, lam: float, m: int, weight_log: np.ndarray | None = None) -> np.ndarray:
    """Terms phi(n)^2 * w(n) * P(N = n), computed in log space."""
    n = np.arange(m + 1)
    log_terms = phi.log_sq(n) + poisson_log_pmf(lam, m)
    if weight_log is not None:
        log_terms = log_terms + weight_log
    with np.errstate(over="ignore"):
        return np.exp(log_terms)
