"""Weighted-norm estimators and numerical checks of the smoothness criteria.

The weight is sqrt(N(A) + 1)**theta. theta = 1 is membership in D_{1,2};
theta in (0, 1) is the interpolation space (L_2, D_{1,2})_{theta,2}, whose
K-functional is bracketed by the surrogate ||Y min(1, s sqrt(N(A)+1))||.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .dsl import Env, Functional, depends_only_on_count, evaluate_batch, measurability
from .estimate import Estimate, combined_stderr, delta_estimate, mean_estimate, sqrt_estimate
from .malliavin import quotients, sample_points
from .model import BoxSet, JumpModel, expected_count, m_measure
from .series import CountPhi, SeriesScan, poisson_series_terms, scan_terms
from .simulate import ROLE_PATHS, ROLE_POINTS, count_in, make_rng, map_blocks, sample_batch

DEFAULT_S_GRID = np.logspace(-3, 3, 512)


class MeasurabilityError(ValueError):
    pass


def _draw(model, f, A, samples, seed, env, workers=1, derivative=False):
    """Per-path Y, N(A) and, optionally, m(A) * quotient**2 at a point from m|_A."""
    mA = m_measure(model, A) if derivative else 0.0

    def block(b, size):
        batch = sample_batch(model, make_rng(seed, b, ROLE_PATHS), size)
        y = evaluate_batch(f, batch, env)
        n = count_in(batch, A).astype(float)
        if not derivative:
            return np.column_stack([y, n])
        t, x, _ = sample_points(model, A, make_rng(seed, b, ROLE_POINTS), size, power=2)
        bumped = evaluate_batch(f, batch.with_jumps(t, x), env)
        return np.column_stack([y, n, bumped, x])

    cols = map_blocks(block, samples, workers)
    out = {"y": cols[:, 0], "n": cols[:, 1]}
    if derivative:
        q = (cols[:, 2] - cols[:, 0]) / cols[:, 3]
        out.update(bumped=cols[:, 2], x=cols[:, 3], dsq=mA * q**2, mA=mA)
    return out


def _require_certified(f: Functional, A: BoxSet, env: Env):
    rep = measurability(f, A, env)
    if not rep.certified:
        raise MeasurabilityError(
            f"{f} is not certified F_A-measurable; offending: {', '.join(rep.offending)}"
        )
    return rep


def weighted_norm(
    model: JumpModel, f: Functional, A: BoxSet, theta: float, samples: int, seed: int, env: Env, workers: int = 1
) -> Estimate:
    """||Y sqrt(N(A)+1)^theta||_{L2}."""
    if not 0 <= theta <= 1:
        raise ValueError("theta must lie in [0, 1]")
    d = _draw(model, f, A, samples, seed, env, workers)
    return sqrt_estimate(mean_estimate(d["y"] ** 2 * (d["n"] + 1) ** theta, seed))


@dataclass
class SeriesNorm:
    """Exact Poisson series for E[Y^2 (N+1)^theta], truncated at m."""

    value: float
    scan: SeriesScan
    lam: float


def _as_phi(f, A: BoxSet, env: Env | None) -> CountPhi:
    if isinstance(f, CountPhi):
        return f
    if env is None or not depends_only_on_count(f, env, A):
        raise ValueError(f"{f} is not a function of count(A) alone")
    return CountPhi.from_functional(f)


def exact_series_norm(model: JumpModel, f, A: BoxSet, theta: float, m: int, env: Env | None = None) -> SeriesNorm:
    """sum_{n<=m} phi(n)^2 (n+1)^theta e^-lam lam^n / n!  (the squared norm)."""
    lam = expected_count(model, A)
    phi = _as_phi(f, A, env)
    terms = poisson_series_terms(phi, lam, m, theta * np.log1p(np.arange(m + 1)))
    scan = scan_terms(terms)
    return SeriesNorm(scan.partial, scan, lam)


@dataclass
class SandwichReport:
    a: Estimate  # ||Y sqrt(N(A))||
    b: Estimate  # ||Y|| sqrt(E N(A))
    d: Estimate  # ||D Y 1_A||
    z: float
    certified: bool

    @property
    def sigma(self) -> float:
        return combined_stderr(self.a, self.b, self.d)

    @property
    def lower_ok(self) -> bool:
        return abs(self.a.value - self.b.value) <= self.d.value + self.z * self.sigma

    @property
    def upper_ok(self) -> bool:
        return self.d.value <= self.a.value + self.b.value + self.z * self.sigma

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.upper_ok


def sandwich_check(
    model: JumpModel, f: Functional, A: BoxSet, samples: int, seed: int, env: Env, workers: int = 1, z: float = 3.0
) -> SandwichReport:
    """|a - b| <= d <= a + b with a, b, d estimated on common paths.

    For F_A-certified Y the derivative vanishes off A, so d is also ||DY||.
    """
    lam = expected_count(model, A)
    d = _draw(model, f, A, samples, seed, env, workers, derivative=True)
    y2 = d["y"] ** 2
    a = sqrt_estimate(mean_estimate(y2 * d["n"], seed))
    b = sqrt_estimate(mean_estimate(y2 * lam, seed))
    dn = sqrt_estimate(mean_estimate(d["dsq"], seed))
    return SandwichReport(a, b, dn, z, measurability(f, A, env).certified)


@dataclass
class EquivalenceReport:
    ratio: Estimate
    c: float
    z: float

    @property
    def band(self) -> tuple[float, float]:
        return 1 / self.c, self.c

    @property
    def passed(self) -> bool:
        slack = self.z * self.ratio.stderr
        return 1 / self.c - slack <= self.ratio.value <= self.c + slack


def equivalence_ratio(
    model: JumpModel, f: Functional, A: BoxSet, samples: int, seed: int, env: Env, workers: int = 1, z: float = 3.0
) -> EquivalenceReport:
    """(||Y||^2 + ||DY||^2)^(1/2) / ||Y sqrt(N(A)+1)||, banded by sqrt2 (sqrt(E N(A)) + 1)."""
    _require_certified(f, A, env)
    lam = expected_count(model, A)
    d = _draw(model, f, A, samples, seed, env, workers, derivative=True)
    y2 = d["y"] ** 2
    cols = np.column_stack([y2, d["dsq"], y2 * (d["n"] + 1)])

    def fn(mu):
        return math.sqrt((mu[0] + mu[1]) / mu[2])

    def grad(mu):
        r = fn(mu)
        return [1 / (2 * r * mu[2]), 1 / (2 * r * mu[2]), -r / (2 * mu[2])]

    ratio = delta_estimate(cols, fn, grad, seed)
    return EquivalenceReport(ratio, math.sqrt(2) * (math.sqrt(lam) + 1), z)


def k_surrogate(
    model: JumpModel, f: Functional, A: BoxSet, s: float, samples: int, seed: int, env: Env, workers: int = 1
) -> Estimate:
    """||Y min(1, s sqrt(N(A)+1))||_{L2}."""
    if not s > 0:
        raise ValueError("s must be > 0")
    d = _draw(model, f, A, samples, seed, env, workers)
    w = np.minimum(1.0, s * np.sqrt(d["n"] + 1))
    return sqrt_estimate(mean_estimate((d["y"] * w) ** 2, seed))


def surrogate_curve(model, f, A, s_grid, samples, seed, env, workers=1) -> np.ndarray:
    """Squared surrogate at each s on common paths: (len(s_grid),)."""
    d = _draw(model, f, A, samples, seed, env, workers)
    y2 = d["y"] ** 2
    s = np.asarray(s_grid, dtype=float)
    ns, inv = np.unique(d["n"], return_inverse=True)
    weight_by_n = np.minimum(1.0, np.outer(s**2, ns + 1))  # (len(s), unique n)
    y2_by_n = np.bincount(inv, weights=y2, minlength=len(ns)) / len(y2)
    return weight_by_n @ y2_by_n


def k_upper(
    model: JumpModel, f: Functional, A: BoxSet, s: float, samples: int, seed: int, env: Env, workers: int = 1
) -> Estimate:
    """||Y_0|| + s ||Y_1||_{D12} for Y_0 = Y 1{sqrt(N(A)+1) > 1/s}, Y_1 = Y - Y_0.

    The D_{1,2} norm of Y_1 is (||Y_1||^2 + ||D Y_1||^2)^(1/2) with the
    derivative taken as an add-one-jump quotient inside A.
    """
    if not s > 0:
        raise ValueError("s must be > 0")
    _require_certified(f, A, env)
    d = _draw(model, f, A, samples, seed, env, workers, derivative=True)
    y, n = d["y"], d["n"]
    low = np.sqrt(n + 1) <= 1 / s
    low_bumped = np.sqrt(n + 2) <= 1 / s  # the added point lies in A
    y0 = np.where(low, 0.0, y)
    y1 = np.where(low, y, 0.0)
    y1_bumped = np.where(low_bumped, d["bumped"], 0.0)
    dy1 = d["mA"] * ((y1_bumped - y1) / d["x"]) ** 2
    cols = np.column_stack([y0**2, y1**2, dy1])

    def fn(mu):
        return math.sqrt(mu[0]) + s * math.sqrt(mu[1] + mu[2])

    def grad(mu):
        g0 = 1 / (2 * math.sqrt(mu[0])) if mu[0] > 0 else 0.0
        r = math.sqrt(mu[1] + mu[2])
        g1 = s / (2 * r) if r > 0 else 0.0
        return [g0, g1, g1]

    return delta_estimate(cols, fn, grad, seed)


def closed_form_theta_integral(c: float, theta: float) -> float:
    """int_0^inf s^(-2 theta) min(1, s^2 c^2) ds/s = c^(2 theta) / (2 theta (1 - theta))."""
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    if not c > 0:
        raise ValueError("c must be > 0")
    return c ** (2 * theta) / (2 * theta * (1 - theta))


def theta_integral_quadrature(c: float, theta: float, points: int = 10_001, decades: float = 20.0) -> float:
    """Simpson rule in log s on ``points`` nodes spanning +-``decades`` around the kink 1/c.

    The truncated tails are below 10**(-2 decades min(theta, 1-theta)) relative.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    if points % 2 == 0:
        points += 1  # keep the kink on a node
    u = np.linspace(-decades, decades, points) * math.log(10) - math.log(c)
    s = np.exp(u)
    g = s ** (-2 * theta) * np.minimum(1.0, (s * c) ** 2)
    return float(integrate.simpson(g, x=u))


def _trapezoid_pair(u: np.ndarray, g: np.ndarray) -> tuple[float, float]:
    """Trapezoid on all nodes and on every other node (ends kept)."""
    fine = float(integrate.trapezoid(g, x=u))
    if len(u) < 3:
        return fine, fine
    idx = np.arange(0, len(u), 2)
    if idx[-1] != len(u) - 1:
        idx = np.append(idx, len(u) - 1)
    return fine, float(integrate.trapezoid(g[idx], x=u[idx]))


def _theta_weights(ns: np.ndarray, theta: float, s_grid: np.ndarray):
    """Quadrature of int s^(-2 theta) min(1, s^2 (n+1)) ds/s per distinct n.

    Trapezoid in log s on the grid with the kink s = 1/sqrt(n+1) inserted as a
    node, plus power-law tails, Richardson-extrapolated against the
    every-other-node rule on each smooth piece. The reported error is the
    fine-rule correction, a conservative bound on the extrapolated value.
    """
    s = np.asarray(s_grid, dtype=float)
    u = np.log(s)
    q, err, tail_frac = np.empty(len(ns)), np.empty(len(ns)), np.empty(len(ns))
    for k, n in enumerate(ns):
        kink = -0.5 * math.log(n + 1)
        uu = np.unique(np.concatenate([u, [kink]])) if u[0] < kink < u[-1] else u
        ss = np.exp(uu)
        g = ss ** (-2 * theta) * np.minimum(1.0, ss**2 * (n + 1))
        lo_tail = g[0] / (2 - 2 * theta)
        hi_tail = g[-1] / (2 * theta)
        # tails are exact when the min sits in one branch beyond the grid
        fine = coarse = 0.0
        cut = int(np.searchsorted(uu, kink))
        for piece in (slice(0, cut + 1), slice(cut, len(uu))):
            if len(uu[piece]) >= 2:
                f, c = _trapezoid_pair(uu[piece], g[piece])
                fine, coarse = fine + f, coarse + c
        # Richardson: the extrapolated value, with the fine-rule error as a bound
        total = fine + (fine - coarse) / 3 + lo_tail + hi_tail
        q[k] = total
        err[k] = abs(fine - coarse) / 3
        tail_frac[k] = (lo_tail + hi_tail) / total
    return q, err, tail_frac


@dataclass
class InterpolationNorm:
    norm: Estimate
    squared: Estimate
    quad_error: float  # absolute, on the squared value
    tail_fraction: float

    @property
    def norm_quad_error(self) -> float:
        return self.quad_error / (2 * self.norm.value) if self.norm.value > 0 else math.sqrt(self.quad_error)


def interpolation_norm(
    model: JumpModel,
    f: Functional,
    A: BoxSet,
    theta: float,
    samples: int,
    seed: int,
    env: Env,
    s_grid=None,
    workers: int = 1,
) -> InterpolationNorm:
    """(int_0^inf s^(-2 theta) surrogate(s)^2 ds/s)^(1/2), surrogate in place of K."""
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    s_grid = DEFAULT_S_GRID if s_grid is None else np.asarray(s_grid, dtype=float)
    if s_grid[0] > 1e-3 * (1 + 1e-12) or s_grid[-1] < 1e3 * (1 - 1e-12):
        warnings.warn("s grid narrower than [1e-3, 1e3]; tails may dominate", stacklevel=2)
    d = _draw(model, f, A, samples, seed, env, workers)
    ns, inv = np.unique(d["n"], return_inverse=True)
    q, err, tail = _theta_weights(ns, theta, s_grid)
    y2 = d["y"] ** 2
    sq = mean_estimate(y2 * q[inv], seed)
    quad_error = float(np.mean(y2 * err[inv]))
    total = float(np.sum(y2))
    tail_fraction = float(np.sum(y2 * tail[inv]) / total) if total > 0 else 0.0
    if tail_fraction > 0.5:
        warnings.warn(f"analytic tails carry {tail_fraction:.0%} of the integral", stacklevel=2)
    return InterpolationNorm(sqrt_estimate(sq), sq, quad_error, tail_fraction)


@dataclass(frozen=True)
class SmoothnessQuery:
    functional: object  # Functional or CountPhi
    A: BoxSet
    theta: float
    env: Env
    samples: int = 100_000
    seed: int = 0
    m: int = 1 << 16
    q: int = 2

    def __post_init__(self):
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        if self.q != 2:
            raise ValueError("only q = 2 is supported")


@dataclass
class Verdict:
    status: str  # finite | divergent | inconclusive
    weighted_norm: object  # Estimate or exact float (squared norm for series mode)
    mode: str
    diagnostics: dict = field(default_factory=dict)


def classify(query: SmoothnessQuery, workers: int = 1) -> Verdict:
    """Decide E[Y^2 N(A)^theta] < inf (theta = 1: Y in D_{1,2})."""
    env, A, f = query.env, query.A, query.functional
    model = env.model
    if isinstance(f, CountPhi) or depends_only_on_count(f, env, A):
        res = exact_series_norm(model, f, A, query.theta, query.m, env)
        return Verdict(
            res.scan.status,
            res.value,
            "exact-series",
            {
                "growth_exponent": res.scan.growth_exponent,
                "growth_stderr": res.scan.growth_stderr,
                "trace": res.scan.trace,
            },
        )
    _require_certified(f, A, env)
    d = _draw(model, f, A, query.samples, query.seed, env, workers)
    w = d["y"] ** 2 * (d["n"] + 1) ** query.theta
    est = sqrt_estimate(mean_estimate(w, query.seed))
    n = d["n"]
    top = max(1, int(2 ** math.ceil(math.log2(n.max() + 1))))
    cps = [c for c in (2**k for k in range(int(math.log2(top)) + 1))]
    trunc = [float(np.mean(w * (n <= c))) for c in cps]
    inc = np.diff(trunc)
    total = trunc[-1]
    status = "finite"
    if len(inc) >= 2 and total > 0:
        last, prev = inc[-1], inc[-2]
        if last > 1e-3 * total and last >= 0.5 * prev:
            status = "inconclusive"
    return Verdict(status, est, "monte-carlo", {"trace": list(zip(cps, trunc))})


@dataclass
class FubiniReport:
    interpolation_sq: Estimate
    weighted_sq: Estimate  # E[Y^2 (N(A)+1)^theta] / (2 theta (1 - theta))
    difference: Estimate
    quad_error: float
    z: float

    @property
    def tolerance(self) -> float:
        return self.z * (self.difference.stderr + self.quad_error)

    @property
    def passed(self) -> bool:
        return abs(self.difference.value) <= self.tolerance


def fubini_check(
    model: JumpModel, f: Functional, A: BoxSet, theta: float, samples: int, seed: int, env: Env,
    workers: int = 1, z: float = 3.0, s_grid=None,
) -> FubiniReport:
    """Interpolation norm squared against weighted_norm(theta)^2 / (2 theta (1 - theta)), on common paths."""
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    _require_certified(f, A, env)
    s_grid = DEFAULT_S_GRID if s_grid is None else np.asarray(s_grid, dtype=float)
    d = _draw(model, f, A, samples, seed, env, workers)
    ns, inv = np.unique(d["n"], return_inverse=True)
    q, err, _ = _theta_weights(ns, theta, s_grid)
    y2 = d["y"] ** 2
    lhs = y2 * q[inv]
    rhs = y2 * (d["n"] + 1) ** theta / (2 * theta * (1 - theta))
    return FubiniReport(
        mean_estimate(lhs, seed),
        mean_estimate(rhs, seed),
        mean_estimate(lhs - rhs, seed),
        float(np.mean(y2 * err[inv])),
        z,
    )


@dataclass
class BandReport:
    ratio: Estimate  # interpolation norm / weighted norm
    C: float
    quad_error: float  # on the ratio
    z: float

    @property
    def band(self) -> tuple[float, float]:
        return 1 / self.C, self.C

    @property
    def passed(self) -> bool:
        slack = self.z * (self.ratio.stderr + self.quad_error)
        return 1 / self.C - slack <= self.ratio.value <= self.C + slack


def interpolation_band(
    model: JumpModel, f: Functional, A: BoxSet, theta: float, samples: int, seed: int, env: Env,
    workers: int = 1, z: float = 3.0, s_grid=None,
) -> BandReport:
    """Ratio of the interpolation norm to weighted_norm(theta), banded by
    sqrt2 (sqrt(E N(A)) + 1) / sqrt(theta (1 - theta))."""
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    _require_certified(f, A, env)
    s_grid = DEFAULT_S_GRID if s_grid is None else np.asarray(s_grid, dtype=float)
    lam = expected_count(model, A)
    d = _draw(model, f, A, samples, seed, env, workers)
    ns, inv = np.unique(d["n"], return_inverse=True)
    q, err, _ = _theta_weights(ns, theta, s_grid)
    y2 = d["y"] ** 2
    cols = np.column_stack([y2 * q[inv], y2 * (d["n"] + 1) ** theta])

    def fn(mu):
        return math.sqrt(mu[0] / mu[1])

    def grad(mu):
        r = fn(mu)
        return [1 / (2 * r * mu[1]), -r / (2 * mu[1])]

    ratio = delta_estimate(cols, fn, grad, seed)
    mu = cols.mean(axis=0)
    quad = float(np.mean(y2 * err[inv])) / (2 * math.sqrt(mu[0] * mu[1])) if mu[0] > 0 else 0.0
    C = math.sqrt(2) * (math.sqrt(lam) + 1) / math.sqrt(theta * (1 - theta))
    return BandReport(ratio, C, quad, z)
