"""The Young pair behind the L2 log+ L2 inclusion into D_{1,2}, and the
functional showing the inclusion is strict."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dsl import Env, Functional, evaluate_batch, lnplus
from .estimate import Estimate, mean_estimate
from .model import BoxSet, JumpModel, expected_count
from .series import CountPhi, SeriesScan, log_factorials, poisson_log_pmf, scan_terms
from .simulate import ROLE_PATHS, make_rng, map_blocks, sample_batch
from .smoothness import _as_phi


def young_phi(x):
    """Phi(x) = (x+1) ln(x+1) - x."""
    x = np.asarray(x, dtype=float)
    return (x + 1) * np.log1p(x) - x


def young_phi_star(y):
    """Phi*(y) = e^y - y - 1."""
    y = np.asarray(y, dtype=float)
    return np.expm1(y) - y


def young_phi_prime(y):
    return np.log1p(np.asarray(y, dtype=float))


def young_check(x: float, y: float) -> tuple[float, float]:
    """(x y, Phi(x) + Phi*(y)); the first never exceeds the second."""
    if x < 0 or y < 0:
        raise ValueError("Young inequality is stated for x, y >= 0")
    return x * y, float(young_phi(x) + young_phi_star(y))


def phi_star_moment(lam: float) -> tuple[float, float]:
    """(exact E Phi*(N), the looser bound e^{(e-1) lam} - lam) for N ~ Poisson(lam)."""
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    g = math.exp((math.e - 1) * lam)
    return g - lam - 1, g - lam


def counterexample_log_sq(n, lam: float, a: float, logfact: np.ndarray | None = None) -> np.ndarray:
    """ln f(n)^2 = lam + ln n! - n ln lam - 2 ln n - a ln ln n;  -inf at n = 0, 1."""
    if not 1 < a <= 2:
        raise ValueError("a must lie in (1, 2]")
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    n = np.atleast_1d(np.asarray(n, dtype=np.int64))
    lf = log_factorials(int(n.max())) if logfact is None else logfact
    out = np.full(n.shape, -np.inf)
    big = n >= 2
    nb = n[big].astype(float)
    out[big] = lam + lf[n[big]] - nb * math.log(lam) - 2 * np.log(nb) - a * np.log(np.log(nb))
    return out


def counterexample_f(n: int, lam: float, a: float) -> float:
    return float(np.exp(0.5 * counterexample_log_sq(np.array([n]), lam, a)[0]))


def counterexample_phi(lam: float, a: float) -> CountPhi:
    phi = CountPhi(lambda n: counterexample_log_sq(n, lam, a), f"f[lam={lam}, a={a}]")
    phi.params = (lam, a)
    return phi


@dataclass
class DivergenceCertificate:
    """Per-term comparison a_n >= c b_n with sum b_n divergent."""

    certified: bool
    n0: int
    constant: float
    checked_up_to: int
    comparison: str


@dataclass
class L2LogSeries:
    scan: SeriesScan
    certificate: DivergenceCertificate | None

    @property
    def status(self) -> str:
        if self.certificate is not None and self.certificate.certified:
            return "divergent"
        return self.scan.status


def l2log_series_terms(phi: CountPhi, lam: float, m: int) -> np.ndarray:
    """phi(n)^2 ln+ phi(n)^2 P(N = n) for n = 0..m."""
    n = np.arange(m + 1)
    ls = phi.log_sq(n)
    with np.errstate(over="ignore", invalid="ignore"):
        terms = np.exp(ls + poisson_log_pmf(lam, m)) * np.maximum(ls, 0.0)
    return np.where(np.isfinite(ls), terms, 0.0)


def certify_counterexample_divergence(lam: float, a: float, m: int, constant: float = 0.5) -> DivergenceCertificate:
    """Certify sum f(n)^2 ln+ f(n)^2 P(N=n) = inf.

    Term n equals ln f(n)^2 / (n^2 ln^a n). From ln n! >= n ln n - n + 1,
    ln f(n)^2 >= L(n) := lam + n ln n - n + 1 - n ln lam - 2 ln n - a ln ln n.
    Find n0 with L(n) >= constant * n ln n for all scanned n >= n0; then
    term n >= constant / (n ln^(a-1) n), whose sum diverges for a <= 2
    (Cauchy condensation gives sum_k 1 / (k ln 2)^(a-1)). The exact terms are
    checked against the same bound.
    """
    n = np.arange(2, m + 1, dtype=float)
    ln_n = np.log(n)
    lower = lam + n * ln_n - n + 1 - n * math.log(lam) - 2 * ln_n - a * np.log(ln_n)
    ok = lower >= constant * n * ln_n
    bad = np.nonzero(~ok)[0]
    n0 = int(n[bad[-1]] + 1) if len(bad) else 2
    exact = counterexample_log_sq(np.arange(m + 1), lam, a)[2:]
    comparison = constant / (n * ln_n ** (a - 1))
    terms = np.maximum(exact, 0.0) / (n**2 * ln_n**a)
    tail = n >= n0
    holds = bool(np.all(terms[tail] >= comparison[tail]) and np.all(exact[tail] >= lower[tail]))
    certified = holds and n0 < m // 2 and a - 1 <= 1
    return DivergenceCertificate(certified, n0, constant, m, f"{constant} / (n ln^{a - 1:g} n)")


def l2log_norm(
    model: JumpModel,
    f,
    samples: int = 100_000,
    seed: int = 0,
    env: Env | None = None,
    A: BoxSet | None = None,
    m: int = 1 << 16,
    workers: int = 1,
):
    """E[Y^2 ln+ Y^2]: a Monte Carlo Estimate, or an L2LogSeries when Y = phi(N(A))."""
    if A is not None:
        try:
            phi = _as_phi(f, A, env)
        except ValueError:
            phi = None
        if phi is not None:
            lam = expected_count(model, A)
            scan = scan_terms(l2log_series_terms(phi, lam, m))
            cert = None
            params = getattr(phi, "params", None)
            if params is not None and math.isclose(params[0], lam, rel_tol=1e-12):
                cert = certify_counterexample_divergence(params[0], params[1], m)
            return L2LogSeries(scan, cert)

    def block(b, size):
        batch = sample_batch(model, make_rng(seed, b, ROLE_PATHS), size)
        y2 = evaluate_batch(f, batch, env) ** 2
        return y2 * lnplus(y2)

    return mean_estimate(map_blocks(block, samples, workers), seed)
