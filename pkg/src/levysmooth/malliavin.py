"""The Malliavin derivative on the jump space and the identities around it.

For path functionals the derivative in direction (t, x) is the add-one-jump
difference quotient (F(X + x 1_[t,inf)) - F(X)) / x. For chaos grids it is
the annihilation shift D_{t,x} Y = sum_n n I_{n-1}(f~_n(., (t, x))).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import dsl
from .chaos import (
    CoefficientGrid,
    PartitionError,
    cell_M,
    contract,
    distinct_mask,
)
from .dsl import Env, Functional, evaluate_batch
from .estimate import Estimate, mean_estimate
from .model import BoxSet, JumpModel, expected_count, m_measure
from .simulate import (
    ROLE_EXTRA,
    ROLE_PATHS,
    ROLE_POINTS,
    JumpPath,
    PathBatch,
    count_in,
    make_rng,
    map_blocks,
    sample_batch,
)


@dataclass(frozen=True)
class DerivativePoint:
    t: float
    x: float

    def __post_init__(self):
        if self.x == 0:
            raise ValueError("derivative direction x must be nonzero")
        if self.t < 0:
            raise ValueError("derivative time must be >= 0")


def sample_points(model: JumpModel, A: BoxSet, rng: np.random.Generator, n: int, power: int):
    """Draw (t, x) from x**power (dt x nu) restricted to A, normalized.

    power=0 gives (dt x nu)|_A, power=2 gives the measure m restricted to A.
    Returns (t, x, total_mass).
    """
    pieces, weights = [], []
    for r in A.rects:
        for c in model.components:
            w = (r.t2 - r.t1) * c.moment(r.x1, r.x2, power)
            if w > 0:
                pieces.append((r, c))
                weights.append(w)
    if not pieces:
        raise ValueError("A carries no mass under the sampling measure")
    weights = np.array(weights)
    total = float(weights.sum())
    which = rng.choice(len(pieces), size=n, p=weights / total)
    u_t, u_x = rng.random(n), rng.random(n)
    t, x = np.empty(n), np.empty(n)
    for k, (r, c) in enumerate(pieces):
        sel = which == k
        t[sel] = r.t1 + (r.t2 - r.t1) * u_t[sel]
        if c.kind == "atom":
            x[sel] = c.at
            continue
        a, b = max(r.x1, c.low), min(r.x2, c.high)
        if power == 0:
            x[sel] = a + (b - a) * u_x[sel]
        else:
            # inverse CDF of a density proportional to x**2 on [a, b)
            x[sel] = np.cbrt(a**3 + u_x[sel] * (b**3 - a**3))
    return t, x, total


def quotients(f: Functional, batch: PathBatch, t, x, env: Env) -> np.ndarray:
    """(F(path_i + jump (t_i, x_i)) - F(path_i)) / x_i for every path."""
    x = np.broadcast_to(np.asarray(x, dtype=float), (len(batch),))
    base = evaluate_batch(f, batch, env)
    bumped = evaluate_batch(f, batch.with_jumps(t, x), env)
    return (bumped - base) / x


def derivative_quotient(f: Functional, path: JumpPath, p: DerivativePoint, env: Env) -> float:
    return float(quotients(f, path.batch(), [p.t], [p.x], env)[0])


def derivative_chaos(model: JumpModel, grid: CoefficientGrid, path: JumpPath, p: DerivativePoint) -> float:
    """sum_n n I_{n-1}(f~_n(., cell of (t, x))); 0 outside the partition."""
    if not grid.symmetric:
        raise ValueError("symmetrize the grid before differentiating")
    c = grid.partition.cell_of(p.t, p.x)
    if c is None:
        return 0.0
    M = cell_M(model, path, grid.partition)
    k = len(grid.partition)
    total = 0.0
    for n in range(1, len(grid.tensors)):
        sliced = grid.tensors[n][..., c]
        mask = distinct_mask(k, n - 1)
        idx = np.indices((k,) * (n - 1))
        for axis in range(n - 1):
            mask = mask & (idx[axis] != c)
        total += n * float(contract(sliced * mask, M)[0])
    return total


def derivative_norm(
    model: JumpModel, f: Functional, A: BoxSet, samples: int, seed: int, env: Env, workers: int = 1
) -> Estimate:
    """Estimate of the squared norm  int_A E[(D_{t,x} Y)^2] m(dt, dx).

    (t, x) is drawn from m|_A normalized, independently of the path, and each
    draw is weighted by m(A).
    """
    mA = m_measure(model, A)
    if not mA > 0:
        raise ValueError("A has zero m-measure")

    def block(b, size):
        batch = sample_batch(model, make_rng(seed, b, ROLE_PATHS), size)
        t, x, _ = sample_points(model, A, make_rng(seed, b, ROLE_POINTS), size, power=2)
        return mA * quotients(f, batch, t, x, env) ** 2

    return mean_estimate(map_blocks(block, samples, workers), seed)


def mecke_check(
    model: JumpModel, f: Functional, A: BoxSet, samples: int, seed: int, env: Env, workers: int = 1
) -> tuple[Estimate, Estimate]:
    """Both sides of  int_A E[F(X + x 1_[t,inf))] dt nu(dx) = E[N(A) F(X)]."""
    lam = expected_count(model, A)

    def lhs_block(b, size):
        batch = sample_batch(model, make_rng(seed, b, ROLE_PATHS), size)
        t, x, _ = sample_points(model, A, make_rng(seed, b, ROLE_POINTS), size, power=0)
        return lam * evaluate_batch(f, batch.with_jumps(t, x), env)

    def rhs_block(b, size):
        batch = sample_batch(model, make_rng(seed, b, ROLE_EXTRA), size)
        values = evaluate_batch(f, batch, env)
        if np.any(values < 0):
            warnings.warn(f"{f} takes negative values; the identity needs F >= 0", stacklevel=3)
        return count_in(batch, A) * values

    lhs = map_blocks(lhs_block, samples, workers)
    rhs = map_blocks(rhs_block, samples, workers)
    return mean_estimate(lhs, seed), mean_estimate(rhs, seed)


def _quotient_scale(before: float, after: float, x: float, *values: float) -> float:
    """Magnitude against which a difference quotient's rounding is measured."""
    return max((abs(before) + abs(after)) / abs(x), *(abs(v) for v in values))


def product_rule_check(f: Functional, g: Functional, path: JumpPath, p: DerivativePoint, env: Env):
    """D(YZ) against Y DZ + Z DY + x DY DZ, all derivatives as quotients.

    Returns (lhs, rhs, scale); rounding makes |lhs - rhs| a small multiple of
    machine epsilon times ``scale``.
    """
    fg = dsl.BinOp("*", f.root, g.root)
    lhs = derivative_quotient(Functional(fg), path, p, env)
    y, z = dsl.evaluate(f, path, env), dsl.evaluate(g, path, env)
    dy, dz = derivative_quotient(f, path, p, env), derivative_quotient(g, path, p, env)
    rhs = y * dz + z * dy + p.x * dy * dz
    bumped = (y + p.x * dy) * (z + p.x * dz)
    return lhs, rhs, _quotient_scale(y * z, bumped, p.x, lhs, rhs, y * dz, z * dy)


@dataclass(frozen=True)
class Lipschitz:
    """A Lipschitz map from the language: clamp(lo, hi), min(c), max(c) or abs."""

    kind: str
    lo: float = 0.0
    hi: float = 0.0

    def __post_init__(self):
        if self.kind not in ("clamp", "min", "max", "abs"):
            raise ValueError(f"not a Lipschitz primitive: {self.kind!r}")
        if self.kind == "clamp" and not self.lo <= self.hi:
            raise ValueError("clamp needs lo <= hi")

    def wrap(self, node: dsl.Node) -> dsl.Node:
        if self.kind == "clamp":
            return dsl.Call("clamp", (node, dsl.Num(self.lo), dsl.Num(self.hi)))
        if self.kind in ("min", "max"):
            return dsl.Call(self.kind, (node, dsl.Num(self.lo)))
        return dsl.Call("abs", (node,))

    def __call__(self, v):
        if self.kind == "clamp":
            return np.minimum(np.maximum(v, self.lo), self.hi)
        if self.kind == "min":
            return np.minimum(v, self.lo)
        if self.kind == "max":
            return np.maximum(v, self.lo)
        return np.abs(v)


def chain_rule_check(g: Lipschitz, f: Functional, path: JumpPath, p: DerivativePoint, env: Env):
    """D g(Y) against (g(Y + x DY) - g(Y)) / x; returns (lhs, rhs, scale)."""
    lhs = derivative_quotient(Functional(g.wrap(f.root)), path, p, env)
    y = dsl.evaluate(f, path, env)
    dy = derivative_quotient(f, path, p, env)
    before, after = float(g(y)), float(g(y + p.x * dy))
    return lhs, (after - before) / p.x, _quotient_scale(before, after, p.x, lhs)


def conditional_projection(grid: CoefficientGrid, A: BoxSet) -> CoefficientGrid:
    """E[Y | F_A]: drop every entry whose index tuple leaves A."""
    inside = []
    for k, cell in enumerate(grid.partition.cells):
        if cell.issubset(A):
            inside.append(True)
        elif cell.isdisjoint(A):
            inside.append(False)
        else:
            raise PartitionError(f"cell {k} straddles A; refine the partition along A's edges")
    keep = np.array(inside)
    tensors = []
    for n, t in enumerate(grid.tensors):
        mask = np.ones(t.shape, dtype=bool)
        for axis in range(n):
            shape = [1] * n
            shape[axis] = len(keep)
            mask = mask & keep.reshape(shape)
        tensors.append(np.where(mask, t, 0.0))
    return CoefficientGrid(grid.partition, tuple(tensors), grid.symmetric)


def conditional_mc(
    model: JumpModel, f: Functional, A: BoxSet, path: JumpPath, resamples: int, seed: int, env: Env
) -> float:
    """E[Y | F_A] at ``path``: keep its jumps in A, resample the rest."""
    if dsl.measurability(f, A, env).certified:
        return dsl.evaluate(f, path, env)
    fresh = sample_batch(model, make_rng(seed, 0, ROLE_EXTRA), resamples).restrict(A, inside=False)
    kept = path.batch().restrict(A)
    k = len(kept.times)
    fixed = PathBatch(
        np.arange(resamples + 1, dtype=np.int64) * k, np.tile(kept.times, resamples), np.tile(kept.sizes, resamples)
    )
    return float(np.mean(evaluate_batch(f, PathBatch.merge(fixed, fresh), env)))

