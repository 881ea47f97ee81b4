"""Compound Poisson model, box sets and their exact measures.

The jump measure is a finite mixture of atoms and uniform pieces, so every
measure of a box (jump intensity, first and second moments) is a closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class OutOfScopeError(ValueError):
    """Raised for models outside the pure-jump, finite-activity setting."""


class BoxError(ValueError):
    pass


@dataclass(frozen=True)
class NuComponent:
    """One piece of the jump measure: an atom at ``at`` or a uniform on [low, high]."""

    kind: str
    mass: float
    at: float = 0.0
    low: float = 0.0
    high: float = 0.0

    def __post_init__(self):
        if not self.mass > 0 or not math.isfinite(self.mass):
            raise ValueError(f"component mass must be finite and > 0, got {self.mass}")
        if self.kind == "atom":
            if self.at == 0 or not math.isfinite(self.at):
                raise ValueError("atom location must be finite and nonzero")
        elif self.kind == "uniform":
            if not (self.low < self.high) or not (math.isfinite(self.low) and math.isfinite(self.high)):
                raise ValueError("uniform piece needs finite low < high")
            if self.low <= 0 <= self.high:
                raise ValueError("uniform support must exclude 0")
        else:
            raise ValueError(f"unknown component kind {self.kind!r}")

    @classmethod
    def atom(cls, at: float, mass: float) -> NuComponent:
        return cls("atom", float(mass), at=float(at))

    @classmethod
    def uniform(cls, low: float, high: float, mass: float) -> NuComponent:
        return cls("uniform", float(mass), low=float(low), high=float(high))

    def moment(self, lo: float, hi: float, k: int) -> float:
        """Integral of x**k against this component over [lo, hi)."""
        if self.kind == "atom":
            return self.mass * self.at**k if lo <= self.at < hi else 0.0
        a, b = max(lo, self.low), min(hi, self.high)
        if a >= b:
            return 0.0
        density = self.mass / (self.high - self.low)
        return density * (b ** (k + 1) - a ** (k + 1)) / (k + 1)


@dataclass(frozen=True)
class Rect:
    """Half-open rectangle [t1, t2) x ([x1, x2) minus {0})."""

    t1: float
    t2: float
    x1: float
    x2: float

    def __post_init__(self):
        if not (self.t1 < self.t2):
            raise BoxError(f"empty time side [{self.t1}, {self.t2})")
        if not (self.x1 < self.x2):
            raise BoxError(f"empty space side [{self.x1}, {self.x2})")
        if self.t1 < 0:
            raise BoxError("time side must start at t >= 0")
        if self.x1 < 0 < self.x2:
            raise BoxError(
                f"space side [{self.x1}, {self.x2}) straddles 0; split it at 0 into two rectangles"
            )

    def intersect(self, other: Rect) -> Rect | None:
        t1, t2 = max(self.t1, other.t1), min(self.t2, other.t2)
        x1, x2 = max(self.x1, other.x1), min(self.x2, other.x2)
        if t1 < t2 and x1 < x2:
            return Rect(t1, t2, x1, x2)
        return None

    def contains(self, t: float, x: float) -> bool:
        return self.t1 <= t < self.t2 and self.x1 <= x < self.x2 and x != 0


@dataclass(frozen=True)
class BoxSet:
    """A finite disjoint union of rectangles in time x (nonzero) jump size."""

    rects: tuple[Rect, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "rects", tuple(self.rects))
        for i, r in enumerate(self.rects):
            for s in self.rects[i + 1 :]:
                if r.intersect(s) is not None:
                    raise BoxError(f"rectangles {r} and {s} overlap")

    @classmethod
    def of(cls, *sides: Sequence[float]) -> BoxSet:
        """Build from ``(t1, t2, x1, x2)`` tuples."""
        return cls(tuple(Rect(*map(float, s)) for s in sides))

    @classmethod
    def full(cls, horizon: float) -> BoxSet:
        """The whole jump space [0, T) x R_0."""
        return cls.of((0, horizon, -math.inf, 0), (0, horizon, 0, math.inf))

    @property
    def empty(self) -> bool:
        return not self.rects

    def as_array(self) -> np.ndarray:
        """(k, 4) float array of (t1, t2, x1, x2)."""
        if not self.rects:
            return np.zeros((0, 4))
        return np.array([(r.t1, r.t2, r.x1, r.x2) for r in self.rects], dtype=float)

    def contains_point(self, t: float, x: float) -> bool:
        return any(r.contains(t, x) for r in self.rects)

    def union(self, other: BoxSet) -> BoxSet:
        return BoxSet(self.rects + other.difference(self).rects)

    def intersect(self, other: BoxSet) -> BoxSet:
        out = []
        for r in self.rects:
            for s in other.rects:
                c = r.intersect(s)
                if c is not None:
                    out.append(c)
        return BoxSet(tuple(out))

    def _cells(self, *others: BoxSet):
        ts = sorted({v for b in (self, *others) for r in b.rects for v in (r.t1, r.t2)})
        xs = sorted({v for b in (self, *others) for r in b.rects for v in (r.x1, r.x2)} | {0.0})
        for t1, t2 in zip(ts, ts[1:]):
            for x1, x2 in zip(xs, xs[1:]):
                tm = 0.5 * (t1 + t2)
                # midpoint stand-in that also works for infinite sides
                if math.isinf(x1):
                    xm = x2 - 1.0
                elif math.isinf(x2):
                    xm = x1 + 1.0
                else:
                    xm = 0.5 * (x1 + x2)
                yield Rect(t1, t2, x1, x2), tm, xm

    def issubset(self, other: BoxSet) -> bool:
        for _, tm, xm in self._cells(other):
            if self.contains_point(tm, xm) and not other.contains_point(tm, xm):
                return False
        return True

    def difference(self, other: BoxSet) -> BoxSet:
        """Elementary-cell decomposition of self minus other."""
        return BoxSet(
            tuple(
                cell
                for cell, tm, xm in self._cells(other)
                if self.contains_point(tm, xm) and not other.contains_point(tm, xm)
            )
        )

    def complement(self, horizon: float) -> BoxSet:
        return BoxSet.full(horizon).difference(self)

    def isdisjoint(self, other: BoxSet) -> bool:
        return self.intersect(other).empty


@dataclass(frozen=True)
class JumpModel:
    """Compound Poisson process with drift on [0, horizon].

    ``sigma`` is carried for fidelity with the Levy triplet but every
    measure-theoretic operation rejects a nonzero value.
    """

    drift: float
    horizon: float
    components: tuple[NuComponent, ...]
    sigma: float = 0.0
    _masses: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.horizon > 0 or not math.isfinite(self.horizon):
            raise ValueError("horizon T must be finite and > 0")
        if not self.components:
            raise OutOfScopeError("jump measure has no components; total mass must be > 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        object.__setattr__(self, "_masses", np.array([c.mass for c in self.components]))

    @property
    def total_mass(self) -> float:
        """nu(R), the jump intensity per unit time."""
        return float(self._masses.sum())

    @property
    def rate(self) -> float:
        """Expected number of jumps on [0, T)."""
        return self.total_mass * self.horizon

    def require_pure_jump(self):
        if self.sigma != 0:
            raise OutOfScopeError(
                f"sigma = {self.sigma} has a Brownian part; only sigma = 0 is supported"
            )

    def check_box(self, box: BoxSet):
        for r in box.rects:
            if r.t2 > self.horizon:
                raise BoxError(f"rectangle {r} extends past the horizon T = {self.horizon}")

    def nu_moment(self, lo: float, hi: float, k: int = 0) -> float:
        return sum(c.moment(lo, hi, k) for c in self.components)

    def _box_moment(self, box: BoxSet, k: int) -> float:
        self.check_box(box)
        return sum((r.t2 - r.t1) * self.nu_moment(r.x1, r.x2, k) for r in box.rects)


def nu_measure(model: JumpModel, lo: float, hi: float) -> float:
    """nu([lo, hi)); 0 never carries mass."""
    return model.nu_moment(lo, hi, 0)


def expected_count(model: JumpModel, box: BoxSet) -> float:
    """E N(A) = (dt x nu)(A)."""
    return model._box_moment(box, 0)


def compensator(model: JumpModel, box: BoxSet) -> float:
    """Integral of x over A with respect to dt x nu."""
    return model._box_moment(box, 1)


def m_measure(model: JumpModel, box: BoxSet) -> float:
    """Integral of x**2 over A with respect to dt x nu."""
    model.require_pure_jump()
    return model._box_moment(box, 2)


def atom_sizes(model: JumpModel, box: BoxSet) -> list[float]:
    """Distinct atom locations charged inside the space sides of ``box``."""
    return sorted(
        {c.at for c in model.components if c.kind == "atom" for r in box.rects if r.x1 <= c.at < r.x2}
    )


def boxes_pairwise_disjoint(boxes: Iterable[BoxSet]) -> bool:
    boxes = list(boxes)
    return all(a.isdisjoint(b) for i, a in enumerate(boxes) for b in boxes[i + 1 :])
