"""Sampling the Poisson random measure of a compound Poisson model.

Randomness comes from Philox, a counter-based generator: a stream is keyed
by (master seed, stream key) and draws are addressed by the counter, so any
block of paths can be regenerated independently of how work is split.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .model import BoxSet, JumpModel

BLOCK_SIZE = 8192

# sub-stream roles inside an estimator block
ROLE_PATHS = 0
ROLE_POINTS = 1
ROLE_EXTRA = 2


@dataclass(frozen=True)
class SeedSpec:
    seed: int
    stream: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("master seed must be a 64-bit unsigned integer")
        if self.stream < 0:
            raise ValueError("stream index must be >= 0")


def make_rng(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class JumpPath:
    """One realization: jump times in [0, T) sorted ascending, nonzero sizes."""

    times: np.ndarray
    sizes: np.ndarray
    seed: SeedSpec | None = field(default=None, compare=False)

    def __post_init__(self):
        t, x = _readonly(self.times), _readonly(self.sizes)
        if t.shape != x.shape or t.ndim != 1:
            raise ValueError("times and sizes must be 1-d arrays of equal length")
        if np.any(x == 0):
            raise ValueError("jump sizes must be nonzero")
        if np.any(np.diff(t) < 0):
            order = np.argsort(t, kind="stable")
            t, x = _readonly(t[order]), _readonly(x[order])
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "sizes", x)

    @classmethod
    def of(cls, jumps: Iterable[tuple[float, float]]) -> JumpPath:
        jumps = list(jumps)
        return cls([j[0] for j in jumps], [j[1] for j in jumps])

    def __len__(self):
        return len(self.times)

    def __eq__(self, other):
        if not isinstance(other, JumpPath):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(self.sizes, other.sizes)

    def __hash__(self):
        return hash((self.times.tobytes(), self.sizes.tobytes()))

    @property
    def jumps(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.sizes.tolist()))

    def batch(self) -> PathBatch:
        return PathBatch(np.array([0, len(self.times)]), self.times, self.sizes)


@dataclass(frozen=True)
class PathBatch:
    """Many paths stored flat; path ``i`` is ``times[offsets[i]:offsets[i+1]]``."""

    offsets: np.ndarray
    times: np.ndarray
    sizes: np.ndarray

    @classmethod
    def from_paths(cls, paths: Sequence[JumpPath]) -> PathBatch:
        lengths = [len(p) for p in paths]
        offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        t = np.concatenate([p.times for p in paths]) if paths else np.zeros(0)
        x = np.concatenate([p.sizes for p in paths]) if paths else np.zeros(0)
        return cls(offsets, t, x)

    def __len__(self):
        return len(self.offsets) - 1

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def path(self, i: int) -> JumpPath:
        a, b = self.offsets[i], self.offsets[i + 1]
        return JumpPath(self.times[a:b], self.sizes[a:b])

    def paths(self) -> list[JumpPath]:
        return [self.path(i) for i in range(len(self))]

    def with_jumps(self, t: np.ndarray, x: np.ndarray) -> PathBatch:
        """Copy with jump (t[i], x[i]) added to path i."""
        t = np.broadcast_to(np.asarray(t, dtype=float), (len(self),))
        x = np.broadcast_to(np.asarray(x, dtype=float), (len(self),))
        if np.any(x == 0):
            raise ValueError("added jump size must be nonzero")
        return PathBatch(*kernels.insert_jumps(self.offsets, self.times, self.sizes, t, x))

    def restrict(self, box: BoxSet, inside: bool = True) -> PathBatch:
        """Keep only the jumps inside (or outside) ``box``."""
        mask = np.zeros(len(self.times), dtype=bool)
        for r in box.rects:
            mask |= (
                (self.times >= r.t1) & (self.times < r.t2) & (self.sizes >= r.x1) & (self.sizes < r.x2)
            )
        if not inside:
            mask = ~mask
        path_of = np.repeat(np.arange(len(self)), self.counts)
        kept = np.bincount(path_of[mask], minlength=len(self))
        offsets = np.concatenate([[0], np.cumsum(kept)]).astype(np.int64)
        return PathBatch(offsets, self.times[mask], self.sizes[mask])

    @staticmethod
    def merge(a: PathBatch, b: PathBatch) -> PathBatch:
        """Superpose two batches of equal length path by path (sorted by time)."""
        if len(a) != len(b):
            raise ValueError("batches differ in length")
        path_a = np.repeat(np.arange(len(a)), a.counts)
        path_b = np.repeat(np.arange(len(b)), b.counts)
        path = np.concatenate([path_a, path_b])
        t = np.concatenate([a.times, b.times])
        x = np.concatenate([a.sizes, b.sizes])
        order = np.lexsort((t, path))
        offsets = np.concatenate([[0], np.cumsum(a.counts + b.counts)]).astype(np.int64)
        return PathBatch(offsets, t[order], x[order])


def _draw_sizes(model: JumpModel, rng: np.random.Generator, n: int) -> np.ndarray:
    comps = model.components
    p = model._masses / model._masses.sum()
    which = rng.choice(len(comps), size=n, p=p) if len(comps) > 1 else np.zeros(n, dtype=int)
    u = rng.random(n)
    x = np.empty(n)
    for k, c in enumerate(comps):
        sel = which == k
        if c.kind == "atom":
            x[sel] = c.at
        else:
            x[sel] = c.low + (c.high - c.low) * u[sel]
    # a uniform draw never hits 0 because the support excludes it
    return x


def sample_batch(model: JumpModel, rng: np.random.Generator, n_paths: int) -> PathBatch:
    """Total count first, then i.i.d. uniform times and i.i.d. sizes."""
    model.require_pure_jump()
    counts = rng.poisson(model.rate, size=n_paths)
    total = int(counts.sum())
    t = rng.uniform(0.0, model.horizon, size=total)
    x = _draw_sizes(model, rng, total)
    path_of = np.repeat(np.arange(n_paths), counts)
    order = np.lexsort((t, path_of))
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return PathBatch(offsets, t[order], x[order])


def sample_path(model: JumpModel, seed: SeedSpec) -> JumpPath:
    batch = sample_batch(model, make_rng(seed.seed, seed.stream), 1)
    return JumpPath(batch.times, batch.sizes, seed=seed)


def sample_paths(model: JumpModel, seed: int, n_paths: int, stream: int = 0) -> PathBatch:
    """``n_paths`` paths from one stream (not split into blocks)."""
    return sample_batch(model, make_rng(seed, stream), n_paths)


def count_in(path: JumpPath | PathBatch, box: BoxSet):
    """N(A) for one path (int) or every path of a batch (int array)."""
    batch = path.batch() if isinstance(path, JumpPath) else path
    rects = box.as_array()
    sums = kernels.box_sums(batch.offsets, batch.times, batch.sizes, rects, np.zeros(len(rects), dtype=np.int64), 1)
    counts = np.rint(sums[:, 0]).astype(np.int64)
    return int(counts[0]) if isinstance(path, JumpPath) else counts


def add_jump(path: JumpPath, t: float, x: float) -> JumpPath:
    if x == 0:
        raise ValueError("cannot add a jump of size 0")
    if t < 0:
        raise ValueError("jump time must be >= 0")
    i = int(np.searchsorted(path.times, t, side="right"))
    return JumpPath(np.insert(path.times, i, t), np.insert(path.sizes, i, x), seed=path.seed)


def terminal_value(model: JumpModel, path: JumpPath | PathBatch):
    """X_T = drift * T + sum of jump sizes."""
    if isinstance(path, JumpPath):
        return model.drift * model.horizon + float(np.sum(path.sizes))
    n = len(path)
    path_of = np.repeat(np.arange(n), path.counts)
    return model.drift * model.horizon + np.bincount(path_of, weights=path.sizes, minlength=n)


# --- block-parallel Monte Carlo driver -------------------------------------


def blocks(n_samples: int, block_size: int = BLOCK_SIZE) -> list[tuple[int, int]]:
    """Fixed (block index, size) layout; independent of the worker count."""
    if n_samples <= 0:
        raise ValueError("sample count must be positive")
    full, rest = divmod(n_samples, block_size)
    out = [(b, block_size) for b in range(full)]
    if rest:
        out.append((full, rest))
    return out


def map_blocks(
    fn: Callable[[int, int], np.ndarray], n_samples: int, workers: int = 1
) -> np.ndarray:
    """Apply ``fn(block, size)`` to every block and concatenate in block order."""
    layout = blocks(n_samples)
    if workers <= 1 or len(layout) == 1:
        parts = [fn(b, s) for b, s in layout]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda bs: fn(*bs), layout))
    return np.concatenate(parts, axis=0)


# --- dump format ----------------------------------------------------------


def dump_paths(paths: Sequence[JumpPath], streams: Sequence[int] | None = None, delimiter: str = ",") -> str:
    """One ``stream,t,x`` record per jump, preceded by a header line."""
    streams = list(range(len(paths))) if streams is None else list(streams)
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(["stream", "t", "x"])
    for s, p in zip(streams, paths):
        for t, x in p.jumps:
            w.writerow([s, repr(t), repr(x)])
    return buf.getvalue()


def load_paths(text: str, delimiter: str = ",") -> dict[int, JumpPath]:
    rows = list(csv.reader(io.StringIO(text), delimiter=delimiter))
    if rows and rows[0] == ["stream", "t", "x"]:
        rows = rows[1:]
    grouped: dict[int, list[tuple[float, float]]] = {}
    for row in rows:
        if not row:
            continue
        s, t, x = row
        grouped.setdefault(int(s), []).append((float(t), float(x)))
    return {s: JumpPath.of(j) for s, j in grouped.items()}
