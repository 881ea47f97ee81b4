"""Step-function chaos: the random measure M, multiple integrals, isometry."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .estimate import Estimate, mean_estimate
from .model import BoxSet, JumpModel, atom_sizes, compensator, m_measure
from .simulate import ROLE_PATHS, JumpPath, PathBatch, make_rng, map_blocks, sample_batch


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Partition:
    cells: tuple[BoxSet, ...]
    _rects: np.ndarray = field(init=False, repr=False, compare=False)
    _owner: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cells = tuple(self.cells)
        object.__setattr__(self, "cells", cells)
        for i, a in enumerate(cells):
            for j in range(i + 1, len(cells)):
                if not a.isdisjoint(cells[j]):
                    raise PartitionError(f"cells {i} and {j} overlap")
        rects = [c.as_array() for c in cells]
        owner = [k for k, c in enumerate(cells) for _ in c.rects]
        object.__setattr__(self, "_rects", np.concatenate(rects) if rects else np.zeros((0, 4)))
        object.__setattr__(self, "_owner", np.array(owner, dtype=np.int64))

    def __len__(self):
        return len(self.cells)

    def masses(self, model: JumpModel) -> np.ndarray:
        return np.array([m_measure(model, c) for c in self.cells])

    def null_cells(self, model: JumpModel) -> list[int]:
        return [k for k, m in enumerate(self.masses(model)) if m == 0]

    def cell_of(self, t: float, x: float) -> int | None:
        for k, c in enumerate(self.cells):
            if c.contains_point(t, x):
                return k
        return None

    def support(self) -> BoxSet:
        return BoxSet(tuple(r for c in self.cells for r in c.rects))


@dataclass(frozen=True)
class CoefficientGrid:
    """Tensors f_0..f_nmax, f_n indexed by n-tuples of partition cells."""

    partition: Partition
    tensors: tuple[np.ndarray, ...]
    symmetric: bool = False

    def __post_init__(self):
        k = len(self.partition)
        fixed = []
        for n, t in enumerate(self.tensors):
            t = np.array(t, dtype=float)
            if t.shape != (k,) * n:
                raise ValueError(f"f_{n} must have shape {(k,) * n}, got {t.shape}")
            t.setflags(write=False)
            fixed.append(t)
        object.__setattr__(self, "tensors", tuple(fixed))

    @property
    def order(self) -> int:
        return len(self.tensors) - 1

    @classmethod
    def zeros(cls, partition: Partition, n_max: int = 3) -> CoefficientGrid:
        return cls(partition, tuple(np.zeros((len(partition),) * n) for n in range(n_max + 1)))

    def with_tensor(self, n: int, tensor) -> CoefficientGrid:
        tensors = list(self.tensors)
        while len(tensors) <= n:
            tensors.append(np.zeros((len(self.partition),) * len(tensors)))
        tensors[n] = np.asarray(tensor, dtype=float)
        return CoefficientGrid(self.partition, tuple(tensors))

    def homogeneous(self, n: int) -> CoefficientGrid:
        """Only the order-``n`` part."""
        return CoefficientGrid.zeros(self.partition, 0).with_tensor(n, self.tensors[n])


def distinct_mask(k: int, n: int) -> np.ndarray:
    """Boolean (k,)*n array, True where all n indices differ."""
    if n == 0:
        return np.array(True)
    idx = np.indices((k,) * n)
    mask = np.ones((k,) * n, dtype=bool)
    for a, b in itertools.combinations(range(n), 2):
        mask &= idx[a] != idx[b]
    return mask


def symmetrize_tensor(t: np.ndarray) -> np.ndarray:
    n = t.ndim
    if n < 2:
        return np.array(t, dtype=float)
    perms = list(itertools.permutations(range(n)))
    return sum(np.transpose(t, p) for p in perms) / len(perms)


def symmetrize(grid: CoefficientGrid) -> CoefficientGrid:
    return CoefficientGrid(grid.partition, tuple(symmetrize_tensor(t) for t in grid.tensors), True)


def _as_batch(path) -> PathBatch:
    return path.batch() if isinstance(path, JumpPath) else path


def cell_M(model: JumpModel, path, partition: Partition) -> np.ndarray:
    """(n_paths, n_cells) values of M on each cell."""
    model.require_pure_jump()
    batch = _as_batch(path)
    sums = kernels.box_sums(
        batch.offsets, batch.times, batch.sizes, partition._rects, partition._owner, len(partition), kernels.G_X
    )
    comp = np.array([compensator(model, c) for c in partition.cells])
    return sums - comp


def eval_M(model: JumpModel, path, B: BoxSet):
    """Sum of jump sizes in B minus the compensator; float for a path, array for a batch."""
    out = cell_M(model, path, Partition((B,)))[:, 0]
    return float(out[0]) if isinstance(path, JumpPath) else out


def multiple_integral(model: JumpModel, path, cells, coefficient: float = 1.0):
    """coefficient * M(B_1)...M(B_n) for pairwise disjoint cells."""
    cells = list(cells)
    for i, a in enumerate(cells):
        for b in cells[i + 1 :]:
            if a == b or not a.isdisjoint(b):
                raise PartitionError("multiple integral needs pairwise disjoint cells")
    if not cells:
        return coefficient if isinstance(path, JumpPath) else np.full(len(path), float(coefficient))
    M = cell_M(model, path, Partition(tuple(cells)))
    out = coefficient * np.prod(M, axis=1)
    return float(out[0]) if isinstance(path, JumpPath) else out


def contract(tensor: np.ndarray, M: np.ndarray) -> np.ndarray:
    """sum_{i1..in} tensor[i1..in] * M[p, i1]...M[p, in] for every path p."""
    n_paths = M.shape[0]
    if tensor.ndim == 0:
        return np.full(n_paths, float(tensor))
    cur = np.einsum("pi,i...->p...", M, tensor)
    while cur.ndim > 1:
        cur = np.einsum("pi,pi...->p...", M, cur)
    return cur


def chaos_values(grid: CoefficientGrid, M: np.ndarray) -> np.ndarray:
    k = len(grid.partition)
    total = np.zeros(M.shape[0])
    for n, t in enumerate(grid.tensors):
        total += contract(t * distinct_mask(k, n), M)
    return total


def chaos_eval(model: JumpModel, path, grid: CoefficientGrid):
    """Sum over n of I_n(f_n); repeated-cell entries are ignored."""
    out = chaos_values(grid, cell_M(model, path, grid.partition))
    return float(out[0]) if isinstance(path, JumpPath) else out


def grid_inner_product(model: JumpModel, partition: Partition, f: np.ndarray, g: np.ndarray) -> float:
    """E[I_n(f) I_k(g)] = n! (f~, g~) in L2(m^n) when n == k, else 0."""
    f, g = np.asarray(f, dtype=float), np.asarray(g, dtype=float)
    k = len(partition)
    for t in (f, g):
        if t.shape != (k,) * t.ndim:
            raise PartitionError(f"tensor shape {t.shape} does not match a partition of {k} cells")
    if f.ndim != g.ndim:
        return 0.0
    n = f.ndim
    if n == 0:
        return float(f * g)
    w = partition.masses(model)
    weight = np.ones((k,) * n)
    for axis in range(n):
        shape = [1] * n
        shape[axis] = k
        weight = weight * w.reshape(shape)
    prod = symmetrize_tensor(f) * symmetrize_tensor(g) * weight * distinct_mask(k, n)
    return math.factorial(n) * float(prod.sum())


def grid_norm_sq(model: JumpModel, grid: CoefficientGrid) -> float:
    """Exact E[Y^2] for Y = chaos_eval(grid)."""
    return sum(grid_inner_product(model, grid.partition, t, t) for t in grid.tensors)


def isometry_check(
    model: JumpModel, grid: CoefficientGrid, samples: int, seed: int, workers: int = 1
) -> tuple[Estimate, float]:
    def block(b, size):
        batch = sample_batch(model, make_rng(seed, b, ROLE_PATHS), size)
        return chaos_eval(model, batch, grid) ** 2

    return mean_estimate(map_blocks(block, samples, workers), seed), grid_norm_sq(model, grid)


def cross_check(
    model: JumpModel, f: CoefficientGrid, g: CoefficientGrid, samples: int, seed: int, workers: int = 1
) -> tuple[Estimate, float]:
    """MC E[F G] against sum_n n! (f~_n, g~_n); grids share one partition."""
    if f.partition is not g.partition and f.partition.cells != g.partition.cells:
        raise PartitionError("grids must share a partition")

    def block(b, size):
        batch = sample_batch(model, make_rng(seed, b, ROLE_PATHS), size)
        M = cell_M(model, batch, f.partition)
        return chaos_values(f, M) * chaos_values(g, M)

    orders = range(min(len(f.tensors), len(g.tensors)))
    exact = sum(grid_inner_product(model, f.partition, f.tensors[n], g.tensors[n]) for n in orders)
    return mean_estimate(map_blocks(block, samples, workers), seed), exact


def covariance_check(
    model: JumpModel, B1: BoxSet, B2: BoxSet, samples: int, seed: int, workers: int = 1
) -> tuple[Estimate, float]:
    """MC E[M(B1) M(B2)] against m(B1 & B2)."""
    model.check_box(B1)
    model.check_box(B2)

    def block(b, size):
        batch = sample_batch(model, make_rng(seed, b, ROLE_PATHS), size)
        return eval_M(model, batch, B1) * eval_M(model, batch, B2)

    common = B1.intersect(B2)
    exact = m_measure(model, common) if common.rects else 0.0
    return mean_estimate(map_blocks(block, samples, workers), seed), exact


def h_tensor(model: JumpModel, partition: Partition, A: BoxSet) -> np.ndarray:
    """Step version of h(t, x) = 1_A(t, x) / x, so that I_1(h) = N(A) - E N(A).

    Each cell inside A must carry a single atom of the jump measure.
    """
    h = np.zeros(len(partition))
    for k, cell in enumerate(partition.cells):
        if cell.isdisjoint(A):
            continue
        if not cell.issubset(A):
            raise PartitionError(f"cell {k} straddles A; refine the partition")
        if any(c.kind == "uniform" and c.moment(r.x1, r.x2, 0) > 0 for c in model.components for r in cell.rects):
            raise PartitionError(f"cell {k} charges a continuous piece; 1/x is not a step function there")
        sizes = atom_sizes(model, cell)
        if len(sizes) > 1:
            raise PartitionError(f"cell {k} holds several atoms; refine the partition")
        if sizes:
            h[k] = 1.0 / sizes[0]
    return h


# --- record format --------------------------------------------------------


def dump_grid(grid: CoefficientGrid, delimiter: str = ",") -> str:
    """One ``order,cells,value`` record per nonzero entry; cells joined by ';'."""
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(["order", "cells", "value"])
    for n, t in enumerate(grid.tensors):
        for idx in zip(*np.nonzero(t)) if n else ([()] if t != 0 else []):
            w.writerow([n, ";".join(str(int(i)) for i in idx), repr(float(t[idx]))])
    return buf.getvalue()


def load_grid(text: str, partition: Partition, delimiter: str = ",") -> CoefficientGrid:
    rows = [r for r in csv.reader(io.StringIO(text), delimiter=delimiter) if r]
    if rows and rows[0] == ["order", "cells", "value"]:
        rows = rows[1:]
    n_max = max((int(r[0]) for r in rows), default=0)
    k = len(partition)
    tensors = [np.zeros((k,) * n) for n in range(n_max + 1)]
    for order, cells, value in rows:
        n = int(order)
        idx = tuple(int(c) for c in cells.split(";")) if cells else ()
        if len(idx) != n:
            raise ValueError(f"record of order {n} lists {len(idx)} cells")
        tensors[n][idx] = float(value)
    return CoefficientGrid(partition, tuple(tensors))
