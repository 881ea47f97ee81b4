"""Hot loops over batches of jump paths.

A batch of paths is stored flat: ``offsets`` (length n_paths + 1) delimits
each path's slice of the ``times`` and ``sizes`` arrays.

Every kernel exists twice, as a numba ``@njit`` loop and as a vectorized
numpy expression. The numba versions are used when numba imports cleanly
and ``LEVYSMOOTH_DISABLE_NUMBA`` is unset (or "0").
"""

from __future__ import annotations

import os

import numpy as np

# codes for the closed library of jump weights g(t, x)
G_ONE, G_X, G_X2, G_TX, G_ABSX, G_LOG1P_ABSX = range(6)


def _numba_requested() -> bool:
    return os.environ.get("LEVYSMOOTH_DISABLE_NUMBA", "0") in ("", "0", "false", "False")


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def _weights_numpy(code: int, t: np.ndarray, x: np.ndarray) -> np.ndarray:
    if code == G_ONE:
        return np.ones_like(x)
    if code == G_X:
        return x
    if code == G_X2:
        return x * x
    if code == G_TX:
        return t * x
    if code == G_ABSX:
        return np.abs(x)
    if code == G_LOG1P_ABSX:
        return np.log1p(np.abs(x))
    raise ValueError(f"unknown weight code {code}")


def box_sums_numpy(offsets, times, sizes, rects, owner, n_owner, code):
    """Per-path sums of g(t, x) over jumps in each owner's rectangles.

    ``rects`` is (k, 4) of (t1, t2, x1, x2); ``owner[r]`` names the output
    column rectangle ``r`` contributes to. Returns (n_paths, n_owner).
    """
    n_paths = len(offsets) - 1
    out = np.zeros((n_paths, n_owner))
    if len(times) == 0 or len(rects) == 0:
        return out
    path_of = np.repeat(np.arange(n_paths), np.diff(offsets))
    w = _weights_numpy(code, times, sizes)
    for r in range(len(rects)):
        t1, t2, x1, x2 = rects[r]
        inside = (times >= t1) & (times < t2) & (sizes >= x1) & (sizes < x2) & (sizes != 0)
        out[:, owner[r]] += np.bincount(path_of, weights=np.where(inside, w, 0.0), minlength=n_paths)
    return out


def insert_jumps_numpy(offsets, times, sizes, new_t, new_x):
    """Insert one jump per path, keeping each path sorted by time."""
    n_paths = len(offsets) - 1
    counts = np.diff(offsets)
    path_of = np.repeat(np.arange(n_paths), counts)
    # rank of the new jump inside its path: number of old jumps at or before it
    before = np.bincount(path_of, weights=(times <= new_t[path_of]).astype(float), minlength=n_paths)
    pos_new = offsets[:-1] + np.arange(n_paths) + before.astype(np.int64)
    out_t = np.empty(len(times) + n_paths)
    out_x = np.empty(len(times) + n_paths)
    keep = np.ones(len(out_t), dtype=bool)
    keep[pos_new] = False
    out_t[pos_new] = new_t
    out_x[pos_new] = new_x
    out_t[keep] = times
    out_x[keep] = sizes
    return offsets + np.arange(n_paths + 1), out_t, out_x


if HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _box_sums_jit(offsets, times, sizes, rects, owner, n_owner, w):
        # same accumulation order as the numpy version: rectangle by
        # rectangle, each a left-to-right sum per path started from 0.0
        n_paths = len(offsets) - 1
        out = np.zeros((n_paths, n_owner))
        for r in range(rects.shape[0]):
            t1, t2, x1, x2 = rects[r, 0], rects[r, 1], rects[r, 2], rects[r, 3]
            for p in range(n_paths):
                acc = 0.0
                for j in range(offsets[p], offsets[p + 1]):
                    t = times[j]
                    x = sizes[j]
                    if x != 0.0 and t1 <= t < t2 and x1 <= x < x2:
                        acc += w[j]
                out[p, owner[r]] += acc
        return out

    def box_sums_numba(offsets, times, sizes, rects, owner, n_owner, code):
        # weights come from numpy so transcendental codes match bit for bit
        return _box_sums_jit(offsets, times, sizes, rects, owner, n_owner, _weights_numpy(code, times, sizes))

    @numba.njit(cache=True, nogil=True)
    def insert_jumps_numba(offsets, times, sizes, new_t, new_x):
        n_paths = len(offsets) - 1
        out_off = np.empty(n_paths + 1, dtype=np.int64)
        out_t = np.empty(len(times) + n_paths)
        out_x = np.empty(len(times) + n_paths)
        k = 0
        out_off[0] = 0
        for p in range(n_paths):
            placed = False
            for j in range(offsets[p], offsets[p + 1]):
                if not placed and times[j] > new_t[p]:
                    out_t[k] = new_t[p]
                    out_x[k] = new_x[p]
                    k += 1
                    placed = True
                out_t[k] = times[j]
                out_x[k] = sizes[j]
                k += 1
            if not placed:
                out_t[k] = new_t[p]
                out_x[k] = new_x[p]
                k += 1
            out_off[p + 1] = k
        return out_off, out_t, out_x


def use_numba() -> bool:
    return HAVE_NUMBA and _numba_requested()


def box_sums(offsets, times, sizes, rects, owner, n_owner, code=G_ONE):
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    times = np.ascontiguousarray(times, dtype=np.float64)
    sizes = np.ascontiguousarray(sizes, dtype=np.float64)
    rects = np.ascontiguousarray(rects, dtype=np.float64).reshape(-1, 4)
    owner = np.ascontiguousarray(owner, dtype=np.int64)
    if use_numba():
        return box_sums_numba(offsets, times, sizes, rects, owner, int(n_owner), int(code))
    return box_sums_numpy(offsets, times, sizes, rects, owner, int(n_owner), int(code))


def insert_jumps(offsets, times, sizes, new_t, new_x):
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    times = np.ascontiguousarray(times, dtype=np.float64)
    sizes = np.ascontiguousarray(sizes, dtype=np.float64)
    new_t = np.ascontiguousarray(new_t, dtype=np.float64)
    new_x = np.ascontiguousarray(new_x, dtype=np.float64)
    if use_numba():
        return insert_jumps_numba(offsets, times, sizes, new_t, new_x)
    return insert_jumps_numpy(offsets, times, sizes, new_t, new_x)
