"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--paths 200000] [--repeat 5]

Both backends see identical inputs; outputs are compared before timing.
"""

import argparse
import time

import numpy as np

from levysmooth import kernels
from levysmooth.model import BoxSet, JumpModel, NuComponent
from levysmooth.simulate import make_rng, sample_batch


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    model = JumpModel(0.0, 1.0, (NuComponent.atom(1.0, 4.0), NuComponent.uniform(-2.0, -0.5, 4.0)))
    batch = sample_batch(model, make_rng(2024, 0, 0), args.paths)
    # three boxes, one rectangle each; they may overlap since each has its own owner slot
    sides = [(0, 0.5, 0.5, 1.5), (0.5, 1, -3, 0), (0.2, 0.9, 0.5, 2.0)]
    rects = np.vstack([BoxSet.of(s).as_array() for s in sides])
    owner = np.array([0, 1, 2], dtype=np.int64)
    rng = make_rng(2024, 0, 1)
    new_t, new_x = rng.random(args.paths), np.full(args.paths, 1.0)
    data = (batch.offsets, batch.times, batch.sizes)

    if not kernels.HAVE_NUMBA:
        print("numba unavailable; nothing to compare")
        return
    # compile and cross-check once
    a = kernels.box_sums_numba(*data, rects, owner, 3, kernels.G_X2)
    b = kernels.box_sums_numpy(*data, rects, owner, 3, kernels.G_X2)
    assert np.array_equal(a, b)
    for u, v in zip(kernels.insert_jumps_numba(*data, new_t, new_x), kernels.insert_jumps_numpy(*data, new_t, new_x)):
        assert np.array_equal(u, v)

    print(f"{args.paths} paths, {len(batch.times)} jumps, best of {args.repeat}")
    print(f"{'kernel':<14}{'numba s':>10}{'numpy s':>10}{'speedup':>9}")
    cases = {
        "box_sums": (
            lambda: kernels.box_sums_numba(*data, rects, owner, 3, kernels.G_X2),
            lambda: kernels.box_sums_numpy(*data, rects, owner, 3, kernels.G_X2),
        ),
        "insert_jumps": (
            lambda: kernels.insert_jumps_numba(*data, new_t, new_x),
            lambda: kernels.insert_jumps_numpy(*data, new_t, new_x),
        ),
    }
    for name, (fast, slow) in cases.items():
        tf, ts = best_of(fast, args.repeat), best_of(slow, args.repeat)
        print(f"{name:<14}{tf:>10.4f}{ts:>10.4f}{ts / tf:>8.1f}x")


if __name__ == "__main__":
    main()
