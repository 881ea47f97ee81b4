import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levysmooth.model import BoxSet, JumpModel, NuComponent
from levysmooth.simulate import (
    JumpPath,
    PathBatch,
    SeedSpec,
    add_jump,
    count_in,
    dump_paths,
    load_paths,
    map_blocks,
    sample_path,
    sample_paths,
    terminal_value,
)

MODEL = JumpModel(0.5, 1.0, (NuComponent.atom(1.0, 2.0), NuComponent.uniform(-2.0, -0.5, 1.0)))
A = BoxSet.of((0, 1, 0.5, 1.5))


def test_same_seed_same_path():
    assert sample_path(MODEL, SeedSpec(3, 1)) == sample_path(MODEL, SeedSpec(3, 1))
    assert sample_path(MODEL, SeedSpec(3, 1)) != sample_path(MODEL, SeedSpec(3, 2))


def test_seed_range_checked():
    with pytest.raises(ValueError):
        SeedSpec(-1)
    with pytest.raises(ValueError):
        SeedSpec(2**64)


def test_counts_are_poisson():
    batch = sample_paths(MODEL, 11, 200_000)
    n = count_in(batch, A)
    assert abs(n.mean() - 2.0) < 4 * np.sqrt(2.0 / len(n))
    assert abs(n.var() - 2.0) < 0.05
    assert abs(batch.counts.mean() - 3.0) < 4 * np.sqrt(3.0 / len(n))


def test_paths_sorted_and_nonzero():
    batch = sample_paths(MODEL, 5, 1000)
    for p in batch.paths()[:50]:
        assert np.all(np.diff(p.times) >= 0)
        assert np.all(p.sizes != 0)


def test_add_jump_and_terminal_value():
    p = JumpPath.of([(0.2, 1.0), (0.7, -0.5)])
    q = add_jump(p, 0.5, 2.0)
    assert list(q.jumps) == [(0.2, 1.0), (0.5, 2.0), (0.7, -0.5)]
    assert terminal_value(MODEL, q) == pytest.approx(0.5 + 2.5)
    with pytest.raises(ValueError):
        add_jump(p, 0.5, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 0.999), st.sampled_from([-1.5, -0.7, 0.6, 1.0, 1.2])), max_size=8))
def test_order_of_construction_is_irrelevant(jumps):
    a = JumpPath.of(jumps)
    b = JumpPath.of(list(reversed(jumps)))
    assert count_in(a, A) == count_in(b, A)
    assert terminal_value(MODEL, a) == pytest.approx(terminal_value(MODEL, b))


def test_dump_load_roundtrip():
    paths = [sample_path(MODEL, SeedSpec(9, s)) for s in range(4)]
    text = dump_paths(paths, [0, 1, 2, 3])
    assert text.splitlines()[0] == "stream,t,x"
    back = load_paths(text)
    for s, p in enumerate(paths):
        if len(p.times):
            assert back[s] == p


def test_map_blocks_independent_of_workers():
    from levysmooth.simulate import make_rng, sample_batch

    def block(b, size):
        return count_in(sample_batch(MODEL, make_rng(4, b, 0), size), A).astype(float)

    one = map_blocks(block, 30_000, 1)
    four = map_blocks(block, 30_000, 4)
    assert np.array_equal(one, four)


def test_batch_merge_and_restrict():
    p = JumpPath.of([(0.1, 1.0), (0.4, -1.0), (0.9, 1.0)])
    inside = p.batch().restrict(A)
    outside = p.batch().restrict(A, inside=False)
    merged = PathBatch.merge(inside, outside).path(0)
    assert merged == p
