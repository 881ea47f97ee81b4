import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levysmooth.chaos import (
    CoefficientGrid,
    Partition,
    PartitionError,
    chaos_eval,
    covariance_check,
    cross_check,
    dump_grid,
    eval_M,
    grid_inner_product,
    grid_norm_sq,
    h_tensor,
    isometry_check,
    load_grid,
    multiple_integral,
    symmetrize,
    symmetrize_tensor,
)
from levysmooth.malliavin import DerivativePoint, derivative_chaos
from levysmooth.model import BoxSet, JumpModel, NuComponent
from levysmooth.simulate import JumpPath, SeedSpec, add_jump, sample_path

MODEL = JumpModel(0.0, 1.0, (NuComponent.atom(1.0, 2.0), NuComponent.uniform(-2.0, -0.5, 1.0)))
CELLS = (
    BoxSet.of((0, 0.5, 0.5, 1.5)),
    BoxSet.of((0.5, 1, 0.5, 1.5)),
    BoxSet.of((0, 1, -2, -1)),
)
P = Partition(CELLS)
# m of each cell: 1, 1, (8 - 1)/3 * (1/1.5)
M_CELLS = np.array([1.0, 1.0, 7 / 4.5])


def test_cell_masses():
    np.testing.assert_allclose(P.masses(MODEL), M_CELLS)


def test_M_on_a_path():
    p = JumpPath.of([(0.1, 1.0), (0.2, -1.5), (0.7, 1.0), (0.9, 1.0)])
    # compensators: 1, 1, -1.5 * 0.5 * (1/1.5) ... int_{-2}^{-1} x dx / 1.5 = -1
    assert eval_M(MODEL, p, CELLS[0]) == pytest.approx(0.0)
    assert eval_M(MODEL, p, CELLS[1]) == pytest.approx(1.0)
    assert eval_M(MODEL, p, CELLS[2]) == pytest.approx(-1.5 + 1.0)
    assert multiple_integral(MODEL, p, CELLS[1:], 2.0) == pytest.approx(2 * 1.0 * -0.5)
    with pytest.raises(PartitionError):
        multiple_integral(MODEL, p, (CELLS[0], CELLS[0]))


def test_inner_product_oracle():
    # n = 2, f = indicator of (0, 1) and (1, 0) halves, g = (0, 2)
    f = np.zeros((3, 3))
    f[0, 1] = 1.0
    g = np.zeros((3, 3))
    g[0, 1], g[1, 0], g[0, 2] = 1.0, 1.0, 4.0
    # f~ = 0.5 on (0,1),(1,0); g~ = 1 on (0,1),(1,0), 2 on (0,2),(2,0)
    # 2! * (0.5*1*1*1 + 0.5*1*1*1) = 2
    assert grid_inner_product(MODEL, P, f, g) == pytest.approx(2.0)
    assert grid_inner_product(MODEL, P, f, np.zeros(3)) == 0.0
    # diagonal entries carry no mass
    d = np.zeros((3, 3))
    d[1, 1] = 5.0
    assert grid_inner_product(MODEL, P, d, d) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_symmetrize_idempotent(n, seed):
    t = np.random.default_rng(seed).normal(size=(3,) * n)
    s = symmetrize_tensor(t)
    np.testing.assert_allclose(symmetrize_tensor(s), s, atol=1e-15)
    for perm in [tuple(reversed(range(n)))]:
        np.testing.assert_allclose(np.transpose(s, perm), s, atol=1e-15)


def _grid(seed=0):
    rng = np.random.default_rng(seed)
    g = CoefficientGrid.zeros(P, 3)
    for n in range(4):
        g = g.with_tensor(n, rng.normal(size=(3,) * n))
    return symmetrize(g)


def test_grid_roundtrip():
    g = _grid(2)
    text = dump_grid(g)
    assert text.splitlines()[0] == "order,cells,value"
    back = load_grid(text, P)
    for a, b in zip(g.tensors, back.tensors):
        np.testing.assert_array_equal(np.asarray(a), np.asarray(b))


def test_isometry_and_h():
    A = BoxSet.of((0, 1, 0.5, 1.5))
    part = Partition(CELLS[:2])
    h = CoefficientGrid.zeros(part, 1).with_tensor(1, h_tensor(MODEL, part, A))
    assert grid_norm_sq(MODEL, h) == pytest.approx(2.0)
    est, exact = isometry_check(MODEL, h, 60_000, 3)
    assert exact == pytest.approx(2.0)
    assert abs(est.value - exact) <= 4 * est.stderr
    # I_1(h) = N(A) - E N(A) pathwise
    p = JumpPath.of([(0.1, 1.0), (0.6, 1.0), (0.7, 1.0), (0.3, -1.2)])
    assert chaos_eval(MODEL, p, h) == pytest.approx(3 - 2)


def test_orthogonality_exact_zero():
    g = _grid(5)
    one = CoefficientGrid.zeros(P, 3).with_tensor(1, np.asarray(g.tensors[1]))
    two = CoefficientGrid.zeros(P, 3).with_tensor(2, np.asarray(g.tensors[2]))
    est, exact = cross_check(MODEL, one, two, 60_000, 4)
    assert exact == 0.0
    assert abs(est.value) <= 4 * est.stderr


def test_covariance_law():
    B1 = BoxSet.of((0, 0.6, -3, 0), (0, 0.6, 0.5, 1.5))
    B2 = BoxSet.of((0.3, 1, -1, 0), (0.3, 1, 0, 2))
    est, exact = covariance_check(MODEL, B1, B2, 60_000, 5)
    # frozen oracle: 0.3 * (int_{-1}^{-0.5} x^2 dx / 1.5 + 2)
    assert exact == pytest.approx(0.658333333333333333, rel=1e-14)
    assert abs(est.value - exact) <= 4 * est.stderr


@pytest.mark.parametrize("seed", range(8))
def test_chaos_derivative_is_add_one_jump_quotient(seed):
    g = _grid(seed)
    path = sample_path(MODEL, SeedSpec(seed, 0))
    for t, x in [(0.2, 1.0), (0.7, 1.0), (0.4, -1.5), (0.4, 0.2)]:
        d = derivative_chaos(MODEL, g, path, DerivativePoint(t, x))
        q = (chaos_eval(MODEL, add_jump(path, t, x), g) - chaos_eval(MODEL, path, g)) / x
        assert d == pytest.approx(q, rel=1e-10, abs=1e-12)


def test_partition_rejects_overlap():
    with pytest.raises(PartitionError):
        Partition((CELLS[0], BoxSet.of((0.25, 0.75, 0.5, 1.5))))


@pytest.mark.parametrize("seed", range(4))
def test_refinement_invariance(seed):
    # splitting a cell and copying its coefficients leaves I_n unchanged
    coarse = Partition(CELLS)
    fine = Partition((BoxSet.of((0, 0.25, 0.5, 1.5)), BoxSet.of((0.25, 0.5, 0.5, 1.5)), CELLS[1], CELLS[2]))
    copy = np.array([0, 0, 1, 2])
    g = _grid(seed)
    h = CoefficientGrid.zeros(fine, 3)
    for n, t in enumerate(g.tensors):
        t = np.asarray(t)
        h = h.with_tensor(n, t[np.ix_(*([copy] * n))] if n else t)
    # entries pairing the two halves of the split cell sit on the old diagonal
    h = symmetrize(h)
    t2 = np.asarray(h.tensors[2]).copy()
    t2[0, 1] = t2[1, 0] = 0.0
    t3 = np.asarray(h.tensors[3]).copy()
    idx = np.indices(t3.shape)
    in_split = sum((idx[a] <= 1).astype(int) for a in range(3))
    t3[in_split >= 2] = 0.0
    h = h.with_tensor(2, t2).with_tensor(3, t3)
    path = sample_path(MODEL, SeedSpec(seed, 4))
    assert chaos_eval(MODEL, path, h) == pytest.approx(chaos_eval(MODEL, path, g), rel=1e-12, abs=1e-12)
    assert grid_norm_sq(MODEL, h) == pytest.approx(grid_norm_sq(MODEL, g), rel=1e-12)
