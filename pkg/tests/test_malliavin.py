import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levysmooth import dsl
from levysmooth.chaos import CoefficientGrid, Partition, chaos_eval, grid_norm_sq, symmetrize
from levysmooth.malliavin import (
    DerivativePoint,
    Lipschitz,
    chain_rule_check,
    conditional_mc,
    conditional_projection,
    derivative_norm,
    derivative_quotient,
    mecke_check,
    product_rule_check,
)
from levysmooth.model import BoxSet, JumpModel, NuComponent
from levysmooth.simulate import JumpPath, SeedSpec, sample_path, sample_paths

MODEL = JumpModel(0.25, 1.0, (NuComponent.atom(1.0, 2.0), NuComponent.uniform(-2.0, -0.5, 1.0)))
A = BoxSet.of((0, 1, 0.5, 1.5))
B = BoxSet.of((0, 1, -3, 0))
ENV = dsl.Env(MODEL, {"A": A, "B": B})
EXPRS = ["count(A)", "sumjumps(B, x2) * count(A)", "exp(sumjumps(B, x) / 3)", "XT - 2", "clamp(XT, -1, 1)"]


def test_quotient_oracles():
    path = JumpPath.of([(0.1, 1.0), (0.5, -1.0)])
    p = DerivativePoint(0.3, 1.0)
    assert derivative_quotient(dsl.parse("count(A)"), path, p, ENV) == 1.0
    assert derivative_quotient(dsl.parse("pow(count(A), 2)"), path, p, ENV) == 3.0
    assert derivative_quotient(dsl.parse("count(A)"), path, DerivativePoint(0.3, -1.0), ENV) == 0.0
    assert derivative_quotient(dsl.parse("XT"), path, DerivativePoint(0.3, -0.7), ENV) == pytest.approx(1.0)


def test_point_rejects_zero_size():
    with pytest.raises(ValueError):
        DerivativePoint(0.1, 0.0)


points = st.tuples(st.floats(0, 0.999), st.sampled_from([-1.7, -0.6, 0.3, 1.0, 2.5]))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), points, st.sampled_from(EXPRS), st.sampled_from(EXPRS))
def test_product_rule_pathwise(seed, pt, f, g):
    path = sample_path(MODEL, SeedSpec(seed))
    lhs, rhs, scale = product_rule_check(dsl.parse(f), dsl.parse(g), path, DerivativePoint(*pt), ENV)
    assert abs(lhs - rhs) <= 1e-12 * scale


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), points, st.sampled_from(EXPRS), st.sampled_from(["clamp", "min", "max", "abs"]))
def test_chain_rule_pathwise(seed, pt, f, kind):
    path = sample_path(MODEL, SeedSpec(seed))
    lhs, rhs, scale = chain_rule_check(Lipschitz(kind, -0.5, 1.5), dsl.parse(f), path, DerivativePoint(*pt), ENV)
    assert abs(lhs - rhs) <= 1e-12 * scale


def test_mecke_count():
    lhs, rhs = mecke_check(MODEL, dsl.parse("count(A)"), A, 100_000, 21, ENV)
    for e in (lhs, rhs):
        assert abs(e.value - 6.0) <= 4 * e.stderr


def test_mecke_warns_on_negative_functional():
    with pytest.warns(UserWarning):
        mecke_check(MODEL, dsl.parse("count(A) - 1"), A, 2000, 1, ENV)


def test_derivative_norm_of_count():
    # D count(A) = 1/x on A, so the integral is dt nu(dx) mass of A = 2
    est = derivative_norm(MODEL, dsl.parse("count(A)"), A, 20_000, 2, ENV)
    assert est.value == pytest.approx(2.0, rel=1e-14)


def test_lipschitz_validation():
    with pytest.raises(ValueError):
        Lipschitz("sin")
    with pytest.raises(ValueError):
        Lipschitz("clamp", 2.0, 1.0)


CELLS = (BoxSet.of((0, 0.5, 0.5, 1.5)), BoxSet.of((0.5, 1, 0.5, 1.5)), BoxSet.of((0, 1, -2, -1)))
P = Partition(CELLS)


def _grid():
    rng = np.random.default_rng(1)
    g = CoefficientGrid.zeros(P, 2)
    for n in range(3):
        g = g.with_tensor(n, rng.normal(size=(3,) * n))
    return symmetrize(g)


def test_conditional_projection_contracts():
    g = _grid()
    proj = conditional_projection(g, A)
    assert grid_norm_sq(MODEL, proj) <= grid_norm_sq(MODEL, g)
    # entries touching the third cell are gone
    assert np.all(np.asarray(proj.tensors[1])[2] == 0)
    assert np.all(np.asarray(proj.tensors[2])[:, 2] == 0)


def test_conditional_projection_matches_mc():
    g = _grid()
    proj = conditional_projection(g, A)
    path = sample_path(MODEL, SeedSpec(17))
    # E[Y | F_A] by resampling the complement of A, for a chaos functional
    batch = sample_paths(MODEL, 99, 80_000)
    kept = path.batch().restrict(A)
    from levysmooth.simulate import PathBatch

    k = len(kept.times)
    fixed = PathBatch(np.arange(len(batch) + 1, dtype=np.int64) * k, np.tile(kept.times, len(batch)),
                      np.tile(kept.sizes, len(batch)))
    mixed = PathBatch.merge(fixed, batch.restrict(A, inside=False))
    vals = chaos_eval(MODEL, mixed, g)
    se = vals.std() / np.sqrt(len(vals))
    assert abs(vals.mean() - chaos_eval(MODEL, path, proj)) <= 4 * se


def test_conditional_mc_certified_shortcut_and_tower():
    f = dsl.parse("count(A) + sumjumps(B, x)")
    path = sample_path(MODEL, SeedSpec(3))
    v = conditional_mc(MODEL, f, A, path, 20_000, 5, ENV)
    # E[sumjumps(B, x)] = int x nu over B = -1.25
    assert v == pytest.approx(dsl.evaluate(dsl.parse("count(A)"), path, ENV) - 1.25, abs=0.05)
    g = dsl.parse("count(A)")
    assert conditional_mc(MODEL, g, A, path, 10, 5, ENV) == dsl.evaluate(g, path, ENV)
    # tower: averaging over outer paths recovers E[Y] = 2 - 1.25
    outer = [conditional_mc(MODEL, f, A, sample_path(MODEL, SeedSpec(50, s)), 2000, s, ENV) for s in range(300)]
    assert abs(np.mean(outer) - 0.75) <= 4 * np.std(outer) / np.sqrt(len(outer)) + 0.02
