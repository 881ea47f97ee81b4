import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levysmooth.model import (
    BoxError,
    BoxSet,
    JumpModel,
    NuComponent,
    OutOfScopeError,
    Rect,
    compensator,
    expected_count,
    m_measure,
    nu_measure,
)

MODEL = JumpModel(0.3, 2.0, (NuComponent.atom(1.0, 2.0), NuComponent.uniform(-2.0, -0.5, 1.5)))


def test_component_moments_closed_form():
    u = NuComponent.uniform(-2.0, -0.5, 1.5)
    # density 1 on [-2, -0.5)
    assert u.moment(-1.0, 0.0, 0) == pytest.approx(0.5)
    assert u.moment(-1.0, 0.0, 2) == pytest.approx((1 - 0.125) / 3)
    a = NuComponent.atom(1.0, 2.0)
    assert a.moment(0.5, 1.5, 2) == 2.0
    assert a.moment(1.0, 1.5, 1) == 2.0  # half-open: left end included
    assert a.moment(0.5, 1.0, 1) == 0.0


def test_measures_on_boxes():
    A = BoxSet.of((0, 1, 0.5, 1.5), (0.5, 2, -1, 0))
    assert nu_measure(MODEL, -math.inf, math.inf) == pytest.approx(3.5)
    assert expected_count(MODEL, A) == pytest.approx(2.0 + 1.5 * 0.5)
    assert compensator(MODEL, A) == pytest.approx(2.0 + 1.5 * (-(1 - 0.25) / 2))
    assert m_measure(MODEL, A) == pytest.approx(2.0 + 1.5 * (1 - 0.125) / 3)
    assert MODEL.rate == pytest.approx(7.0)


def test_straddling_zero_is_rejected_with_advice():
    with pytest.raises(BoxError, match="split"):
        Rect(0, 1, -1, 1)


def test_overlapping_rectangles_rejected():
    with pytest.raises(BoxError):
        BoxSet.of((0, 1, 0.5, 1.5), (0.5, 2, 1.0, 2.0))


def test_box_past_horizon():
    with pytest.raises(BoxError):
        MODEL.check_box(BoxSet.of((0, 3, 0.5, 1)))


def test_sigma_out_of_scope():
    m = JumpModel(0.0, 1.0, (NuComponent.atom(1.0, 1.0),), sigma=0.1)
    with pytest.raises(OutOfScopeError):
        m_measure(m, BoxSet.of((0, 1, 0.5, 1.5)))


def test_full_space_and_complement():
    full = BoxSet.full(2.0)
    assert expected_count(MODEL, full) == pytest.approx(MODEL.rate)
    A = BoxSet.of((0.5, 1.5, 0.5, 1.5))
    comp = A.complement(2.0)
    assert comp.isdisjoint(A)
    assert expected_count(MODEL, comp) + expected_count(MODEL, A) == pytest.approx(MODEL.rate)
    assert A.union(comp).issubset(full) and full.issubset(A.union(comp))


sides = st.tuples(
    st.floats(0, 1.9), st.floats(0.01, 1.0), st.sampled_from([(-3.0, -0.25), (-0.7, -0.1), (0.2, 1.2), (0.9, 4.0)])
).map(lambda v: (v[0], min(2.0, v[0] + v[1]), *v[2]))


@settings(max_examples=60, deadline=None)
@given(sides, sides)
def test_measure_additive_over_disjoint_split(a, b):
    A, B = BoxSet.of(a), BoxSet.of(b)
    inter = A.intersect(B)
    union = A.union(B)
    diff = A.difference(B)
    for mu in (expected_count, m_measure):
        total = mu(MODEL, union)
        parts = mu(MODEL, diff) + mu(MODEL, B)
        assert total == pytest.approx(parts, abs=1e-12)
        # monotone
        assert mu(MODEL, inter) <= mu(MODEL, A) + 1e-12
        assert mu(MODEL, A) <= total + 1e-12
