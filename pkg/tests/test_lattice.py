import itertools

import pytest
from hypothesis import given, settings, strategies as st

from ncfield.lattice import (IndexSet, Orthotope, bound_counts, bounding_box, dilation_cardinality,
                             neighborhood_union, orthotope_points, shell_index, shell_points, shell_size_bound)


def brute_box(delta, d, center):
    axes = [range(c - d * h, c + d * h + 1) for c, h in zip(center, delta)]
    return sorted(itertools.product(*axes))


def test_orthotope_points_one_dimensional():
    assert orthotope_points(Orthotope((1,)), 1, (0,)) == [(-1,), (0,), (1,)]


def test_zero_half_widths_give_only_the_center():
    assert orthotope_points(Orthotope((0, 0)), 5, (3, 3)) == [(3, 3)]


def test_mixed_half_widths_point_count():
    pts = orthotope_points(Orthotope((1, 2)), 2, (0, 0))
    assert len(pts) == 45 == len(set(pts))
    assert pts == sorted(pts)


@pytest.mark.parametrize("delta,d,expected", [((1, 1), 2, 25), ((1,), 0, 1), ((2, 1, 1), 3, 637)])
def test_dilation_cardinality_examples(delta, d, expected):
    o = Orthotope(delta)
    assert dilation_cardinality(o, d) == expected == len(brute_box(delta, d, (0,) * len(delta)))


def test_dilation_cardinality_overflow_is_an_error():
    with pytest.raises(OverflowError):
        dilation_cardinality(Orthotope((10**6,) * 4), 10**6)


def test_invalid_orthotopes_rejected():
    with pytest.raises(ValueError):
        Orthotope((-1,))
    with pytest.raises(ValueError):
        Orthotope(())
    with pytest.raises(ValueError):
        Orthotope((1,)).scaled(-1)


def test_contains_and_offsets():
    o = Orthotope((1, 2))
    assert o.contains((1, -2)) and not o.contains((2, 0))
    assert o.contains((3, 4), d=2, center=(1, 0))
    assert o.offsets(1).shape == (15, 2)


def test_shell_index_matches_nested_boxes():
    o = Orthotope((1, 2))
    for p in brute_box((1, 2), 4, (0, 0)):
        c = shell_index(o, (0, 0), p)
        assert o.contains(p, c) and (c == 0 or not o.contains(p, c - 1))


def test_shell_index_of_unreachable_point():
    assert shell_index(Orthotope((0, 1)), (0, 0), (1, 0)) is None


def test_shell_sizes_respect_worst_case_bound():
    for delta in [(1,), (2,), (1, 1), (2, 1), (1, 1, 1)]:
        o = Orthotope(delta)
        for c in range(1, 6):
            pts = shell_points(o, c, (0,) * o.kappa)
            expected = dilation_cardinality(o, c) - dilation_cardinality(o, c - 1)
            assert len(pts) == expected <= shell_size_bound(o, c)


def test_index_set_rejects_duplicates_and_sorts():
    with pytest.raises(ValueError):
        IndexSet([(0,), (0,)])
    assert IndexSet([(2,), (0,)]).points == ((0,), (2,))
    assert len(IndexSet.box((2, 3))) == 6


def test_desk_counts():
    c = bound_counts(IndexSet.interval(64), Orthotope((1,)), Orthotope((1,)), 4)
    assert (c.n, c.n_b, c.n_bbar, c.n_d, c.N1, c.N2) == (64, 3, 3, 9, 66, 72)


def test_bounding_box_with_padding():
    lo, shape = bounding_box([(0, 1), (3, -2)], (1, 2))
    assert tuple(lo) == (-1, -4) and tuple(shape) == (6, 8)


@st.composite
def geometry(draw):
    kappa = draw(st.integers(1, 3))
    coord = st.tuples(*[st.integers(-5, 5)] * kappa)
    pts = draw(st.sets(coord, min_size=1, max_size=10))
    model = tuple(draw(st.integers(0, 2)) for _ in range(kappa))
    stat = tuple(draw(st.integers(0, 2)) for _ in range(kappa))
    return IndexSet(sorted(pts)), Orthotope(model), Orthotope(stat), draw(st.integers(1, 3))


@settings(max_examples=200, deadline=None)
@given(geometry())
def test_count_chain_on_random_index_sets(geo):
    I, model_w, stat_w, d = geo
    c = bound_counts(I, model_w, stat_w, d)
    assert c.n <= c.N1 <= c.n * c.n_bbar
    assert c.N1 <= c.N2 <= c.N1 * c.n_d
    brute = {p for t in I for p in brute_box(stat_w.delta, d, t)}
    assert c.N2 == len(brute) == len(neighborhood_union(I, stat_w, d))
