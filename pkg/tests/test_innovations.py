import math

import mpmath
import numpy as np
import pytest
from scipy import stats

from ncfield.innovations import (Constant, FieldView, Gaussian, InnovationSource, SwapVariable, TruncatedGaussian,
                                 Uniform, field_value, moment_vm, norm_estimate, split_seeds, swap_index_set,
                                 v_inf_regime)
from ncfield.lattice import IndexSet, Orthotope, bound_counts, union_count


def test_epsilon_is_deterministic_and_seed_dependent():
    a = InnovationSource(seed=42).epsilon_at(0)
    assert a == InnovationSource(seed=42).epsilon_at(0)
    assert a != InnovationSource(seed=43).epsilon_at(0)


def test_gaussian_sample_mean_and_spread():
    src = InnovationSource(seed=7)
    x = src.values(1, np.arange(10**6)[:, None]).ravel()
    assert abs(x.mean()) < 3 / math.sqrt(x.size)
    assert abs(x.std() - 1.0) < 0.005


def test_uniform_marginal_passes_ks():
    src = InnovationSource(seed=3, distribution=Uniform(0.0, 1.0))
    x = src.values(1, np.arange(20000)[:, None]).ravel()
    assert stats.kstest(x, "uniform").pvalue > 1e-3


def test_streams_are_distinct_domains():
    src = InnovationSource(seed=5)
    coords = np.arange(5000)[:, None]
    eps = src.values(1, coords).ravel()
    fill = src.values(2, coords).ravel()
    assert abs(np.corrcoef(eps, fill)[0, 1]) < 4 / math.sqrt(5000)


def test_replicate_in_isolation_matches_batch():
    seeds = split_seeds(9, "demo", np.arange(6))
    batch = InnovationSource(seeds=seeds).epsilon_box((-3,), (7,))
    alone = InnovationSource(seeds=seeds[4:5]).epsilon_box((-3,), (7,))
    np.testing.assert_array_equal(batch[4], alone[0])


def test_split_seeds_separate_experiments():
    a = split_seeds(1, "x", np.arange(100))
    assert len(set(a.tolist())) == 100
    assert not set(a.tolist()) & set(split_seeds(1, "y", np.arange(100)).tolist())
    np.testing.assert_array_equal(a, split_seeds(1, "x", np.arange(100)))


def test_source_is_immutable():
    src = InnovationSource(seed=1)
    with pytest.raises(AttributeError):
        src.dim = 3


def test_truncated_view_dispatch():
    src = InnovationSource(seed=11)
    view = FieldView.truncated(src, 0, 2, Orthotope((1,)))
    assert field_value(view, 1) == src.epsilon_at(1)
    filling = float(src.filling((0,))[0, 0])
    assert field_value(view, 5) == filling == field_value(view, 7)
    assert field_value(view, -3) == filling


def test_fillings_of_different_sites_are_independent():
    src = InnovationSource(seeds=np.arange(4000, dtype=np.uint64))
    a, b = src.filling((0,))[:, 0], src.filling((1,))[:, 0]
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / math.sqrt(4000)


def test_truncated_agrees_with_exact_inside_window():
    src = InnovationSource(seeds=np.arange(3, dtype=np.uint64))
    o = Orthotope((1, 2))
    view = FieldView.truncated(src, (1, 1), 2, o)
    box = view.materialize((-4, -6), (11, 15))
    exact = FieldView.exact(src).materialize((-4, -6), (11, 15))
    for i in range(11):
        for j in range(15):
            t = (i - 4, j - 6)
            if o.contains(t, 2, (1, 1)):
                np.testing.assert_array_equal(box[:, i, j], exact[:, i, j])
            else:
                np.testing.assert_array_equal(box[:, i, j], src.filling((1, 1)))


def test_swapped_view_differs_at_exactly_one_variable():
    src = InnovationSource(seeds=np.arange(4, dtype=np.uint64))
    o = Orthotope((1,))
    trunc = FieldView.truncated(src, 0, 2, o).materialize((-6,), (13,))
    marg = FieldView.swapped(src, 0, 2, o, SwapVariable("marginal", (1,))).materialize((-6,), (13,))
    diff = np.any(trunc != marg, axis=(0, 2))
    assert diff.tolist() == [x == 7 for x in range(13)]
    fill = FieldView.swapped(src, 0, 2, o, SwapVariable("filling", (0,))).materialize((-6,), (13,))
    changed = np.any(trunc != fill, axis=(0, 2))
    assert changed.tolist() == [abs(x - 6) > 2 for x in range(13)]
    # a marginal outside the window is not read by this view
    out = FieldView.swapped(src, 0, 2, o, SwapVariable("marginal", (5,))).materialize((-6,), (13,))
    np.testing.assert_array_equal(out, trunc)


def test_exact_view_cannot_swap_a_filling():
    with pytest.raises(ValueError):
        FieldView.exact(InnovationSource(), swap=SwapVariable("filling", (0,)))


def test_swap_enumeration_single_site():
    enum = swap_index_set(IndexSet([(0,)]), Orthotope((1,)), 1, Orthotope((1,)))
    # sites -1, 0, 1 each keep V(delta, r); the union of those windows is -2..2
    assert enum.n_fillings == 3 and enum.n_marginals == 5
    assert [enum.is_marginal(i) for i in range(len(enum))] == [True] * 5 + [False] * 3
    for i in range(len(enum)):
        assert enum.index_of(enum.variable(i)) == i
    with pytest.raises(IndexError):
        enum.variable(len(enum))
    with pytest.raises(IndexError):
        enum.variable(-1)


def test_swap_enumeration_empty_and_disjoint():
    assert len(swap_index_set(IndexSet([]), Orthotope((1,)), 2)) == 0
    I = IndexSet([(0,), (10,)])
    enum = swap_index_set(I, Orthotope((1,)), 0, Orthotope((1,)))
    assert enum.n_marginals == union_count(I, Orthotope((1,)), 1) == 6


def test_swap_enumeration_interval_sizes():
    n, d = 20, 3
    enum = swap_index_set(IndexSet.interval(n), Orthotope((1,)), d, Orthotope((1,)))
    assert enum.n_fillings == n + 2
    assert enum.n_marginals == n + 2 + 2 * d


def test_swap_enumeration_sizes_on_random_geometry():
    rng = np.random.default_rng(3)
    for trial in range(40):
        kappa = 1 + trial % 3
        pts = {tuple(int(v) for v in rng.integers(-4, 5, kappa)) for _ in range(int(rng.integers(1, 8)))}
        I = IndexSet(sorted(pts))
        model_w = Orthotope(tuple(int(v) for v in rng.integers(0, 3, kappa)))
        stat_w = Orthotope(tuple(int(v) for v in rng.integers(0, 3, kappa)))
        d = int(rng.integers(1, 4))
        enum = swap_index_set(I, stat_w, d, model_w)
        grown = Orthotope(tuple(a + d * b for a, b in zip(stat_w.delta, model_w.delta)))
        assert enum.n_fillings == bound_counts(I, model_w, stat_w, d).N1
        # every true marginal a truncated view can read; this differs from N2 unless the stencils agree
        assert enum.n_marginals == union_count(I, grown, 1)


def _pair_moment(pdf, lo, hi, m):
    # integrate below the diagonal only, where |x - y| is smooth, and double
    inner = lambda x: mpmath.quad(lambda y: (x - y) ** m * pdf(x) * pdf(y), [lo, x])
    return (2 * mpmath.quad(inner, [lo, hi])) ** (1.0 / m)


def test_gaussian_closed_forms():
    g = Gaussian(0.0, 1.0)
    assert g.v_m(2) == pytest.approx(math.sqrt(2), rel=1e-14)
    # |eps - eps'| ~ sqrt(2) |Z|; E|Z|^m = 2^(m/2) Gamma((m+1)/2) / sqrt(pi)
    for m in (1, 3, 4.5):
        oracle = math.sqrt(2) * (2 ** (m / 2) * math.gamma((m + 1) / 2) / math.sqrt(math.pi)) ** (1 / m)
        assert g.v_m(m) == pytest.approx(oracle, rel=1e-12)
    assert math.isinf(g.v_inf()) and v_inf_regime(g) == "unbounded"


def test_uniform_closed_forms_against_quadrature():
    u = Uniform(0.0, 1.0)
    assert u.v_m(1) == pytest.approx(1 / 3, rel=1e-14)
    for m in (2, 3):
        oracle = float(_pair_moment(lambda x: 1, 0, 1, m))
        assert u.v_m(m) == pytest.approx(oracle, rel=1e-8)
    assert u.v_inf() == 1.0


def test_truncated_gaussian_against_quadrature():
    tg = TruncatedGaussian(0.0, 1.0, 3.0)
    z = 2 * stats.norm.cdf(3.0) - 1
    pdf = lambda x: mpmath.npdf(x) / z
    for m in (1, 2):
        oracle = float(_pair_moment(pdf, -3, 3, m))
        assert tg.v_m(m) == pytest.approx(oracle, rel=1e-9)
    assert tg.v_inf() == 6.0
    assert tg.v_m(2) <= tg.v_inf()


def test_vector_moments_use_the_euclidean_norm():
    g = Gaussian(0.0, 1.0)
    # |eps - eps'| is sqrt(2) times a chi variable with dim degrees of freedom
    assert g.v_m(2, dim=3) == pytest.approx(math.sqrt(2 * 3), rel=1e-13)


def test_constant_innovations():
    c = Constant(2.5)
    assert c.v_m(2) == 0.0 == c.v_inf()
    src = InnovationSource(seed=1, distribution=c)
    assert src.epsilon_at((4,)) == 2.5


def test_moment_estimate_matches_closed_form():
    src = InnovationSource(seeds=np.arange(20, dtype=np.uint64))
    prof = moment_vm(src, 2, 5000)
    assert prof.closed_form == pytest.approx(math.sqrt(2))
    assert prof.consistent


def test_moment_of_identical_pair_is_zero():
    src = InnovationSource(seed=4)
    assert moment_vm(src, 2, 100, partner=InnovationSource(seed=4)).value == 0.0


def test_uniform_monte_carlo_moment():
    src = InnovationSource(seeds=np.arange(10, dtype=np.uint64), distribution=Uniform(0, 1))
    prof = moment_vm(src, 1, 20000)
    assert abs(prof.estimate - 1 / 3) < 5 * prof.stderr


def test_moment_rejects_infinite_order():
    with pytest.raises(ValueError):
        moment_vm(InnovationSource(), math.inf, 10)


def test_norm_estimate_of_constant():
    est, se = norm_estimate(np.full(10, 2.0), 3)
    assert est == pytest.approx(2.0) and se == 0.0
