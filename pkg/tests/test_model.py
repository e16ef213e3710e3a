import math

import numpy as np
import pytest

from ncfield.innovations import (Constant, FieldView, Gaussian, InnovationSource, SwapVariable, TruncatedGaussian,
                                 norm_estimate)
from ncfield.lattice import Orthotope
from ncfield.model import (FieldModel, NonContractiveModel, PicardConfig, ar_model, brnn_model, check_contraction,
                           evaluate_sites, evaluate_window, first_step_bound, picard_budget, picard_evaluate,
                           picard_trace, residual_ratios_ok, run_pyramid, stencil_model)

SEEDS = np.arange(100, dtype=np.uint64)


def source(n=100, dist=None, dim=1):
    return InnovationSource(seeds=np.arange(n, dtype=np.uint64), distribution=dist or TruncatedGaussian(), dim=dim)


def linear_solve_ar(alpha_left, alpha_right, beta, eps, half):
    """Centre value of the AR field by a direct linear solve on [-half, half], zero outside."""
    n = 2 * half + 1
    A = np.eye(n)
    for i in range(n):
        if i > 0:
            A[i, i - 1] = -alpha_left
        if i < n - 1:
            A[i, i + 1] = -alpha_right
    return np.linalg.solve(A, beta * eps.T).T[:, half]


def test_contraction_reports():
    r = check_contraction(ar_model(0.2, 0.2, 0.3))
    assert r.passed and r.total == pytest.approx(0.7) and r.rho == pytest.approx(0.4)
    assert not check_contraction(ar_model(0.5, 0.5, 0.1, strict=False)).passed


def test_non_contractive_ar_rejected():
    with pytest.raises(NonContractiveModel):
        ar_model(0.5, 0.5, 0.1)
    with pytest.raises(NonContractiveModel):
        ar_model(-0.4, 0.4, 0.3)


def test_brnn_operator_norm_example():
    m = brnn_model([[0.3, 0.3]], 0.3, "tanh")
    assert m.params["op_norm"] == pytest.approx(math.sqrt(0.18))
    assert check_contraction(m).extra["op_norm_plus_beta"] == pytest.approx(math.sqrt(0.18) + 0.3)
    assert m.rho == pytest.approx(0.6)


def test_brnn_passes_with_operator_norm_point_six():
    A = np.array([[0.6, 0.0]])
    m = brnn_model(A, 0.3, "tanh")
    r = check_contraction(m)
    assert r.passed and r.extra["op_norm_plus_beta"] == pytest.approx(0.9)


def test_brnn_rejections():
    with pytest.raises(NonContractiveModel):
        brnn_model([[0.5, 0.4]], 0.3)
    with pytest.raises(ValueError):
        brnn_model(np.zeros((2, 3)), 0.3)
    with pytest.raises(ValueError):
        brnn_model([[0.1, 0.1]], 0.3, activation="softplus")


def test_pure_noise_model_needs_one_sweep():
    m = ar_model(0.0, 0.0, 0.5)
    cfg = PicardConfig.for_model(m)
    assert cfg.iterations == 1
    src = source(5)
    np.testing.assert_array_equal(picard_evaluate(m, FieldView.exact(src), 3, cfg), 0.5 * src.epsilon_at(3))


def test_zero_innovations_give_zero_field():
    m = ar_model(0.3, 0.3, 0.3)
    out = picard_evaluate(m, FieldView.exact(source(3, Constant(0.0))), 0, PicardConfig.for_model(m))
    np.testing.assert_array_equal(out, 0.0)


def test_constant_innovations_reach_scalar_fixed_point():
    m = ar_model(0.2, 0.2, 0.3)
    cfg = PicardConfig.for_model(m)
    out = picard_evaluate(m, FieldView.exact(source(2, Constant(1.0))), 0, cfg)
    assert np.all(np.abs(out - 0.5) <= m.rho**cfg.iterations)


@pytest.mark.parametrize("coeffs", [(0.2, 0.2, 0.3), (0.1, 0.45, 0.4), (-0.3, 0.2, 0.2)])
def test_picard_matches_direct_linear_solve(coeffs):
    m = ar_model(*coeffs)
    cfg = PicardConfig.for_model(m, 1e-14)
    src = source(8, Gaussian())
    half = 80
    eps = src.epsilon_box((-half,), (2 * half + 1,))[..., 0]
    ref = linear_solve_ar(*coeffs, eps, half)
    out = picard_evaluate(m, FieldView.exact(src), 0, cfg)
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-11)


def test_a_posteriori_bound_between_iteration_counts():
    m = ar_model(0.2, 0.2, 0.3)
    src = source(50)
    K = 12
    a = picard_evaluate(m, FieldView.exact(src), 0, PicardConfig(K))
    b = picard_evaluate(m, FieldView.exact(src), 0, PicardConfig(K + 10))
    assert np.max(np.abs(a - b)) <= picard_budget(m, PicardConfig(K), 3.0)
    assert first_step_bound(m, 0.0, 3.0) == pytest.approx(0.9)


def test_centre_gain_of_symmetric_ar_exceeds_innovation_weight():
    # H is linear in the innovations; its weight on eps_0 is beta / sqrt(1 - 4 alpha^2)
    m = ar_model(0.2, 0.2, 0.3)
    cfg = PicardConfig.for_model(m)
    src = source(200, Gaussian())
    swap = SwapVariable("marginal", (0,))
    base = picard_evaluate(m, FieldView.exact(src), 0, cfg)
    moved = picard_evaluate(m, FieldView.exact(src, swap=swap), 0, cfg)
    delta_eps = src.swap_value(swap)[:, 0] - src.epsilon_at(0)
    gain = (moved - base) / delta_eps
    expected = 0.3 / math.sqrt(1 - 4 * 0.04)
    np.testing.assert_allclose(gain, expected, rtol=1e-9)
    assert expected > m.eta
    # the gain still respects rho^0 * |delta eps|, the bound used for shell 0
    assert expected <= 1.0


def test_brnn_identity_reproduces_ar_exactly():
    ar = ar_model(0.2, 0.15, 0.3)
    brnn = brnn_model([[0.2, 0.15]], 0.3, activation="identity")
    cfg = PicardConfig.for_model(ar)
    src = source(20)
    sites = [(i,) for i in range(-3, 4)]
    np.testing.assert_array_equal(evaluate_sites(ar, src, sites, None, cfg),
                                  evaluate_sites(brnn, src, sites, None, cfg))


def test_vector_brnn_zero_matrix_is_scaled_noise():
    m = brnn_model(np.zeros((2, 4)), 0.5, activation="identity")
    src = source(4, Gaussian(), dim=2)
    out = picard_evaluate(m, FieldView.exact(src), 0, PicardConfig(3))
    np.testing.assert_array_equal(out, 0.5 * src.epsilon_at(0))


@pytest.mark.parametrize("model", [ar_model(0.2, 0.2, 0.3), brnn_model([[0.3, 0.3]], 0.3, "tanh"),
                                   brnn_model([[0.2, 0.1, 0.1, 0.0], [0.0, 0.2, 0.1, 0.15]], 0.2, "tanh")],
                         ids=["ar", "brnn", "brnn2"])
def test_residual_ratios_bounded_by_rho(model):
    cfg = PicardConfig.for_model(model)
    src = source(100, dim=model.dim)
    _, resid = picard_trace(model, FieldView.exact(src), 0, cfg)
    assert resid.shape == (100, cfg.iterations)
    assert residual_ratios_ok(resid, model.rho + 0.05)
    assert residual_ratios_ok(resid, model.rho + 1e-9)


def test_residual_ratio_check_catches_growth():
    assert not residual_ratios_ok(np.array([[1.0, 0.5, 0.45]]), 0.6)
    # below the round-off floor ratios are ignored
    assert residual_ratios_ok(np.array([[1.0, 1e-13, 1e-13]]), 0.5)


def test_evaluate_window_matches_single_calls_bitwise():
    m = ar_model(0.2, 0.2, 0.3)
    cfg = PicardConfig.for_model(m)
    view = FieldView.exact(source(30))
    window = [(i,) for i in range(-50, 50)]
    batch = evaluate_window(m, view, window, cfg)
    for t in window:
        np.testing.assert_array_equal(batch[t], picard_evaluate(m, view, t, cfg))
    assert evaluate_window(m, view, [], cfg) == {}
    single = evaluate_window(m, view, [(0,)], cfg)
    np.testing.assert_array_equal(single[(0,)], picard_evaluate(m, view, 0, cfg))


def test_shared_and_per_site_paths_agree_bitwise():
    m = ar_model(0.2, 0.2, 0.3)
    cfg = PicardConfig.for_model(m)
    src = source(40)
    sites = [(i,) for i in range(10)]
    deep = cfg.iterations - 1
    a = evaluate_sites(m, src, sites, deep, cfg, shared=True)
    b = evaluate_sites(m, src, sites, deep, cfg, shared=False)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, evaluate_sites(m, src, sites, None, cfg))
    swap = SwapVariable("marginal", (4,))
    np.testing.assert_array_equal(evaluate_sites(m, src, sites, deep, cfg, swap=swap, shared=True),
                                  evaluate_sites(m, src, sites, deep, cfg, swap=swap, shared=False))


def test_truncated_site_values_match_their_views():
    m = ar_model(0.2, 0.2, 0.3)
    cfg = PicardConfig.for_model(m)
    src = source(6)
    for d in (0, 2):
        vals = evaluate_sites(m, src, [(0,), (3,)], d, cfg)
        for j, s in enumerate([(0,), (3,)]):
            view = FieldView.truncated(src, s, d, m.neighborhood)
            np.testing.assert_array_equal(vals[:, j, 0], picard_evaluate(m, view, s, cfg))


def test_generic_update_path_matches_stencil_kernel():
    m = stencil_model({(-1, 0): 0.1, (1, 0): 0.2, (0, -1): 0.15, (0, 1): 0.1}, 0.3, "tanh")
    cfg = PicardConfig(6)
    eps = source(3).epsilon_box((-6, -6), (13, 13))
    a, _ = run_pyramid(m, eps, cfg)
    b, _ = run_pyramid(m, eps, cfg, backend="generic")
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)


def test_blow_up_is_reported():
    m = ar_model(2.0, 2.0, 0.1, strict=False)
    with pytest.raises(FloatingPointError), np.errstate(over="ignore", invalid="ignore"):
        picard_evaluate(m, FieldView.exact(source(2, Constant(1.0))), 0, PicardConfig(600))


def test_model_validation():
    with pytest.raises(ValueError):
        FieldModel(Orthotope((1,)), ((2,),), (0.1,), 0.1, update=lambda n, e: e)
    with pytest.raises(ValueError):
        FieldModel(Orthotope((1,)), ((1,),), (0.1, 0.2), 0.1, update=lambda n, e: e)
    with pytest.raises(ValueError):
        PicardConfig(0)


def test_stationarity_of_second_moments():
    m = ar_model(0.2, 0.3, 0.3)
    cfg = PicardConfig.for_model(m)
    src = source(4000)
    a = picard_evaluate(m, FieldView.exact(src), 0, cfg)
    b = picard_evaluate(m, FieldView.exact(src), 37, cfg)
    ea, sa = norm_estimate(a, 2)
    eb, sb = norm_estimate(b, 2)
    assert abs(ea - eb) <= 3 * math.hypot(sa, sb)


def test_output_gap_below_largest_input_gap():
    # coupled views differing at a few coordinates: ||H - H'||_m <= max_t ||eps_t - eps'_t||_m
    m = brnn_model([[0.3, 0.3]], 0.3, "tanh")
    cfg = PicardConfig.for_model(m)
    src = source(4000)
    base = picard_evaluate(m, FieldView.exact(src), 0, cfg)
    for c in (0, 1, 3):
        moved = picard_evaluate(m, FieldView.exact(src, SwapVariable("marginal", (c,))), 0, cfg)
        est, se = norm_estimate(moved - base, 2)
        assert est <= TruncatedGaussian().v_m(2) + 3 * se
