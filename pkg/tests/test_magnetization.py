"""Langevin magnetization law and its staircase approximation."""

import numpy as np
import pytest

from mpisim import (
    ConfigError,
    LangevinParams,
    build_approx,
    eval_approx,
    eval_approx_antiderivative,
    l1_functional,
    langevin,
    langevin_derivative,
    mbar,
    mbar_prime,
    nodes_equidistant,
    nodes_l1_optimal,
    sup_second_derivative,
)

# coth(5) - 1/5, evaluated once with mpmath at 30 digits and frozen here
L_OF_5 = 0.80009080398201938


def test_langevin_known_values():
    assert langevin(0.0) == 0.0
    assert langevin(5.0) == pytest.approx(L_OF_5, abs=1e-15)
    # odd function
    xs = np.linspace(0.1, 40.0, 57)
    np.testing.assert_allclose(langevin(-xs), -langevin(xs), rtol=0, atol=1e-15)
    # saturation: L(x) ~ 1 - 1/x for large x
    assert langevin(100.0) == pytest.approx(1.0 - 1.0 / 100.0, abs=1e-6)


def test_langevin_series_matches_direct_form_near_cutoff():
    # the small-|x| series branch must join the coth form smoothly
    xs = np.linspace(1e-4, 0.5, 400)
    direct = 1.0 / np.tanh(xs) - 1.0 / xs
    np.testing.assert_allclose(langevin(xs), direct, rtol=0, atol=1e-12)


def test_langevin_derivative_at_zero_exact():
    assert langevin_derivative(0.0) == pytest.approx(1.0 / 3.0, abs=0)


def test_langevin_derivative_centered_difference():
    rng = np.random.default_rng(7)
    xs = rng.uniform(-50.0, 50.0, 300)
    xs = xs[np.abs(xs) > 1e-3]
    h = 1e-4
    fd = (langevin(xs + h) - langevin(xs - h)) / (2.0 * h)
    np.testing.assert_allclose(langevin_derivative(xs), fd, rtol=0, atol=1e-6)


def test_langevin_derivative_large_argument_no_overflow():
    with np.errstate(over="raise"):
        out = langevin_derivative(np.array([200.0, 400.0, 1e6]))
    np.testing.assert_allclose(out, [1 / 200.0**2, 1 / 400.0**2, 1e-12], rtol=1e-12)


def test_mbar_scaling_and_saturation():
    params = LangevinParams(m0=2.5, lam=800.0)
    assert mbar(params, 0.0) == 0.0
    assert mbar_prime(params, 0.0) == pytest.approx(2.5 * 800.0 / 3.0, rel=1e-14)
    # saturation to m0
    assert mbar(params, 1.0) == pytest.approx(2.5, rel=1e-2)
    # chain rule: mbar'(B) = m0 lam L'(lam B)
    b = 0.007
    assert mbar_prime(params, b) == pytest.approx(
        2.5 * 800.0 * langevin_derivative(800.0 * b), rel=1e-14)


def test_params_validation():
    with pytest.raises(ConfigError):
        LangevinParams(m0=-1.0, lam=100.0)
    with pytest.raises(ConfigError):
        LangevinParams(m0=1.0, lam=0.0)


def test_nodes_equidistant_spacing():
    nodes = nodes_equidistant(29, 0.010)
    assert nodes.shape == (29,)
    assert nodes[0] == pytest.approx(0.010 / 30)
    np.testing.assert_allclose(np.diff(nodes), 0.010 / 30, rtol=1e-12)
    assert nodes[-1] < 0.010


def test_nodes_validation():
    with pytest.raises(ConfigError):
        nodes_equidistant(0, 0.01)
    with pytest.raises(ConfigError):
        nodes_equidistant(5, -0.01)
    params = LangevinParams(m0=1.0, lam=200.0)
    with pytest.raises(ConfigError):
        build_approx(params, [0.005, 0.002], 0.01)  # not increasing
    with pytest.raises(ConfigError):
        build_approx(params, [0.005, 0.02], 0.01)  # beyond b


def test_secant_antiderivative_matches_mbar_at_ladder():
    # chord slopes telescope: the staircase antiderivative hits mbar exactly
    # at every breakpoint
    params = LangevinParams(m0=1.0, lam=1600.0)
    ap = build_approx(params, nodes_equidistant(7, 0.010), 0.010, scheme="secant")
    ladder = np.asarray(ap.ladder)
    np.testing.assert_allclose(
        eval_approx_antiderivative(ap, ladder), mbar(params, ladder),
        rtol=0, atol=1e-15)


def test_tangent_slopes():
    params = LangevinParams(m0=1.0, lam=1600.0)
    ap = build_approx(params, nodes_equidistant(7, 0.010), 0.010, scheme="tangent")
    ladder = np.asarray(ap.ladder)
    mids = (ladder[:-1] + ladder[1:]) / 2.0
    expect = mbar_prime(params, mids)
    expect[0] = mbar_prime(params, 0.0)
    np.testing.assert_allclose(ap.slopes, expect, rtol=1e-14)


def test_unknown_scheme_rejected():
    params = LangevinParams(m0=1.0, lam=100.0)
    with pytest.raises(ConfigError):
        build_approx(params, nodes_equidistant(3, 0.01), 0.01, scheme="spline")


def test_staircase_even_and_zero_beyond_threshold():
    params = LangevinParams(m0=1.0, lam=1600.0)
    ap = build_approx(params, nodes_equidistant(9, 0.010), 0.010)
    xs = np.array([0.0, 0.0031, 0.0099])
    np.testing.assert_allclose(eval_approx(ap, -xs), eval_approx(ap, xs))
    assert eval_approx(ap, 0.010) == 0.0
    assert eval_approx(ap, 0.5) == 0.0
    # antiderivative: odd, constant beyond b
    assert eval_approx_antiderivative(ap, -0.004) == pytest.approx(
        -eval_approx_antiderivative(ap, 0.004), rel=1e-14)
    plateau = eval_approx_antiderivative(ap, 0.010)
    assert eval_approx_antiderivative(ap, 3.0) == pytest.approx(plateau, rel=1e-14)


def test_staircase_constant_within_interval():
    params = LangevinParams(m0=1.0, lam=1600.0)
    ap = build_approx(params, nodes_equidistant(4, 0.010), 0.010)
    ladder = np.asarray(ap.ladder)
    for k in range(len(ap.slopes)):
        inside = np.linspace(ladder[k], ladder[k + 1], 7, endpoint=False)
        np.testing.assert_allclose(eval_approx(ap, inside), ap.slopes[k])


def _sup_error(params, ap, kind):
    xs = np.linspace(0.0, ap.threshold, 30001, endpoint=False)
    if kind == "derivative":
        return float(np.max(np.abs(mbar_prime(params, xs) - eval_approx(ap, xs))))
    return float(np.max(np.abs(mbar(params, xs)
                               - eval_approx_antiderivative(ap, xs))))


def test_error_bounds_single_case():
    # deeper N/scheme/node grid runs in the acceptance suite
    params = LangevinParams(m0=1.0, lam=1600.0)
    b = 0.010
    sup2 = sup_second_derivative(params, b)
    ap = build_approx(params, nodes_equidistant(7, b), b, scheme="secant")
    ladder = np.asarray(ap.ladder)
    spacing = np.diff(ladder)
    assert _sup_error(params, ap, "derivative") <= sup2 * spacing.max()
    assert _sup_error(params, ap, "antiderivative") <= sup2 * np.sum(spacing**2)


def test_l1_functional_and_optimal_nodes():
    params = LangevinParams(m0=1.0, lam=200.0)
    b = 0.010
    eq = nodes_equidistant(7, b)
    opt = nodes_l1_optimal(7, b, params)
    assert opt.shape == (7,)
    assert np.all(np.diff(opt) > 0)
    assert opt[0] > 0 and opt[-1] < b
    f_eq = l1_functional(params, eq, b)
    f_opt = l1_functional(params, opt, b)
    assert f_eq > 0 and f_opt > 0
    assert f_opt <= f_eq


def test_sup_second_derivative_scales():
    p1 = LangevinParams(m0=1.0, lam=100.0)
    p2 = LangevinParams(m0=3.0, lam=100.0)
    s1 = sup_second_derivative(p1, 0.05)
    assert s1 > 0
    assert sup_second_derivative(p2, 0.05) == pytest.approx(3.0 * s1, rel=1e-12)
