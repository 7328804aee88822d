import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sleflow.driver import (DrivingPath, brownian_batch, deterministic_driver, dual_driver,
                            sample_brownian_driver, zero_driver)
from sleflow.flow import (CoarseGridWarning, centered_inverse, compose_slit_maps, forward_flow, reverse_flow,
                          reverse_hull_trace, trace_point, trace_points)
from sleflow.hull import distance_to_boundary, hull_summary, is_simple

# Reference values for the driver sin(t), z0 = i (or 3i), t = 1: fixed-step RK4 on the
# exact driver at dt = 1e-6 and 2e-6, Richardson-extrapolated (pure Python, independent
# of the package).
SIN_FORWARD_I = (-1.3382981715611864 + 0.13116604433300352j, -0.20777629184691546 - 1.091306748425602j)
SIN_FORWARD_3I = (-0.14728951127952522 + 2.2810798396459333j, 0.24341103221551919 - 0.10788325745374301j)
SIN_REVERSE_I = (-0.62409978435506 + 2.1967270657447746j, -0.7366005933071235 + 0.2447074802326413j)


def test_zero_driver_forward_closed_form():
    d = zero_driver(1.0, 1e-2)
    s = forward_flow(3j, d, 1.0, tol=1e-12)
    assert s.position == pytest.approx(1j * np.sqrt(5), abs=1e-10)
    s = forward_flow(2j, d, 0.5, tol=1e-12)
    assert s.position == pytest.approx(np.sqrt(-4 + 2 + 0j), abs=1e-10)
    assert np.isnan(s.swallowed_at)


def test_zero_driver_swallowing_time():
    d = zero_driver(1.0, 1e-2)
    s = forward_flow(0.5j, d, 1.0, tol=1e-12)
    assert s.swallowed_at == pytest.approx(0.0625, abs=1e-8)
    assert abs(s.position) < 10 * np.sqrt(1e-12)


def test_zero_driver_reverse_closed_form():
    d = zero_driver(1.0, 1e-2)
    s = reverse_flow(1j, d, 1.0, tol=1e-12)
    assert s.position == pytest.approx(2.2360679774997896j, abs=1e-10)
    assert s.deriv_abs == pytest.approx(0.4472135954999579, abs=1e-10)


def test_sin_driver_against_reference():
    d = deterministic_driver(np.sin, 1.0, 1e-4)
    for z0, ref in ((1j, SIN_FORWARD_I), (3j, SIN_FORWARD_3I)):
        s = forward_flow(z0, d, 1.0, tol=1e-12)
        assert abs(s.position - ref[0]) < 1e-8
        assert abs(s.log_deriv - ref[1]) < 1e-8
    s = reverse_flow(1j, d, 1.0, tol=1e-12)
    assert abs(s.position - SIN_REVERSE_I[0]) < 1e-8
    assert abs(s.log_deriv - SIN_REVERSE_I[1]) < 1e-8


def test_reverse_flow_monotone_height_and_bound():
    d = sample_brownian_driver(4.0, 1.0, 1e-3, seed=3)
    cps = np.linspace(0, 1, 21)
    s = reverse_flow(np.array([0.1j, 0.5j, 1j]), d, 1.0, tol=1e-10, checkpoints=cps)
    ts, fs, ld = s.trajectory
    np.testing.assert_allclose(ts, cps, atol=1e-12)
    assert np.all(np.diff(fs.imag, axis=0) >= -1e-12)
    y = np.array([0.1, 0.5, 1.0])
    assert np.all(fs.imag <= np.sqrt(4 * ts[:, None] + y ** 2) + 1e-9)
    np.testing.assert_allclose(ld[-1], s.log_deriv, atol=0)
    assert np.all(ld[0] == 0)


def test_log_derivative_matches_finite_difference():
    d = sample_brownian_driver(2.0, 1.0, 1e-3, seed=8)
    z = np.array([0.3 + 0.4j, 0.2j, -1 + 1j])
    h = 1e-5
    s = reverse_flow(z, d, 1.0, tol=1e-13)
    fd = (reverse_flow(z + h, d, 1.0, tol=1e-13).position - reverse_flow(z - h, d, 1.0, tol=1e-13).position) / (2 * h)
    deriv = np.exp(s.log_deriv)
    assert np.max(np.abs(fd - deriv) / np.abs(deriv)) < 1e-4
    g = forward_flow(z + 2j, d, 0.5, tol=1e-13)
    fdg = (forward_flow(z + 2j + h, d, 0.5, tol=1e-13).position
           - forward_flow(z + 2j - h, d, 0.5, tol=1e-13).position) / (2 * h)
    assert np.max(np.abs(fdg - np.exp(g.log_deriv)) / np.abs(fdg)) < 1e-4


def test_stacked_paths_match_single_paths():
    d = brownian_batch(2.0, 0.5, 1e-3, 4, (), range(3))
    z = np.array([0.5j, 1 + 1j])
    s = reverse_flow(z, d, 0.5, tol=1e-11)
    for i in range(3):
        si = reverse_flow(z, d.path(i), 0.5, tol=1e-11)
        np.testing.assert_allclose(s.position[i], si.position, atol=1e-9)


def test_errors():
    d = zero_driver(1.0, 0.1)
    with pytest.raises(ValueError):
        forward_flow(-1j, d, 0.5)
    with pytest.raises(ValueError):
        reverse_flow(1j, d, 2.0)
    with pytest.raises(ValueError):
        forward_flow(1j, d, 0.5, tol=0)


def test_composition_zero_driver_and_single_step():
    d = zero_driver(1.0, 1e-2)
    assert compose_slit_maps(d, 1.0, 1j) == pytest.approx(1j * np.sqrt(5), abs=1e-12)
    one = DrivingPath([0.0, 0.3], [0.0, 0.4])
    z = 0.2 + 0.7j
    c = 0.4
    w = z + c
    expect = c + np.sqrt((w - c) ** 2 - 4 * 0.3)
    expect = expect if expect.imag >= 0 else 2 * c - expect
    assert compose_slit_maps(one, 0.3, z) == pytest.approx(expect, abs=1e-14)


def test_composition_matches_reverse_flow_with_dual_driver():
    d = sample_brownian_driver(2.0, 1.0, 1e-4, seed=12)
    c = compose_slit_maps(d, 1.0, 0.5j)
    r = reverse_flow(0.5j, dual_driver(d, 1.0), 1.0, tol=1e-11)
    assert abs(c - r.position) < 1e-3


def test_composition_derivative():
    d = deterministic_driver(lambda t: np.sin(3 * t), 1.0, 1e-3)
    z = np.array([0.4j, 1 + 0.5j])
    w, der = compose_slit_maps(d, 1.0, z, with_derivative=True)
    h = 1e-6
    fd = (compose_slit_maps(d, 1.0, z + h) - compose_slit_maps(d, 1.0, z - h)) / (2 * h)
    np.testing.assert_allclose(der, fd, rtol=1e-6)


def test_coarse_grid_warning():
    d = sample_brownian_driver(4.0, 1.0, 1e-2, seed=1)
    with pytest.warns(CoarseGridWarning):
        compose_slit_maps(d, 1.0, 0.01j, accuracy=1e-9)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        compose_slit_maps(zero_driver(1.0, 1e-2), 1.0, 1j, accuracy=1e-9)


def test_time_reversal_identity_pathwise():
    for f in (np.sin, lambda t: t, lambda t: t * np.sin(5 * t)):
        d = deterministic_driver(f, 1.0, 1e-3)
        z = np.array([0.1j, 0.5j, 1j, 1 + 1j, -2 + 0.3j])
        a = centered_inverse(z, d, 1.0, tol=1e-12)
        b = reverse_flow(z, dual_driver(d, 1.0), 1.0, tol=1e-12)
        np.testing.assert_allclose(a.position, b.position, atol=1e-9)
        np.testing.assert_allclose(a.log_deriv, b.log_deriv, atol=1e-9)


def test_trace_point_limits():
    d = zero_driver(1.0, 1e-3)
    assert trace_point(d, 1.0, 1e-3) == pytest.approx(1j * np.sqrt(4 + 1e-6), abs=1e-12)
    assert trace_point(d, 0.0, 0.01) == pytest.approx(0.01j)
    times, pts = trace_points(d, 1e-6, n_points=11)
    np.testing.assert_allclose(pts.imag, 2 * np.sqrt(times), atol=1e-9)


def test_trace_points_vectorized_match_single():
    d = sample_brownian_driver(2.0, 0.5, 1e-3, seed=2)
    times, pts = trace_points(d, 1e-3, n_points=7)
    for t, p in zip(times, pts):
        assert abs(trace_point(d, t, 1e-3) - p) < 1e-12


def test_sle2_trace_is_simple():
    d = sample_brownian_driver(2.0, 1.0, 1e-3, seed=21)
    _, pts = trace_points(d, 1e-4)
    assert is_simple(np.concatenate([[0.0], pts]))


def test_reverse_hull_contains_its_flow_image():
    # the point f_t(iy) lies outside the hull of the reverse flow and close to it when y is small
    d = sample_brownian_driver(2.0, 0.5, 1e-4, seed=5)
    f = reverse_flow(1e-3j, d, 0.5, tol=1e-11).position
    _, tr = reverse_hull_trace(d, 0.5, 1e-4)
    assert distance_to_boundary(f, np.concatenate([[0.0], tr])) < 0.05


def test_hull_summary_zero_driver():
    d = zero_driver(1.0, 1e-3)
    hs = hull_summary(d, 1.0, 1e-6)
    assert hs.hcap == 2.0
    assert hs.height == pytest.approx(2.0, abs=1e-9)
    assert hs.height <= 2 * np.sqrt(hs.hcap)
    empty = hull_summary(d, 0.0, 1e-6)
    assert empty.height == 0 and empty.hcap == 0 and empty.trace.size == 0


def test_hull_height_bound_kappa_8_3():
    d = brownian_batch(8 / 3, 1.0, 1e-3, 77, (), range(200))
    _, pts = trace_points(d, 1e-4, n_points=250)
    assert np.all(pts.imag.max(axis=1) <= 2 * np.sqrt(2.0) + 1e-9)


def test_koebe_sandwich_zero_driver():
    d = zero_driver(1.0, 1e-3)
    s = reverse_flow(1j, d, 1.0, tol=1e-12)
    _, tr = trace_points(d, 1e-8)
    dist = distance_to_boundary(s.position, np.concatenate([[0.0], tr]))
    assert dist == pytest.approx(np.sqrt(5) - 2, abs=1e-6)
    assert 0.25 * s.deriv_abs <= dist <= abs(s.position)


def test_koebe_sandwich_on_samples():
    d = brownian_batch(2.0, 1.0, 1e-4, 31, (), range(20))
    y = 0.1
    s = reverse_flow(1j * y, d, 1.0, tol=1e-10)
    for i in range(20):
        _, tr = reverse_hull_trace(d.path(i), 1.0, 1e-5)
        dist = distance_to_boundary(s.position[i], np.concatenate([[0.0], tr]))
        assert 0.25 * y * s.deriv_abs[i] <= dist + 1e-6
        assert dist <= abs(s.position[i]) + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0.0, 1.0))
def test_reverse_closed_form_property(y, t):
    d = zero_driver(1.0, 1e-2)
    s = reverse_flow(1j * y, d, t, tol=1e-12)
    assert s.position.imag == pytest.approx(np.sqrt(4 * t + y * y), abs=1e-8)
    assert s.deriv_abs == pytest.approx(y / np.sqrt(y * y + 4 * t), abs=1e-8)


def test_swallowing_one_point_does_not_stall_the_others():
    d = zero_driver(1.0, 1e-2)
    ys = np.array([0.05, 0.1, 0.5, 3.0])
    s = forward_flow(1j * ys, d, 1.0, tol=1e-12)
    np.testing.assert_allclose(s.swallowed_at[:3], ys[:3] ** 2 / 4, atol=1e-9)
    assert np.isnan(s.swallowed_at[3])
    assert s.position[3] == pytest.approx(1j * np.sqrt(5), abs=1e-9)


def test_real_part_is_stochastically_dominated():
    kappa = 4.0
    cps = np.linspace(0, 1, 51)
    d = brownian_batch(kappa, 1.0, 1e-3, 3, (0,), range(2000))
    _, fs, _ = reverse_flow(0.5j, d, 1.0, tol=1e-8, checkpoints=cps).trajectory
    sup_re = np.max(np.abs(fs.real), axis=0)
    ref = brownian_batch(kappa, 1.0, 1e-3, 3, (1,), range(2000))
    dom = 2 * np.max(np.abs(ref.values), axis=-1)
    qs = np.linspace(0.05, 0.95, 19)
    assert np.all(np.quantile(sup_re, qs) <= np.quantile(dom, qs))
