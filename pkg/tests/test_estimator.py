import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sleflow.driver import DrivingPath, zero_driver
from sleflow.estimator import (TailEstimate, decomposition_holds, exponent_params, fit_exponent, fit_tail,
                               holder_objective, q_exponent, tail_experiment)


def test_exponent_values():
    assert q_exponent(8.0) == pytest.approx(2.0)
    assert q_exponent(4.0) == pytest.approx(2.25)
    p = exponent_params(4.0)
    assert p.Q == pytest.approx(2.0)
    assert p.a_max == pytest.approx(3.0)
    assert p.b == pytest.approx(1.5)
    with pytest.raises(ValueError):
        exponent_params(0.0)
    with pytest.raises(ValueError):
        exponent_params(2.0, a=1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 12.0))
def test_objective_maximum_is_q(kappa):
    p = exponent_params(kappa)
    assert holder_objective(p, p.a_max) == pytest.approx(p.q, rel=1e-12)
    a = np.linspace(1.0001, 4 * p.a_max, 4001)
    assert holder_objective(p, a).max() <= p.q * (1 + 1e-12)


def test_weighted_fit_exact_line_and_interval():
    x = np.log([0.5, 0.25, 0.125])
    y = 1.3 - 2.2 * x
    w = np.array([1.0, 4.0, 9.0])
    fit = fit_exponent(x, y, w)
    assert fit.slope == pytest.approx(-2.2)
    assert fit.intercept == pytest.approx(1.3)
    xb = np.sum(w * x) / w.sum()
    assert fit.slope_se == pytest.approx(1 / math.sqrt(np.sum(w * (x - xb) ** 2)))
    assert fit.ci[0] < -2.2 < fit.ci[1]
    with pytest.raises(ValueError):
        fit_exponent([1, 1], [2, 3], [1, 1])
    with pytest.raises(ValueError):
        fit_exponent([1, 2], [2, 3], [1, 0])


def test_fit_tail_recovers_power_law_and_drops_empty_cells():
    y = np.array([0.5, 0.25, 0.125, 0.0625])
    n = np.full(4, 10 ** 8)
    counts = np.round(n * 0.3 * y ** 2.5).astype(int)
    counts[-1] = 0
    est = fit_tail(TailEstimate(2.0, 0.1, 1.0, y, n, counts))
    assert est.fitted_slope == pytest.approx(2.5, abs=1e-3)
    assert est.conclusive
    one = fit_tail(TailEstimate(2.0, 0.1, 1.0, y, n, np.array([5, 0, 0, 0])))
    assert not one.conclusive and math.isnan(one.fitted_slope)


def test_monotonicity_check():
    y = np.array([0.5, 0.25])
    n = np.array([1000, 1000])
    assert TailEstimate(2.0, 0.1, 1.0, y, n, np.array([100, 20])).monotone_within()
    assert not TailEstimate(2.0, 0.1, 1.0, y, n, np.array([20, 100])).monotone_within()


def test_zero_driver_never_exceeds():
    est = tail_experiment(2.0, 0.1, [0.5, 0.25], 50, 1.0, 0,
                          driver_factory=lambda idx: zero_driver(1.0, 1e-3))
    assert est.exceed_counts.tolist() == [0, 0]
    assert not est.conclusive


def test_deterministic_driver_factory_counts_all_or_nothing():
    # a driver that sits next to iy makes the derivative large at small times only;
    # with a stacked factory every row is the same path so counts are 0 or n
    def factory(idx):
        t = np.linspace(0, 1, 1001)
        v = np.sin(20 * t)
        return DrivingPath(t, np.tile(v, (len(idx), 1)))
    est = tail_experiment(2.0, 0.2, [0.5, 0.1], 7, 1.0, 0, driver_factory=factory, batch=3)
    assert set(est.exceed_counts.tolist()) <= {0, 7}


def test_tail_experiment_is_thread_independent(tmp_path):
    a = tail_experiment(4.0, 0.1, [0.5, 0.25], 300, 1.0, 9, batch=100, threads=1)
    b = tail_experiment(4.0, 0.1, [0.5, 0.25], 300, 1.0, 9, batch=100, threads=3)
    a.to_csv(tmp_path / "a.csv", "seed=9")
    b.to_csv(tmp_path / "b.csv", "seed=9")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert a.koebe_ok.tolist() == a.exceed_counts.tolist()


def test_input_validation():
    for bad in (dict(y_grid=[]), dict(y_grid=[1.5]), dict(t=0.0), dict(epsilon=0.6), dict(n_per_y=0)):
        kw = dict(kappa=2.0, epsilon=0.1, y_grid=[0.5], n_per_y=10, t=1.0, master_seed=0)
        kw.update(bad)
        with pytest.raises(ValueError):
            tail_experiment(**kw)
    with pytest.raises(ValueError):
        decomposition_holds(TailEstimate(2.0, 0.1, 1.0, np.array([0.5]), np.array([1]), np.array([0])))


def test_objective_roots():
    for kappa in (0.5, 2.0, 8.0):
        p = exponent_params(kappa)
        assert holder_objective(p, 0.0) == 0.0
        assert holder_objective(p, p.Q ** 2 * p.slope_coefficient) == pytest.approx(0.0, abs=1e-12)
        assert 1 / p.a + 1 / p.b == pytest.approx(1.0)


def test_two_point_fit_interpolates():
    fit = fit_exponent([0.0, 2.0], [1.0, 7.0], [3.0, 5.0])
    assert fit.slope == pytest.approx(3.0)


def test_slope_interval_coverage():
    rng = np.random.default_rng(1)
    x = np.log([0.5, 0.25, 0.125, 0.0625])
    sd = np.array([0.05, 0.1, 0.2, 0.4])
    hits = 0
    reps = 10_000
    for _ in range(reps):
        y = 0.5 + 3.125 * x + sd * rng.standard_normal(4)
        lo, hi = fit_exponent(x, y, 1 / sd ** 2).ci
        hits += lo <= 3.125 <= hi
    assert hits / reps >= 0.90
