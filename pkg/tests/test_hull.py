import math

import numpy as np
import pytest

from sleflow.hull import distance_to_boundary, distance_to_polyline, estimate_hcap_mc, is_simple


def test_distance_to_polyline():
    poly = np.array([0, 1j, 1 + 1j])
    assert distance_to_polyline(0.5 + 0.5j, poly) == pytest.approx(0.5)
    assert distance_to_polyline(2 + 1j, poly) == pytest.approx(1.0)
    assert distance_to_polyline(3j, [1j]) == pytest.approx(2.0)
    assert distance_to_polyline(3j, []) == np.inf
    assert distance_to_boundary(0.5 + 0.2j, poly) == pytest.approx(0.2)


def test_is_simple():
    assert is_simple([0, 1j, 1 + 1j])
    assert not is_simple([0, 1 + 1j, 1j, 0.5 - 0.5j + 0.5j + 0.2])


@pytest.mark.parametrize("hcap", [0.5, 1.0, 2.0])
def test_walk_on_spheres_capacity_of_a_slit(hcap):
    a = math.sqrt(2 * hcap)
    y = 20.0
    exact = y * (y - math.sqrt(y * y - a * a))   # y E[Im B_tau] at finite launch height
    e = estimate_hcap_mc([0, 1j * a], 20000, y, seed=1)
    assert e.n_exhausted == 0
    assert abs(e.value - exact) < 4 * e.stderr
    assert abs(exact - hcap) < 0.01 * hcap


def test_capacity_estimator_is_reproducible_and_checks_input():
    a = estimate_hcap_mc([0, 1j], 200, 10.0, seed=3)
    b = estimate_hcap_mc([0, 1j], 200, 10.0, seed=3)
    assert a == b
    with pytest.raises(ValueError):
        estimate_hcap_mc([0, 2j], 100, 1.0)
    with pytest.raises(ValueError):
        estimate_hcap_mc([0, -1j], 100, 10.0)


def test_empty_hull_has_zero_capacity():
    e = estimate_hcap_mc([], 500, 5.0, seed=0)
    assert e.value == 0.0


def test_flow_slit_capacity_is_twice_time():
    t = 0.5
    e = estimate_hcap_mc([0, 2j * math.sqrt(t)], 20000, 50.0, seed=2)
    assert abs(e.value - 2 * t) < 3 * e.stderr + 2e-3
