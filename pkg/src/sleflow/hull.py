"""Hull statistics: trace, height, half-plane capacity and a Brownian estimator of it."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import shapely

from .driver import DrivingPath, sample_stream
from .flow import trace_points
from .io import write_csv


@dataclass(frozen=True)
class HullSummary:
    hcap: float
    height: float
    trace: np.ndarray
    times: np.ndarray
    resolution: float

    def to_csv(self, path, comment: str = "") -> None:
        write_csv(path, ["t", "re", "im"],
                  np.column_stack([self.times, self.trace.real, self.trace.imag]), comment)


def hull_summary(driver: DrivingPath, T: float, resolution: float,
                 n_points: Optional[int] = None) -> HullSummary:
    """Trace, height and capacity of the hull grown by ``driver`` up to time ``T``.

    The trace is sampled at grid times with proxy height ``resolution``;
    ``hcap`` is ``2T`` by the normalization of the flow.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    if driver.n_paths is not None:
        raise ValueError("hull_summary takes a single path")
    if T == 0:
        return HullSummary(0.0, 0.0, np.zeros(0, complex), np.zeros(0), resolution)
    times, pts = trace_points(driver, resolution, n_points, t_end=T)
    height = float(np.max(pts.imag)) if pts.size else 0.0
    return HullSummary(2.0 * T, height, pts, times, resolution)


def distance_to_polyline(w, polyline) -> np.ndarray:
    """Euclidean distance from each point of ``w`` to a polyline (single points allowed)."""
    w = np.asarray(w, dtype=complex)
    p = np.asarray(polyline, dtype=complex).ravel()
    if p.size == 0:
        return np.full(w.shape, np.inf)
    if p.size == 1:
        return np.abs(w - p[0])
    a, b = p[:-1], p[1:]
    d = b - a
    flat = w.reshape(-1, 1)
    L2 = np.abs(d) ** 2
    s = np.real((flat - a) * np.conj(d)) / np.where(L2 > 0, L2, 1.0)
    s = np.clip(s, 0.0, 1.0)
    dist = np.min(np.abs(flat - (a + s * d)), axis=1)
    return dist.reshape(w.shape)


def distance_to_boundary(w, polyline) -> np.ndarray:
    """Distance to the polyline union the real line."""
    w = np.asarray(w, dtype=complex)
    return np.minimum(distance_to_polyline(w, polyline), np.abs(w.imag))


def is_simple(polyline) -> bool:
    """True when the polyline has no self-intersection."""
    p = np.asarray(polyline, dtype=complex).ravel()
    if p.size < 3:
        return True
    return bool(shapely.LineString(np.column_stack([p.real, p.imag])).is_simple)


@dataclass(frozen=True)
class HcapEstimate:
    value: float
    stderr: float
    n_walkers: int
    n_exhausted: int


def estimate_hcap_mc(hull_polyline, n_walkers: int, y_launch: float, seed: int = 0,
                     shell: float = 1e-6, max_steps: int = 10_000) -> HcapEstimate:
    """``y_launch * E[Im B_tau]`` for Brownian motion started at ``i*y_launch``.

    ``tau`` is the first hit of the hull or the real line.  The walk is
    simulated by walk-on-spheres: each step jumps to a uniform point on the
    largest circle that avoids both, and a walker within ``shell`` (relative to
    ``y_launch``) of either is stopped.  Walkers still alive after
    ``max_steps`` count as real-line hits.
    """
    poly = np.asarray(hull_polyline, dtype=complex).ravel()
    if np.any(poly.imag < 0):
        raise ValueError("hull must lie in the closed upper half-plane")
    if poly.size and y_launch <= poly.imag.max():
        raise ValueError("launch height must exceed the hull height")
    if n_walkers < 2:
        raise ValueError("need at least two walkers")
    rng = sample_stream(seed, 0)
    eps = shell * y_launch
    z = np.full(n_walkers, 1j * y_launch)
    val = np.zeros(n_walkers)
    alive = np.arange(n_walkers)
    for _ in range(max_steps):
        if alive.size == 0:
            break
        w = z[alive]
        dh = distance_to_polyline(w, poly)
        r = np.minimum(dh, w.imag)
        stop = r < eps
        hit_hull = stop & (dh <= w.imag)
        val[alive[hit_hull]] = w.imag[hit_hull]
        alive = alive[~stop]
        r = r[~stop]
        theta = rng.uniform(0.0, 2.0 * math.pi, alive.size)
        z[alive] = z[alive] + r * np.exp(1j * theta)
    n_left = int(alive.size)
    est = y_launch * val
    return HcapEstimate(float(est.mean()), float(est.std(ddof=1) / math.sqrt(n_walkers)),
                        n_walkers, n_left)
