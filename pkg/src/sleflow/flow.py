"""Forward and reverse Loewner flows.

Forward flow:   dg/dt = 2 / (g - xi_t),        d log g' / dt = -2 / (g - xi_t)^2
Reverse flow:   df    = -2/f dt - d xi_t,      d log f' / dt =  2 / f^2

Both are integrated with an embedded Dormand--Prince 5(4) pair.  The driver
is piecewise linear between its grid points and the integrator lands on every
grid point, so the right-hand side is smooth inside each step.  The reverse
flow is integrated in the shifted variable ``F = f + xi`` which removes the
``d xi`` term:  dF/dt = -2 / (F - xi_t).

Everything is vectorized: ``z0`` may be an array of points and the driver may
hold stacked paths, in which case results have shape ``(n_paths, *z0.shape)``.

:func:`compose_slit_maps` is the exact solution for a piecewise-constant
driver, written as a product of square-root slit maps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .driver import DrivingPath, dual_driver

STEP_CAP = 0.05

# Dormand--Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


class CoarseGridWarning(UserWarning):
    """Slit-map composition error estimate exceeds the requested accuracy."""


@dataclass
class FlowState:
    """Flow evaluated at ``z0`` after time ``t``.

    ``swallowed_at`` is only set by the forward flow (NaN where a point
    survived).  ``trajectory`` holds ``(times, positions, log_derivs)`` at requested
    checkpoints.
    """
    z0: np.ndarray
    position: np.ndarray
    log_deriv: np.ndarray
    t: float
    swallowed_at: Optional[np.ndarray] = None
    trajectory: Optional[tuple] = None

    @property
    def deriv_abs(self):
        return np.exp(np.real(self.log_deriv))


def _check_interior(z0):
    z = np.asarray(z0, dtype=complex)
    if not np.all(np.imag(z) > 0):
        raise ValueError("initial points must lie in the open upper half-plane")
    return z


def _check_horizon(driver: DrivingPath, t_end: float):
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    if t_end > driver.horizon * (1 + 1e-12):
        raise ValueError(f"t_end = {t_end} beyond driver horizon {driver.horizon}")


CONTINUE, STOP, REFRESH = 0, 1, 2


def _dopri(rhs: Callable, y, t0: float, t1: float, tol: float, cap: Callable,
           stops: np.ndarray, callback: Optional[Callable] = None):
    """Integrate ``y' = rhs(t, y)`` from ``t0`` to ``t1``.

    Steps never cross a time in ``stops`` and never exceed ``cap(t, y)``.
    ``callback(t, y)`` runs after every accepted step and returns ``CONTINUE``,
    ``STOP`` or ``REFRESH`` (the right-hand side changed, e.g. a point was
    frozen, so the reused first stage must be recomputed).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    t = t0
    if t1 <= t0:
        return t, y
    stops = np.unique(np.append(stops[(stops > t0) & (stops < t1)], t1))
    si = 0
    k1 = rhs(t, y)
    h = min(cap(t, y), stops[0] - t0, 0.01 * max(t1 - t0, 1e-12))
    h_min = 1e-15 * max(1.0, abs(t1))
    while t < t1:
        target = stops[si]
        room = target - t
        h_try = min(h, cap(t, y), room)
        clipped = h_try >= room
        if clipped:
            h_try = room
        ks = [k1]
        for s in range(1, 7):
            dy = sum(a * k for a, k in zip(_A[s], ks))
            ks.append(rhs(t + _C[s] * h_try, y + h_try * dy))
        y_new = y + h_try * sum(b * k for b, k in zip(_B, ks[:6]))
        err = h_try * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
        scale = tol * (1.0 + np.maximum(np.abs(y), np.abs(y_new)))
        en = float(np.max(np.abs(err) / scale)) if np.size(err) else 0.0
        if not np.isfinite(en):
            en = 1e10
        if en <= 1.0:
            t = target if clipped else t + h_try
            if clipped:
                si += 1
            y = y_new
            k1 = ks[6]
            fac = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            h = min(max(h, h_try) * fac if clipped else h_try * fac, t1 - t0)
            if callback is not None:
                code = callback(t, y)
                if code == STOP:
                    break
                if code == REFRESH:
                    k1 = rhs(t, y)
        else:
            h = h_try * max(0.2, 0.9 * en ** -0.2)
            if h < h_min:
                raise RuntimeError(f"step size underflow at t = {t}")
    return t, y


def _grid_stops(driver: DrivingPath, extra: Optional[Sequence[float]] = None):
    stops = driver.times
    if extra is not None and len(extra):
        stops = np.union1d(stops, np.asarray(extra, dtype=float))
    return stops


def _bcast_driver(xi, z_shape):
    """Broadcast per-path driver values against point arrays of shape ``z_shape``."""
    xi = np.asarray(xi)
    return xi.reshape(xi.shape + (1,) * len(z_shape))


def forward_flow(z0, driver: DrivingPath, t_end: float, tol: float = 1e-10) -> FlowState:
    """Integrate the forward Loewner equation from ``z0`` up to ``t_end``.

    A point is declared swallowed the first time ``|g - xi| < 10 sqrt(tol)``;
    it is frozen there and ``swallowed_at`` records the time.
    """
    z = _check_interior(z0)
    _check_horizon(driver, t_end)
    n = driver.n_paths
    shape = z.shape if n is None else (n,) + z.shape
    g0 = np.broadcast_to(z, shape).astype(complex)
    y = np.stack([g0, np.zeros(shape, complex)])
    thr = 10.0 * np.sqrt(tol)
    active = np.ones(shape, bool)
    swallowed = np.full(shape, np.nan)

    def xi_at(t):
        return _bcast_driver(driver(t), z.shape)

    def rhs(t, y):
        d = y[0] - xi_at(t)
        d = np.where(active, d, 1.0)
        inv = np.where(active, 1.0 / d, 0.0)
        return np.stack([2.0 * inv, -2.0 * inv * inv])

    def cap(t, y):
        d = np.abs(y[0] - xi_at(t))[active]
        return STEP_CAP * float(np.min(d)) ** 2 if d.size else np.inf

    def callback(t, y):
        d = np.abs(y[0] - xi_at(t))
        hit = active & (d < thr)
        if not np.any(hit):
            return CONTINUE
        swallowed[hit] = t
        active[hit] = False
        return REFRESH if np.any(active) else STOP

    callback(0.0, y)
    if t_end > 0 and np.any(active):
        _, y = _dopri(rhs, y, 0.0, t_end, tol, cap, _grid_stops(driver), callback)
    return FlowState(z, y[0], y[1], float(t_end), swallowed)


def reverse_flow(z0, driver: DrivingPath, t_end: float, tol: float = 1e-10,
                 checkpoints: Optional[Sequence[float]] = None) -> FlowState:
    """Integrate the reverse Loewner flow from ``z0`` up to ``t_end``.

    The solution exists for all times; ``Im f`` is nondecreasing.
    ``checkpoints`` (times in ``[0, t_end]``) are recorded in ``trajectory``.
    """
    z = _check_interior(z0)
    _check_horizon(driver, t_end)
    n = driver.n_paths
    shape = z.shape if n is None else (n,) + z.shape
    F0 = np.broadcast_to(z, shape).astype(complex)
    y = np.stack([F0, np.zeros(shape, complex)])

    def xi_at(t):
        return _bcast_driver(driver(t), z.shape)

    def rhs(t, y):
        inv = 1.0 / (y[0] - xi_at(t))
        return np.stack([-2.0 * inv, 2.0 * inv * inv])

    def cap(t, y):
        return STEP_CAP * float(np.min(np.abs(y[0] - xi_at(t)))) ** 2

    record_t, record_f, record_d = [], [], []
    cps = np.array(sorted(checkpoints), dtype=float) if checkpoints is not None else np.array([])
    if cps.size and (cps[0] < 0 or cps[-1] > t_end + 1e-12):
        raise ValueError("checkpoints must lie in [0, t_end]")
    seen = np.zeros(cps.size, bool)

    def callback(t, y):
        hit = ~seen & (np.abs(cps - t) <= 1e-13 * max(1.0, t))
        if hit.any():
            seen[hit] = True
            record_t.append(float(cps[hit][0]))
            record_f.append(y[0] - xi_at(t))
            record_d.append(y[1].copy())
        return CONTINUE

    if cps.size and cps[0] == 0.0:
        seen[cps == 0.0] = True
        record_t.append(0.0)
        record_f.append(y[0].copy())
        record_d.append(y[1].copy())
    _, y = _dopri(rhs, y, 0.0, t_end, tol, cap, _grid_stops(driver, cps), callback)
    pos = y[0] - xi_at(t_end)
    traj = (np.array(record_t), np.array(record_f), np.array(record_d)) if cps.size else None
    return FlowState(z, pos, y[1], float(t_end), None, traj)


def centered_inverse(z, driver: DrivingPath, T: float, tol: float = 1e-10) -> FlowState:
    """``g_T^{-1}(z + xi_T)`` by integrating the forward equation backwards in time.

    Solves ``dr/ds = -2 / (r - xi_{T-s})`` from ``r_0 = z + xi_T`` over ``s in [0, T]``.
    """
    z = _check_interior(z)
    _check_horizon(driver, T)
    n = driver.n_paths
    shape = z.shape if n is None else (n,) + z.shape
    xiT = _bcast_driver(driver(T), z.shape)
    r0 = np.broadcast_to(z, shape) + xiT
    y = np.stack([r0.astype(complex), np.zeros(shape, complex)])

    def xi_at(s):
        return _bcast_driver(driver(T - s), z.shape)

    def rhs(s, y):
        inv = 1.0 / (y[0] - xi_at(s))
        return np.stack([-2.0 * inv, 2.0 * inv * inv])

    def cap(s, y):
        return STEP_CAP * float(np.min(np.abs(y[0] - xi_at(s)))) ** 2

    stops = T - driver.times[driver.times <= T][::-1]
    _, y = _dopri(rhs, y, 0.0, T, tol, cap, stops)
    return FlowState(z, y[0], y[1], float(T))


def _branch_sqrt(u):
    s = np.sqrt(u)
    return np.where(np.imag(s) < 0, -s, s)


def compose_slit_maps(driver: DrivingPath, T: float, z, with_derivative: bool = False,
                      accuracy: Optional[float] = None):
    """Approximate ``f_hat_T(z) = g_T^{-1}(z + xi_T)`` for the piecewise-constant driver.

    On ``[t_j, t_{j+1})`` the driver is frozen at ``xi(t_{j+1})``; there the inverse
    Loewner map is ``w -> c + sqrt((w - c)^2 - 4 dt)`` with the branch in the
    upper half-plane.  The maps are applied from the last interval to the first.

    With ``accuracy`` set, the result is compared with the composition on every
    other grid point and a :class:`CoarseGridWarning` is issued when the
    difference exceeds it.
    """
    z = np.asarray(z, dtype=complex)
    if np.any(np.imag(z) < 0):
        raise ValueError("points must lie in the closed upper half-plane")
    _check_horizon(driver, T)
    if T == 0:
        w = np.broadcast_to(z, z.shape if driver.n_paths is None else (driver.n_paths,) + z.shape).copy()
        return (w, np.ones_like(w)) if with_derivative else w
    d = driver.truncate(T)
    vals = d.values
    dts = np.diff(d.times)
    w = z + _bcast_driver(vals[..., -1], z.shape)
    der = np.ones_like(w) if with_derivative else None
    for j in range(dts.size - 1, -1, -1):
        c = _bcast_driver(vals[..., j + 1], z.shape)
        a = w - c
        s = _branch_sqrt(a * a - 4.0 * dts[j])
        if with_derivative:
            der = der * a / s
        w = c + s
    if accuracy is not None and dts.size >= 2:
        coarse = DrivingPath(d.times[::2] if (d.times.size - 1) % 2 == 0 else np.append(d.times[:-1:2], d.times[-1]),
                             vals[..., ::2] if (d.times.size - 1) % 2 == 0
                             else np.concatenate([vals[..., :-1:2], vals[..., -1:]], axis=-1))
        est = float(np.max(np.abs(compose_slit_maps(coarse, T, z) - w)))
        if est > accuracy:
            warnings.warn(f"slit-map composition error estimate {est:.2e} exceeds {accuracy:.2e}; "
                          "refine the driver grid", CoarseGridWarning, stacklevel=2)
    return (w, der) if with_derivative else w


def trace_point(driver: DrivingPath, t: float, y_min: float):
    """``f_hat_t(i y_min)``, a proxy for the trace point ``gamma(t)``."""
    if y_min <= 0:
        raise ValueError("y_min must be positive")
    return compose_slit_maps(driver, t, 1j * y_min)


def trace_points(driver: DrivingPath, y_min: float, n_points: Optional[int] = None,
                 t_end: Optional[float] = None):
    """Trace proxies ``f_hat_s(i y_min)`` at grid times ``s`` in ``(0, t_end]``.

    Returns ``(times, points)``; ``points`` has shape ``(..., K)``.  All trace
    points share one backward sweep, costing ``O(K * n_grid)``.
    """
    if y_min <= 0:
        raise ValueError("y_min must be positive")
    times = driver.times
    last = times.size - 1 if t_end is None else int(np.searchsorted(times, t_end + 1e-12, side="right")) - 1
    if last <= 0:
        return np.zeros(0), np.zeros(np.shape(driver.values)[:-1] + (0,), complex)
    if n_points is None or n_points >= last:
        idx = np.arange(1, last + 1)
    else:
        idx = np.unique(np.round(np.linspace(1, last, n_points)).astype(int))
    vals = driver.values
    w = 1j * y_min + vals[..., idx]
    dts = np.diff(times)
    p = idx.size
    for j in range(last - 1, -1, -1):
        while p > 0 and idx[p - 1] > j:
            p -= 1
        c = vals[..., j + 1: j + 2]
        a = w[..., p:] - c
        w[..., p:] = c + _branch_sqrt(a * a - 4.0 * dts[j])
    return times[idx], w


def reverse_hull_trace(driver: DrivingPath, t: float, y_min: float, n_points: Optional[int] = None):
    """Trace of the hull generated by the reverse flow up to time ``t``.

    The reverse flow at time ``t`` equals ``f_hat_t`` of the forward flow driven
    by ``s -> driver(t) - driver(t - s)`` negated; see :func:`~sleflow.driver.dual_driver`.
    """
    return trace_points(dual_driver(driver, t), y_min, n_points)
