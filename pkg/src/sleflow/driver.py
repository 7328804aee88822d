"""Driving functions for Loewner flows.

A :class:`DrivingPath` is a real function sampled on an increasing time grid
starting at zero.  Between grid points it is read as piecewise linear (ODE
integration) or piecewise constant (slit-map composition); see
:mod:`sleflow.flow`.

Several paths sharing one grid can be stored together: ``values`` then has
shape ``(n_paths, n_times)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .io import read_csv, write_csv


def sample_stream(master_seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the stream identified by ``(master_seed, *key)``.

    Streams are independent of each other and of the order in which they are
    requested, so Monte Carlo output does not depend on how samples are split
    across workers.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class DrivingPath:
    times: np.ndarray
    values: np.ndarray
    kappa: float = 0.0
    seed: Optional[int] = None
    _slopes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("driver needs at least two grid times")
        if times[0] != 0.0:
            raise ValueError("driver grid must start at t = 0")
        if np.any(np.diff(times) <= 0):
            raise ValueError("driver grid times must be strictly increasing")
        if values.shape[-1] != times.size or values.ndim not in (1, 2):
            raise ValueError("values must have shape (n_times,) or (n_paths, n_times)")
        if np.any(values[..., 0] != 0.0):
            raise ValueError("driver must start at 0")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_slopes", np.diff(values, axis=-1) / np.diff(times))

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def n_paths(self) -> Optional[int]:
        """Number of stacked paths, or ``None`` for a single path."""
        return None if self.values.ndim == 1 else self.values.shape[0]

    def interval(self, t: float) -> int:
        """Index ``j`` of the grid interval ``[t_j, t_{j+1}]`` containing ``t``."""
        j = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(j, 0), self.times.size - 2)

    def __call__(self, t: float):
        """Piecewise-linear value at time ``t`` (one value per stacked path)."""
        j = self.interval(t)
        return self.values[..., j] + self._slopes[..., j] * (t - self.times[j])

    def slope(self, t: float):
        return self._slopes[..., self.interval(t)]

    def sup_abs(self, t: Optional[float] = None):
        """``sup_{s <= t} |xi_s|`` of the piecewise-linear interpolant."""
        if t is None or t >= self.horizon:
            return np.max(np.abs(self.values), axis=-1)
        j = self.interval(t)
        head = np.max(np.abs(self.values[..., : j + 1]), axis=-1)
        return np.maximum(head, np.abs(self(t)))

    def path(self, i: int) -> "DrivingPath":
        """The ``i``-th stacked path as a single driver."""
        if self.values.ndim == 1:
            if i != 0:
                raise IndexError(i)
            return self
        seed = self.seed
        return DrivingPath(self.times, self.values[i], self.kappa, seed)

    def negate(self) -> "DrivingPath":
        return DrivingPath(self.times, -self.values, self.kappa, self.seed)

    def truncate(self, T: float) -> "DrivingPath":
        """Restriction to ``[0, T]``; ``T`` is added to the grid if needed."""
        if T > self.horizon + 1e-12:
            raise ValueError(f"T = {T} beyond driver horizon {self.horizon}")
        keep = self.times < T - 1e-12
        times = np.append(self.times[keep], T)
        vals = np.concatenate([self.values[..., keep], np.asarray(self(T))[..., None]], axis=-1)
        return DrivingPath(times, vals, self.kappa, self.seed)

    def to_csv(self, path, comment: str = "") -> None:
        """Write columns ``t, xi`` (single path) or ``t, xi_0, xi_1, ...``."""
        vals = np.atleast_2d(self.values)
        header = ["t", "xi"] if vals.shape[0] == 1 else ["t"] + [f"xi_{i}" for i in range(vals.shape[0])]
        write_csv(path, header, np.column_stack([self.times, vals.T]), comment)

    @classmethod
    def from_csv(cls, path, kappa: float = 0.0) -> "DrivingPath":
        _, _, rows = read_csv(path)
        data = np.array(rows, dtype=float)
        vals = data[:, 1:].T
        return cls(data[:, 0], vals[0] if vals.shape[0] == 1 else vals, kappa)


def _uniform_grid(T: float, dt: float) -> np.ndarray:
    if not (T > 0 and 0 < dt <= T):
        raise ValueError(f"invalid grid: T={T}, dt={dt}")
    m = max(1, int(math.ceil(T / dt - 1e-9)))
    return np.linspace(0.0, T, m + 1)


def sample_brownian_driver(kappa: float, T: float, dt: float, seed: int,
                           n: Optional[int] = None, key: Sequence[int] = ()) -> DrivingPath:
    """``sqrt(kappa)`` times standard Brownian motion on a uniform grid.

    With ``n`` given, ``n`` paths are stacked; path ``i`` uses the stream
    ``(seed, *key, i)`` and therefore does not depend on ``n``.
    """
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    if n is None:
        times = _uniform_grid(T, dt)
        scale = np.sqrt(kappa * np.diff(times))
        inc = sample_stream(seed, *key).standard_normal(scale.size) * scale
        return DrivingPath(times, np.concatenate([[0.0], np.cumsum(inc)]), float(kappa), seed)
    return brownian_batch(kappa, T, dt, seed, key, range(n))


def brownian_batch(kappa: float, T: float, dt: float, seed: int, key: Sequence[int],
                   indices: Sequence[int]) -> DrivingPath:
    """Stacked Brownian drivers for the given sample ``indices`` of one stream family."""
    times = _uniform_grid(T, dt)
    scale = np.sqrt(kappa * np.diff(times))
    vals = np.zeros((len(indices), times.size))
    for r, i in enumerate(indices):
        inc = sample_stream(seed, *key, i).standard_normal(scale.size) * scale
        np.cumsum(inc, out=vals[r, 1:])
    return DrivingPath(times, vals, float(kappa), seed)


def deterministic_driver(func: Callable[[np.ndarray], np.ndarray], T: float, dt: float) -> DrivingPath:
    """Sample ``func`` on a uniform grid; ``func(0)`` is subtracted so the path starts at 0."""
    times = _uniform_grid(T, dt)
    vals = np.asarray(func(times), dtype=float) * np.ones_like(times)
    return DrivingPath(times, vals - vals[0], 0.0, None)


def zero_driver(T: float, dt: float = 1e-3) -> DrivingPath:
    times = _uniform_grid(T, dt)
    return DrivingPath(times, np.zeros_like(times), 0.0, None)


def reverse_driver(driver: DrivingPath, T: float) -> DrivingPath:
    """Time reversal ``s -> xi_T - xi_{T-s}`` on the mirrored grid ``[0, T]``.

    ``T`` is snapped to the nearest grid time (with a warning) if it is off-grid.
    """
    times = driver.times
    k = int(np.argmin(np.abs(times - T)))
    if abs(times[k] - T) > 1e-12 * max(1.0, T):
        warnings.warn(f"T = {T} is not on the driver grid; snapping to {times[k]}", stacklevel=2)
    if k == 0:
        raise ValueError("T must be positive")
    T = times[k]
    rev_t = T - times[k::-1]
    rev_t[0] = 0.0
    v = driver.values[..., : k + 1]
    rev_v = v[..., k : k + 1] - v[..., ::-1]
    return DrivingPath(rev_t, rev_v, driver.kappa, driver.seed)


def dual_driver(driver: DrivingPath, T: float) -> DrivingPath:
    """``s -> xi_{T-s} - xi_T``: the reverse-flow driver that reproduces ``f_hat_T`` pathwise.

    With ``df = -2/f dt - d eta``, the reverse flow driven by this path satisfies
    ``f_T = g_T^{-1}(. + xi_T)`` exactly.  It is the negative of
    :func:`reverse_driver`; the two agree in law for Brownian drivers.  The map
    is an involution as well.
    """
    return reverse_driver(driver, T).negate()


def tail_grid_dt(y_min: float) -> float:
    """Grid spacing ``min(1e-3, y^2/10)`` used when evaluating at heights down to ``y_min``."""
    return min(1e-3, y_min * y_min / 10.0)
