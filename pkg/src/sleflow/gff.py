"""Harmonic part of the free-boundary GFF on the upper half-plane.

The harmonic part is pinned to vanish at ``i*y0``.  Its covariance is
transported from the unit disc, where it is ``-2 log|1 - z conj(w)|``, by the
Mobius map ``m(z) = (z - i y0) / (z + i y0)`` sending ``i*y0`` to the centre.
Only finite-dimensional marginals are sampled, directly from this covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .driver import sample_stream

REGULARIZATION = 1e-10
MIN_PIN_HEIGHT = 2.0 * math.sqrt(2.0)


def mobius_to_disc(z, y0: float):
    """``(z - i y0) / (z + i y0)``; maps the closed upper half-plane into the closed unit disc."""
    if y0 <= 0:
        raise ValueError("y0 must be positive")
    z = np.asarray(z, dtype=complex)
    if np.any(np.imag(z) < 0):
        raise ValueError("points must lie in the closed upper half-plane")
    return (z - 1j * y0) / (z + 1j * y0)


def cov_disc(z, w):
    """Covariance ``-2 log|1 - z conj(w)|`` of the pinned harmonic part on the unit disc.

    Broadcasts over ``z`` and ``w``.
    """
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    if np.any(np.abs(z) >= 1) or np.any(np.abs(w) >= 1):
        raise ValueError("points must lie in the open unit disc")
    return -2.0 * np.log(np.abs(1.0 - z * np.conj(w)))


def cov_halfplane(z, w, y0: float):
    """Covariance of the harmonic part pinned at ``i*y0``, broadcast over ``z`` and ``w``."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    if np.any(np.imag(z) <= 0) or np.any(np.imag(w) <= 0):
        raise ValueError("points must lie in the open upper half-plane")
    return cov_disc(mobius_to_disc(z, y0), mobius_to_disc(w, y0))


def var_halfplane(z, y0: float):
    """Closed-form variance ``-2 log(4 y0 y / (x^2 + (y + y0)^2))`` at ``z = x + iy``."""
    z = np.asarray(z, dtype=complex)
    x, y = np.real(z), np.imag(z)
    return -2.0 * np.log(4.0 * y0 * y / (x * x + (y + y0) ** 2))


def cov_matrix(points, y0: float) -> np.ndarray:
    p = np.asarray(points, dtype=complex).ravel()
    c = cov_halfplane(p[:, None], p[None, :], y0)
    return 0.5 * (c + c.T)


def circle_average_variance(z, eps: float, check: bool = True) -> float:
    """Variance ``-log(eps) + log(2 Im z)`` of the circle average of radius ``eps``.

    ``2 Im z`` is the conformal radius of the half-plane seen from ``z``.  The
    formula needs the circle inside the domain (``eps < Im z``); ``check=False``
    evaluates it anyway, e.g. at ``eps = 2 Im z`` where it vanishes.
    """
    y = float(np.imag(z))
    if y <= 0 or eps <= 0:
        raise ValueError("need Im z > 0 and eps > 0")
    if check and eps >= y:
        raise ValueError(f"eps = {eps} must be smaller than Im z = {y}")
    return -math.log(eps) + math.log(2.0 * y)


@dataclass(frozen=True)
class PinnedHarmonicLaw:
    """Centered Gaussian law of the pinned harmonic part at a finite point set."""
    y0: float
    points: np.ndarray
    cov: np.ndarray

    @classmethod
    def build(cls, points, y0: float) -> "PinnedHarmonicLaw":
        if y0 <= MIN_PIN_HEIGHT:
            raise ValueError(f"pin height y0 = {y0} must exceed 2*sqrt(2)")
        pts = np.asarray(points, dtype=complex).ravel()
        c = cov_matrix(pts, y0)
        pinned = np.isclose(pts, 1j * y0, rtol=0, atol=1e-14)
        c[pinned, :] = 0.0
        c[:, pinned] = 0.0
        pts.setflags(write=False)
        c.setflags(write=False)
        return cls(float(y0), pts, c)

    @property
    def pinned(self) -> np.ndarray:
        return np.all(self.cov == 0.0, axis=0)

    def factor(self) -> np.ndarray:
        """Lower-triangular ``L`` with ``L L^T`` equal to the (regularized) covariance.

        Pinned rows stay exactly zero.  Falls back to a symmetric eigen-factor
        when Cholesky fails.
        """
        free = ~self.pinned
        c = self.cov[np.ix_(free, free)]
        L = np.zeros_like(self.cov)
        if c.size == 0:
            return L
        c = c + REGULARIZATION * float(np.mean(np.diag(c))) * np.eye(c.shape[0])
        try:
            Lf = linalg.cholesky(c, lower=True)
        except linalg.LinAlgError:
            vals, vecs = linalg.eigh(c)
            if vals.min() < -1e-9 * vals.sum():
                raise linalg.LinAlgError("covariance is not positive semidefinite") from None
            Lf = vecs * np.sqrt(np.clip(vals, 0.0, None))
        L[np.ix_(free, free)] = Lf
        return L


@dataclass(frozen=True)
class HarmonicFieldSample:
    law: PinnedHarmonicLaw
    values: np.ndarray


def sample_harmonic_values(points, y0: float, n: int, seed: int, key: Sequence[int] = ()) -> np.ndarray:
    """``(n, len(points))`` array of joint draws; row ``i`` uses stream ``(seed, *key, i)``."""
    law = PinnedHarmonicLaw.build(points, y0)
    L = law.factor()
    out = np.empty((n, law.points.size))
    for i in range(n):
        out[i] = L @ sample_stream(seed, *key, i).standard_normal(law.points.size)
    return out


def sample_harmonic(points, y0: float, n: int, seed: int) -> list:
    """``n`` independent samples of the harmonic part at ``points``."""
    law = PinnedHarmonicLaw.build(points, y0)
    vals = sample_harmonic_values(points, y0, n, seed)
    return [HarmonicFieldSample(law, v) for v in vals]


def variance_bound_shape(z, y0: float):
    """``-3 log(Im z) + 2 log((Re z)^2 + 4 y0^2)``, the z-dependence of the variance bound."""
    z = np.asarray(z, dtype=complex)
    return -3.0 * np.log(np.imag(z)) + 2.0 * np.log(np.real(z) ** 2 + 4.0 * y0 * y0)


def calibrate_variance_bound(y0: float, xs: Optional[np.ndarray] = None,
                             ys: Optional[np.ndarray] = None) -> float:
    """Smallest constant ``C`` with ``var(z) <= variance_bound_shape(z) + C`` on a reference grid."""
    xs = np.linspace(-20.0, 20.0, 81) if xs is None else np.asarray(xs, float)
    ys = np.geomspace(1e-4, y0, 60) if ys is None else np.asarray(ys, float)
    z = xs[:, None] + 1j * ys[None, :]
    return float(np.max(var_halfplane(z, y0) - variance_bound_shape(z, y0)))
