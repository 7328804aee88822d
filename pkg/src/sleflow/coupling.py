"""Reverse-flow / free-field coupling observable.

For a reverse SLE flow ``f_t`` and an independent free field ``h`` whose
harmonic part vanishes at ``i*y0``, set

    H(z) = Q log|f_t'(z)| + Harm_{H_t}(h)(f_t(z)) + (2/sqrt(kappa)) log(|f_t(z)| / |z|),

with ``Q = 2/sqrt(kappa) + sqrt(kappa)/2`` and ``H_t = f_t(H)``.  The coupling
constant is ``b_t = H(i y0)`` and ``G = H - b_t`` should have the law of the
pinned harmonic part, i.e. covariance :func:`~sleflow.gff.cov_halfplane`.

``Harm_{H_t}(h)`` is computed on a lattice (see :mod:`sleflow.lattice`).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, stats

from .driver import DrivingPath, brownian_batch, dual_driver, sample_brownian_driver, sample_stream
from .flow import reverse_flow, trace_points
from .io import write_csv
from .lattice import (CONTINUUM_SCALE, HarmonicExtender, LatticeDomain, SeparableGreen,
                      calibrate_variance_scale, dirichlet_set, rasterize_polyline, spectral_field)

DEFAULT_PROBES = (0.5j, 1j, 1 + 1j)


@dataclass(frozen=True)
class CouplingParams:
    kappa: float
    y0: float = 4.0
    t: float = 0.25

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.y0 > 2 * math.sqrt(2):
            raise ValueError("y0 must exceed 2*sqrt(2)")
        if not 0 <= self.t <= 1:
            raise ValueError("t must lie in [0, 1]")

    @property
    def Q(self) -> float:
        return 2 / math.sqrt(self.kappa) + math.sqrt(self.kappa) / 2


def _psd_factor(C: np.ndarray) -> np.ndarray:
    C = 0.5 * (C + C.T)
    scale = max(float(np.mean(np.diag(C))), 1e-300)
    try:
        return linalg.cholesky(C + 1e-12 * scale * np.eye(C.shape[0]), lower=True)
    except linalg.LinAlgError:
        w, V = linalg.eigh(C)
        return V * np.sqrt(np.clip(w, 0, None))


class ZeroHarmonic:
    """The field ``h = 0``."""

    def __call__(self, images, blocked, rng):
        n = np.size(images)
        return np.zeros(n), np.zeros(n)

    def row_limits(self):
        return None


class MarkovHarmonic:
    """Lattice harmonic part through :class:`~sleflow.lattice.SeparableGreen`.

    Per sample, the real-axis part ``u`` is drawn at the interpolation corners
    of the images (relative to ``u(i y0)``) and the grounded part on the hull
    nodes; the extension of the latter is a small dense solve.  The returned
    conditional variances are the exact variances of the harmonic part at the
    images given the hull.
    """

    def __init__(self, green: SeparableGreen, y0: float):
        self.green = green
        self.domain = green.domain
        self.y0 = float(y0)
        self.s = green.variance_scale
        self._ref = self.domain.bilinear(np.array([1j * self.y0]))

    @classmethod
    def build(cls, params: CouplingParams, delta: float = 0.05, box_scale: float = 8.0,
              z_ref: Optional[complex] = None, max_probe_im: float = 2.0,
              variance_scale: Optional[float] = None) -> "MarkovHarmonic":
        """Box ``[-L, L] x [0, L]`` with ``L = box_scale * y0``, calibrated at ``z_ref``.

        ``z_ref`` defaults to ``i y0 / 2``.  Table rows cover images of probes
        with ``Im <= max(max_probe_im, y0)`` and hulls of height ``2 sqrt(2t)``.
        """
        dom = LatticeDomain.for_pin(params.y0, delta, box_scale)
        top = math.sqrt(4 * params.t + max(max_probe_im, params.y0) ** 2)
        row_max = min(dom.ny - 1, int(math.ceil(top / delta)) + 2)
        hull_rows = min(row_max, int(math.ceil(2 * math.sqrt(2 * params.t) / delta)) + 2)
        g = SeparableGreen(dom, row_max, max(hull_rows, 1), 1.0)
        if variance_scale is None:
            zr = 0.5j * params.y0 if z_ref is None else z_ref
            variance_scale = calibrate_variance_scale(g, zr, params.y0)
        g.variance_scale = float(variance_scale)
        return cls(g, params.y0)

    def conditional_variance(self, images, blocked):
        return self._moments(images, blocked)[2]

    def _moments(self, images, blocked):
        g = self.green
        i, j, w = self.domain.bilinear(np.asarray(images).ravel())
        ri, rj, rw = self._ref
        P = w.shape[0]
        ni = np.concatenate([i.ravel(), ri.ravel()])
        nj = np.concatenate([j.ravel(), rj.ravel()])
        M = np.zeros((P, ni.size))
        for p in range(P):
            M[p, 4 * p: 4 * p + 4] = w[p]
            M[p, 4 * P:] = -rw[0]
        Su = self.s * (M @ g.cov_u(ni, nj) @ M.T)
        hb = np.array(blocked, bool, copy=True)
        hb[0, :] = False
        bj, bi = np.nonzero(hb)
        if bi.size:
            GBB = g.green(bi, bj, bi, bj)
            GaB = g.green(i.ravel(), j.ravel(), bi, bj)
            X = linalg.solve_triangular(linalg.cholesky(GBB, lower=True), GaB.T, lower=True)
            Y = math.sqrt(self.s) * (X @ M[:, : 4 * P].T)
        else:
            Y = np.zeros((0, P))
        var = np.diag(Su) + np.sum(Y * Y, axis=0)
        return Su, Y, var

    def __call__(self, images, blocked, rng):
        Su, Y, var = self._moments(images, blocked)
        vals = _psd_factor(Su) @ rng.standard_normal(Su.shape[0])
        if Y.shape[0]:
            vals = vals + Y.T @ rng.standard_normal(Y.shape[0])
        return vals, var


class DirectHarmonic:
    """Lattice harmonic part from a full field sample and sparse Dirichlet solves.

    Exact but slow; meant for small boxes and for cross-checking
    :class:`MarkovHarmonic` (the two agree in law).
    """

    def __init__(self, domain: LatticeDomain, variance_scale: float = CONTINUUM_SCALE):
        self.domain = domain
        self.s = float(variance_scale)
        self._empty = HarmonicExtender(domain, dirichlet_set(domain))

    def __call__(self, images, blocked, rng):
        h = spectral_field(self.domain, rng, self.s)
        dom = self.domain.with_blocked(blocked)
        ext = HarmonicExtender(dom, dirichlet_set(dom, blocked))(h)
        ref = self.domain.interpolate(self._empty(h), 1j * self.domain.y0)
        vals = self.domain.interpolate(ext, np.asarray(images).ravel()) - ref
        return vals, np.full(vals.shape, np.nan)


@dataclass
class CouplingSample:
    params: CouplingParams
    driver_key: tuple
    field_key: tuple
    probes: np.ndarray
    b_t: float
    G_values: np.ndarray
    images: np.ndarray
    log_deriv: np.ndarray
    rejected: bool
    cond_var: np.ndarray = field(default=None)
    sup_xi: float = 0.0


def _flow_images(params: CouplingParams, eta: DrivingPath, pts: np.ndarray, tol: float):
    if params.t == 0:
        shape = (eta.n_paths,) + pts.shape if eta.n_paths else pts.shape
        return np.broadcast_to(pts, shape).copy(), np.zeros(shape, complex)
    st = reverse_flow(pts, eta, params.t, tol=tol)
    return st.position, st.log_deriv


def _hull_traces(params: CouplingParams, eta: DrivingPath, y_min: float, n_trace: Optional[int]):
    if params.t == 0:
        return np.zeros((eta.n_paths or 1, 0), complex)
    _, tr = trace_points(dual_driver(eta, params.t), y_min, n_trace)
    return np.atleast_2d(tr)


def _assemble(params, pts, images, log_deriv, harm):
    H = params.Q * np.real(log_deriv) + harm + (2 / math.sqrt(params.kappa)) * np.log(np.abs(images) / np.abs(pts))
    b = H[-1]
    return float(b), H - b


def _evaluate(params, pts, eta, field_keys, source, domain, y_min, n_trace, tol):
    images, logd = _flow_images(params, eta, pts, tol)
    images = np.atleast_2d(images)
    logd = np.atleast_2d(logd)
    traces = _hull_traces(params, eta, y_min, n_trace)
    sups = np.atleast_1d(eta.sup_abs(params.t)) if params.t > 0 else np.zeros(images.shape[0])
    out = []
    for r, fkey in enumerate(field_keys):
        if domain is not None and traces.shape[1]:
            blocked = rasterize_polyline(domain, traces[r])
            ii, jj = domain.nearest_node(images[r])
            rejected = bool(np.any(blocked[jj, ii]))
        else:
            blocked = None if domain is None else np.zeros((domain.ny, domain.nx), bool)
            rejected = False
        if rejected:
            harm = np.full(pts.size, np.nan)
            var = np.full(pts.size, np.nan)
        else:
            harm, var = source(images[r], blocked, sample_stream(*fkey))
        b, G = _assemble(params, pts, images[r], logd[r], harm)
        out.append((images[r], logd[r], b, G, rejected, var, float(sups[r])))
    return out


def _with_pin(params, probes):
    pts = np.asarray(probes, dtype=complex).ravel()
    if np.any(pts.imag <= 0):
        raise ValueError("probes must lie in the upper half-plane")
    return np.concatenate([pts, [1j * params.y0]])


def _domain_of(source):
    return getattr(source, "domain", None)


def coupling_observable(params: CouplingParams, probes: Sequence[complex], driver_seed: int, field_seed: int,
                        lattice=None, driver: Optional[DrivingPath] = None, dt: Optional[float] = None,
                        y_min: float = 1e-4, n_trace: Optional[int] = 400, tol: float = 1e-9) -> CouplingSample:
    """One sample of ``(b_t, G)`` at ``probes`` (the pin ``i y0`` is appended last).

    ``lattice`` is a harmonic-part source (:class:`MarkovHarmonic`,
    :class:`DirectHarmonic` or :class:`ZeroHarmonic`) or a
    :class:`~sleflow.lattice.LatticeDomain`, which selects the direct route.
    ``driver`` overrides the Brownian reverse-flow driver.
    """
    pts = _with_pin(params, probes)
    if lattice is None:
        lattice = MarkovHarmonic.build(params, max_probe_im=float(pts.imag.max()))
    source = DirectHarmonic(lattice) if isinstance(lattice, LatticeDomain) else lattice
    if driver is None:
        step = dt if dt is not None else default_dt(params.t)
        driver = sample_brownian_driver(params.kappa, max(params.t, step), step, driver_seed)
    res = _evaluate(params, pts, driver, [(field_seed,)], source, _domain_of(source), y_min, n_trace, tol)[0]
    images, logd, b, G, rej, var, sup = res
    return CouplingSample(params, (driver_seed,), (field_seed,), pts, b, G, images, logd, rej, var, sup)


def default_dt(t: float) -> float:
    return max(t, 1e-3) / 1000.0


@dataclass
class CouplingRun:
    """Batch of coupling samples; sample ``i`` uses streams ``(seed, 0, i)`` and ``(seed, 1, i)``."""
    params: CouplingParams
    probes: np.ndarray
    seed: int
    b_t: np.ndarray
    G: np.ndarray
    images: np.ndarray
    log_deriv: np.ndarray
    rejected: np.ndarray
    cond_var: np.ndarray
    sup_xi: np.ndarray

    @property
    def n(self) -> int:
        return self.b_t.size

    @property
    def rejected_fraction(self) -> float:
        return float(np.mean(self.rejected)) if self.n else 0.0

    def accepted_G(self) -> np.ndarray:
        return self.G[~self.rejected]

    def to_csv(self, path, comment: str = "") -> None:
        k = self.probes.size
        header = ["sample", "b_t"] + [f"G_{j + 1}" for j in range(k)] + ["rejected"]
        rows = [[i, self.b_t[i], *self.G[i], int(self.rejected[i])] for i in range(self.n)]
        write_csv(path, header, rows, comment)


def run_coupling(params: CouplingParams, n: int, seed: int, source=None, probes=DEFAULT_PROBES,
                 dt: Optional[float] = None, batch: int = 250, threads: int = 1,
                 y_min: float = 1e-4, n_trace: Optional[int] = 400, tol: float = 1e-9,
                 start: int = 0) -> CouplingRun:
    """``n`` independent coupling samples.

    Output is bit-identical for any ``threads`` at fixed ``batch``; samples
    in one batch share adaptive integrator steps, so other batch sizes agree
    to integrator round-off.
    """
    pts = _with_pin(params, probes)
    if source is None:
        source = MarkovHarmonic.build(params, max_probe_im=float(pts.imag.max()))
    step = dt if dt is not None else default_dt(params.t)
    T = max(params.t, step)
    domain = _domain_of(source)

    def work(chunk):
        eta = brownian_batch(params.kappa, T, step, seed, (0,), chunk)
        return _evaluate(params, pts, eta, [(seed, 1, i) for i in chunk], source, domain, y_min, n_trace, tol)

    chunks = [list(range(a, min(a + batch, start + n))) for a in range(start, start + n, batch)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    res = [r for p in parts for r in p]
    k = pts.size
    return CouplingRun(
        params, pts, seed,
        np.array([r[2] for r in res]),
        np.array([r[3] for r in res]).reshape(-1, k),
        np.array([r[0] for r in res]).reshape(-1, k),
        np.array([r[1] for r in res]).reshape(-1, k),
        np.array([r[4] for r in res], bool),
        np.array([r[5] for r in res]).reshape(-1, k),
        np.array([r[6] for r in res]),
    )


def closed_form_zero_driver(params: CouplingParams, probes) -> np.ndarray:
    """``G`` for the zero driver and ``h = 0``: uses ``f_t(z) = sqrt(z^2 - 4t)``."""
    pts = _with_pin(params, probes)
    f = np.sqrt(pts * pts - 4 * params.t)
    f = np.where(f.imag < 0, -f, f)
    logd = np.log(pts / f)
    return _assemble(params, pts, f, logd, np.zeros(pts.size))[1]


@dataclass
class ExceedanceCurve:
    x: np.ndarray
    count: np.ndarray
    n: int
    p_hat: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray

    def log_curvature(self) -> np.ndarray:
        """Second differences of ``log p_hat`` over cells with a nonzero count.

        Nonpositive values mean the log-exceedance is concave or linear there;
        this is a diagnostic and carries no confidence statement.
        """
        keep = self.count > 0
        return np.diff(np.log(self.p_hat[keep]), 2)

    def to_csv(self, path, comment: str = "") -> None:
        write_csv(path, ["x", "count", "n", "p_hat", "ci_lo", "ci_hi"],
                  [[*r[:2], self.n, *r[2:]] for r in zip(self.x, self.count, self.p_hat, self.ci_lo, self.ci_hi)],
                  comment)


def wilson_interval(k, n: int, level: float = 0.95):
    k = np.atleast_1d(k)
    lo, hi = np.empty(k.size), np.empty(k.size)
    for m, kk in enumerate(k):
        ci = stats.binomtest(int(kk), n).proportion_ci(level, method="wilson")
        lo[m], hi[m] = ci.low, ci.high
    return lo, hi


def exceedance_curve(values, x_grid, level: float = 0.95) -> ExceedanceCurve:
    """Empirical ``P[value > x]`` with Wilson-score intervals."""
    v = np.asarray(values, float)
    v = v[np.isfinite(v)]
    x = np.asarray(x_grid, float)
    count = np.array([(v > xx).sum() for xx in x])
    lo, hi = wilson_interval(count, v.size, level)
    return ExceedanceCurve(x, count, v.size, count / v.size, lo, hi)


def coupling_constant_tail(params: CouplingParams, n: int, x_grid, seed: int, source=None,
                           **kw) -> tuple:
    """Exceedance curve of ``b_t`` over ``x_grid``; returns ``(curve, run)``."""
    run = run_coupling(params, n, seed, source, probes=(), **kw)
    return exceedance_curve(run.b_t[~run.rejected], x_grid), run


def exponential_envelope(curve: ExceedanceCurve):
    """Check ``P[b > x] <= C exp(-x)`` one-sidedly.

    ``C`` is anchored at the smallest ``x`` with a nonzero count, from the upper
    Wilson bound there; the check is that every lower Wilson bound stays below
    ``C exp(-x)``.  Returns ``(C, ok)``; with no nonzero count ``C`` is the
    upper bound at the first grid point.
    """
    nz = np.flatnonzero(curve.count > 0)
    a = nz[0] if nz.size else 0
    C = float(curve.ci_hi[a] * math.exp(curve.x[a]))
    ok = bool(np.all(curve.ci_lo <= C * np.exp(-curve.x) + 1e-15))
    return C, ok
