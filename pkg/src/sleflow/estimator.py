"""Derivative tail exponent: closed-form analytics and the Monte Carlo experiment.

For SLE with parameter ``kappa``,

    Q = 2/sqrt(kappa) + sqrt(kappa)/2,      q = 4/kappa + kappa/16 + 1,

and ``q`` is the maximum over ``a`` of ``f(a) = a (1 + 2/(Q sqrt(kappa)) - a/Q^2)``,
attained at ``a_max = (Q^2/2)(1 + 2/(Q sqrt(kappa)))``.  The experiment
estimates the decay of ``P[|f_t'(iy)| > y^{-(1-eps)}]`` as ``y -> 0``, whose
exponent should be close to ``q``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .driver import DrivingPath, brownian_batch, tail_grid_dt
from .flow import reverse_flow
from .io import write_csv

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExponentParams:
    kappa: float
    Q: float
    q: float
    a: float
    b: float
    a_max: float

    @property
    def slope_coefficient(self) -> float:
        """``1 + 2 / (Q sqrt(kappa))``."""
        return 1.0 + 2.0 / (self.Q * math.sqrt(self.kappa))


def q_exponent(kappa):
    return 4.0 / np.asarray(kappa, float) + np.asarray(kappa, float) / 16.0 + 1.0


def exponent_params(kappa: float, a: Optional[float] = None) -> ExponentParams:
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    Q = 2.0 / math.sqrt(kappa) + math.sqrt(kappa) / 2.0
    a_max = 0.5 * Q * Q * (1.0 + 2.0 / (Q * math.sqrt(kappa)))
    a = a_max if a is None else float(a)
    if a <= 1:
        raise ValueError("the Holder power a must exceed 1")
    return ExponentParams(float(kappa), Q, float(q_exponent(kappa)), a, a / (a - 1.0), a_max)


def holder_objective(params: ExponentParams, a):
    """``a (1 + 2/(Q sqrt(kappa)) - a/Q^2)``."""
    a = np.asarray(a, float)
    return a * (params.slope_coefficient - a / params.Q ** 2)


# ----------------------------------------------------------------------------
# weighted least squares


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    slope_se: float
    ci: tuple


def fit_exponent(xs, ys, weights, level: float = 0.95) -> LineFit:
    """Weighted least squares line with a normal-theory slope interval.

    ``weights`` are inverse variances of ``ys``; the slope covariance is read
    from the inverse of the weighted normal matrix without rescaling.
    """
    x = np.asarray(xs, float)
    y = np.asarray(ys, float)
    w = np.asarray(weights, float)
    if x.size < 2 or x.size != y.size or x.size != w.size:
        raise ValueError("need at least two matching points")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive and finite")
    X = np.column_stack([np.ones_like(x), x])
    N = X.T @ (w[:, None] * X)
    if abs(np.linalg.det(N)) <= 1e-12 * (N[0, 0] * N[1, 1]):
        raise ValueError("degenerate abscissae")
    cov = np.linalg.inv(N)
    beta = cov @ (X.T @ (w * y))
    se = math.sqrt(cov[1, 1])
    z = stats.norm.ppf(0.5 + level / 2)
    return LineFit(float(beta[1]), float(beta[0]), se, (float(beta[1] - z * se), float(beta[1] + z * se)))


# ----------------------------------------------------------------------------
# the Monte Carlo experiment


@dataclass
class TailEstimate:
    kappa: float
    epsilon: float
    t: float
    y_grid: np.ndarray
    n_per_y: np.ndarray
    exceed_counts: np.ndarray
    koebe_ok: np.ndarray = None
    fitted_slope: float = float("nan")
    intercept: float = float("nan")
    slope_ci: tuple = (float("nan"), float("nan"))
    decomposition: Optional[dict] = None

    @property
    def p_hat(self) -> np.ndarray:
        return self.exceed_counts / self.n_per_y

    @property
    def se(self) -> np.ndarray:
        p = self.p_hat
        return np.sqrt(p * (1 - p) / self.n_per_y)

    @property
    def conclusive(self) -> bool:
        return bool(np.count_nonzero(self.exceed_counts) >= 2)

    @property
    def q_theory(self) -> float:
        return float(q_exponent(self.kappa))

    def monotone_within(self, k: float = 2.0) -> bool:
        """``p_hat`` nondecreasing in ``y`` (it decays as ``y -> 0``) up to ``k`` combined standard errors."""
        order = np.argsort(self.y_grid)
        p, s = self.p_hat[order], self.se[order]
        return bool(np.all(p[:-1] <= p[1:] + k * np.hypot(s[1:], s[:-1])))

    def to_csv(self, path, comment: str = "") -> None:
        rows = [[y, n, c, p, s] for y, n, c, p, s in zip(self.y_grid, self.n_per_y, self.exceed_counts,
                                                         self.p_hat, self.se)]
        summary = f"summary,kappa={self.kappa!r},epsilon={self.epsilon!r},fitted_slope={self.fitted_slope!r}," \
                  f"ci_lo={self.slope_ci[0]!r},ci_hi={self.slope_ci[1]!r},q_theory={self.q_theory!r}"
        write_csv(path, ["y", "n", "count", "p_hat", "se"], rows, comment + ("\n" if comment else "") + summary)


def fit_tail(est: TailEstimate) -> TailEstimate:
    """Slope of ``log p_hat`` against ``log y``; cells with zero count are left out.

    Weights are inverse delta-method variances of ``log p_hat``,
    ``n p / (1 - p)``.
    """
    keep = (est.exceed_counts > 0) & (est.exceed_counts < est.n_per_y)
    if keep.sum() < 2:
        est.fitted_slope, est.intercept, est.slope_ci = float("nan"), float("nan"), (float("nan"),) * 2
        return est
    p = est.p_hat[keep]
    w = est.n_per_y[keep] * p / (1 - p)
    fit = fit_exponent(np.log(est.y_grid[keep]), np.log(p), w)
    est.fitted_slope, est.intercept, est.slope_ci = fit.slope, fit.intercept, fit.ci
    return est


def _tail_chunk(kappa, epsilon, y, t, dt, seed, yk, chunk, tol, driver_factory, coupling):
    if driver_factory is None:
        eta = brownian_batch(kappa, t, dt, seed, (yk,), chunk)
    else:
        eta = driver_factory(chunk)
    st = reverse_flow(1j * y, eta, t, tol=tol)
    dabs = np.atleast_1d(st.deriv_abs)
    fabs = np.atleast_1d(np.abs(st.position))
    exceed = dabs > y ** (-(1 - epsilon))
    out = {"n": dabs.size, "exceed": int(exceed.sum()),
           "koebe_ok": int(np.sum(exceed & (fabs >= 0.25 * y ** epsilon)))}
    if coupling is not None:
        from .coupling import CouplingParams, _evaluate
        cp = CouplingParams(kappa, coupling.y0, t)
        res = _evaluate(cp, np.array([1j * coupling.y0]), eta, [(seed, yk, i, 1) for i in chunk],
                        coupling, coupling.domain, 1e-4, 400, tol)
        b = np.array([r[2] for r in res])
        rej = np.array([r[4] for r in res])
        sup = np.atleast_1d(eta.sup_abs(t))
        lev = -epsilon * math.log(y)
        good_b = b <= lev
        small_xi = sup <= y ** (-epsilon)
        ok = ~rej
        out.update({
            "accepted": int(ok.sum()),
            "exceed_accepted": int(np.sum(exceed & ok)),
            "exceed_and_good": int(np.sum(exceed & ok & good_b & small_xi)),
            "b_large": int(np.sum(ok & ~good_b)),
            "xi_large": int(np.sum(ok & ~small_xi)),
        })
    return out


def tail_experiment(kappa: float, epsilon: float, y_grid: Sequence[float], n_per_y: int, t: float,
                    master_seed: int, tol: float = 1e-8, threads: int = 1, batch: int = 5000,
                    driver_factory: Optional[Callable[[Sequence[int]], DrivingPath]] = None,
                    coupling=None) -> TailEstimate:
    """Exceedance counts of ``|f_t'(iy)| > y^{-(1-eps)}`` and the fitted log-log slope.

    Sample ``i`` at grid index ``k`` uses the stream ``(master_seed, k, i)``;
    counts are merged in a fixed order, so results do not depend on
    ``threads``.  Paths in one batch share adaptive integrator steps; the
    batch size only moves derivatives at the level of ``tol``.  ``driver_factory(indices)`` replaces the
    Brownian drivers (stacked paths).  With ``coupling`` (a
    :class:`~sleflow.coupling.MarkovHarmonic`) the coupling constant is
    computed too and the event decomposition is counted.
    """
    ys = np.asarray(y_grid, float)
    if ys.size == 0:
        raise ValueError("empty y grid")
    if np.any((ys <= 0) | (ys >= 1)):
        raise ValueError("y values must lie in (0, 1)")
    if not 0 < t <= 1:
        raise ValueError("t must lie in (0, 1]")
    if not 0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    if n_per_y < 1:
        raise ValueError("n_per_y must be positive")
    dt = tail_grid_dt(float(ys.min()))
    tasks = [(k, list(range(a, min(a + batch, n_per_y)))) for k in range(ys.size)
             for a in range(0, n_per_y, batch)]

    def run(task):
        k, chunk = task
        r = _tail_chunk(kappa, epsilon, ys[k], t, dt, master_seed, k, chunk, tol, driver_factory, coupling)
        log.info("kappa=%g y=%g samples %d-%d: %d exceed", kappa, ys[k], chunk[0], chunk[-1], r["exceed"])
        return k, r

    if threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(run, tasks))
    else:
        results = [run(task) for task in tasks]
    n = np.zeros(ys.size, int)
    cnt = np.zeros(ys.size, int)
    kob = np.zeros(ys.size, int)
    dec = None
    for k, r in results:
        n[k] += r["n"]
        cnt[k] += r["exceed"]
        kob[k] += r["koebe_ok"]
        if "accepted" in r:
            if dec is None:
                dec = {key: np.zeros(ys.size, int) for key in
                       ("accepted", "exceed_accepted", "exceed_and_good", "b_large", "xi_large")}
            for key in dec:
                dec[key][k] += r[key]
    est = TailEstimate(float(kappa), float(epsilon), float(t), ys, n, cnt, kob, decomposition=dec)
    return fit_tail(est)


def decomposition_holds(est: TailEstimate) -> bool:
    """``#exceed <= #(exceed, b small, xi small) + #(b large) + #(xi large)`` at every ``y``."""
    d = est.decomposition
    if d is None:
        raise ValueError("experiment was run without the coupling")
    return bool(np.all(d["exceed_accepted"] <= d["exceed_and_good"] + d["b_large"] + d["xi_large"]))
