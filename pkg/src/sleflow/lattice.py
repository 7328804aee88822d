"""Lattice free field on a truncated half-plane and discrete harmonic extension.

Nodes sit at ``x = -L + i*delta``, ``y = j*delta`` for ``0 <= i < nx`` and
``0 <= j < ny``; row ``j = 0`` is the real axis.  Edges join nearest neighbours
with unit conductance.  The free (Neumann) field has density proportional to
``exp(-sum_edges (dh)^2 / (2 s))`` with ``s = 2*pi`` in the continuum
normalization; ``s`` is kept as a parameter because a lattice calibrates it.

Arrays over the grid have shape ``(ny, nx)`` and are indexed ``[j, i]``.

Two routes compute the harmonic part of the field in a slit domain:

* :func:`harmonic_extension` / :func:`restrict_and_extend` solve the sparse
  Laplace problem directly;
* :class:`SeparableGreen` uses the Markov decomposition of the field at the
  real axis and closed-form (separable) Green's functions of the box, so only a
  small dense system on the hull nodes is solved per sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Union

import numpy as np
from scipy import fft, linalg, ndimage, sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import splu

from .driver import sample_stream
from .io import write_csv

CONTINUUM_SCALE = 2.0 * math.pi

REAL_AXIS, FAR_FIELD, HULL, INTERIOR = 0, 1, 2, 3


@dataclass(frozen=True)
class LatticeDomain:
    """Box ``[-L, L] x [0, H]`` with mesh ``delta`` and an optional blocked (hull) set."""
    nx: int
    ny: int
    delta: float
    y0: float
    blocked: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2 or self.delta <= 0:
            raise ValueError("need at least a 2 x 2 grid and positive mesh")
        b = np.zeros((self.ny, self.nx), bool) if self.blocked is None else np.asarray(self.blocked, bool)
        if b.shape != (self.ny, self.nx):
            raise ValueError("blocked mask has the wrong shape")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "blocked", b)
        pi, pj = self.pin
        if b[pj, pi]:
            raise ValueError("pin node is blocked")
        if pj == 0 or pj == self.ny - 1 or pi in (0, self.nx - 1):
            raise ValueError("pin node must be an interior node")

    @classmethod
    def box(cls, L: float, H: float, delta: float, y0: float) -> "LatticeDomain":
        nx = int(round(2 * L / delta)) + 1
        ny = int(round(H / delta)) + 1
        if abs((nx - 1) * delta - 2 * L) > 1e-9 * L or abs((ny - 1) * delta - H) > 1e-9 * H:
            raise ValueError("delta must divide the box")
        return cls(nx, ny, float(delta), float(y0))

    @classmethod
    def for_pin(cls, y0: float, delta: float, scale: float = 8.0) -> "LatticeDomain":
        """Box with ``L = H = scale * y0``."""
        return cls.box(scale * y0, scale * y0, delta, y0)

    @classmethod
    def square(cls, n: int, L: float, y0: Optional[float] = None) -> "LatticeDomain":
        """``n x n`` nodes covering ``[-L, L] x [0, 2L]``."""
        delta = 2 * L / (n - 1)
        return cls(n, n, delta, L if y0 is None else y0)

    @property
    def L(self) -> float:
        return 0.5 * (self.nx - 1) * self.delta

    @property
    def H(self) -> float:
        return (self.ny - 1) * self.delta

    @property
    def xs(self) -> np.ndarray:
        return -self.L + self.delta * np.arange(self.nx)

    @property
    def ys(self) -> np.ndarray:
        return self.delta * np.arange(self.ny)

    @property
    def coords(self) -> np.ndarray:
        return self.xs[None, :] + 1j * self.ys[:, None]

    def nearest_node(self, z):
        z = np.asarray(z, dtype=complex)
        i = np.clip(np.rint((z.real + self.L) / self.delta), 0, self.nx - 1).astype(int)
        j = np.clip(np.rint(z.imag / self.delta), 0, self.ny - 1).astype(int)
        return i, j

    @property
    def pin(self):
        i, j = self.nearest_node(1j * self.y0)
        return int(i), int(j)

    def with_blocked(self, blocked) -> "LatticeDomain":
        return LatticeDomain(self.nx, self.ny, self.delta, self.y0, blocked)

    @property
    def boundary_flags(self) -> np.ndarray:
        flags = np.full((self.ny, self.nx), INTERIOR, dtype=np.int8)
        flags[-1, :] = FAR_FIELD
        flags[:, 0] = FAR_FIELD
        flags[:, -1] = FAR_FIELD
        flags[0, :] = REAL_AXIS
        flags[self.blocked] = HULL
        return flags

    def hull_is_attached(self) -> bool:
        """True when the blocked set is empty or one 4-connected piece touching the real axis."""
        if not self.blocked.any():
            return True
        lab, n = ndimage.label(self.blocked)
        return n == 1 and bool(self.blocked[0].any())

    def bilinear(self, z):
        """Corner nodes and weights for bilinear interpolation at ``z``.

        Returns ``(i, j, w)``, each of shape ``z.shape + (4,)``.
        """
        z = np.asarray(z, dtype=complex)
        fx = (z.real + self.L) / self.delta
        fy = z.imag / self.delta
        if np.any(fx < 0) or np.any(fx > self.nx - 1) or np.any(fy < 0) or np.any(fy > self.ny - 1):
            raise ValueError("point outside the lattice box")
        i0 = np.minimum(np.floor(fx).astype(int), self.nx - 2)
        j0 = np.minimum(np.floor(fy).astype(int), self.ny - 2)
        ax, ay = fx - i0, fy - j0
        i = np.stack([i0, i0 + 1, i0, i0 + 1], axis=-1)
        j = np.stack([j0, j0, j0 + 1, j0 + 1], axis=-1)
        w = np.stack([(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay], axis=-1)
        return i, j, w

    def interpolate(self, values: np.ndarray, z):
        i, j, w = self.bilinear(z)
        return np.sum(values[j, i] * w, axis=-1)


@dataclass(frozen=True)
class LatticeField:
    domain: LatticeDomain
    node_values: np.ndarray

    @property
    def pin_value(self) -> float:
        i, j = self.domain.pin
        return float(self.node_values[j, i])

    def to_csv(self, path, comment: str = "") -> None:
        write_grid_csv(path, self.domain, self.node_values, comment)


def write_grid_csv(path, domain: LatticeDomain, values: np.ndarray, comment: str = "") -> None:
    X, Y = np.meshgrid(domain.xs, domain.ys)
    write_csv(path, ["x", "y", "value"], np.column_stack([X.ravel(), Y.ravel(), values.ravel()]), comment)


def _path_eigen(n: int):
    """Eigenvalues ``4 sin^2(pi k / 2n)`` of the free path Laplacian (eigenvectors: DCT-II)."""
    k = np.arange(n)
    return 4.0 * np.sin(0.5 * np.pi * k / n) ** 2


def sample_lattice_gff(domain: LatticeDomain, seed: int, variance_scale: float = CONTINUUM_SCALE,
                       key=()) -> LatticeField:
    """Free-boundary lattice field on the whole box, pinned to 0 at the pin node.

    Sampled exactly in the eigenbasis of the box Laplacian (a 2-D cosine
    transform); the zero mode is dropped, which is the same as pinning.  The
    field lives on the half-plane, so blocked cells are ignored here; they only
    matter when the field is restricted and extended.
    """
    h = spectral_field(domain, sample_stream(seed, *key), variance_scale)
    i, j = domain.pin
    h -= h[j, i]
    h.setflags(write=False)
    return LatticeField(domain, h)


def spectral_field(domain: LatticeDomain, rng: np.random.Generator,
                   variance_scale: float = CONTINUUM_SCALE) -> np.ndarray:
    """Free field on the box with its constant mode removed (not pinned)."""
    lam = _path_eigen(domain.ny)[:, None] + _path_eigen(domain.nx)[None, :]
    xi = rng.standard_normal((domain.ny, domain.nx))
    lam[0, 0] = np.inf
    return fft.idctn(xi / np.sqrt(lam), norm="ortho") * math.sqrt(variance_scale)


def graph_laplacian(domain: LatticeDomain, nodes: Optional[np.ndarray] = None) -> sparse.csr_matrix:
    """Unit-conductance Laplacian of the subgraph induced by ``nodes`` (mask; default unblocked)."""
    keep = ~domain.blocked if nodes is None else np.asarray(nodes, bool)
    idx = np.arange(domain.nx * domain.ny).reshape(domain.ny, domain.nx)
    rows, cols = [], []
    for a, b in ((idx[:, :-1], idx[:, 1:]), (idx[:-1, :], idx[1:, :])):
        ka = keep.ravel()[a.ravel()] & keep.ravel()[b.ravel()]
        rows.append(a.ravel()[ka])
        cols.append(b.ravel()[ka])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    n = domain.nx * domain.ny
    A = sparse.coo_matrix((np.ones(r.size), (r, c)), shape=(n, n))
    A = (A + A.T).tocsr()
    return (sparse.diags(np.asarray(A.sum(axis=1)).ravel()) - A).tocsr()


def sample_graph_gff(laplacian, pin: int, rng: np.random.Generator, n: int = 1,
                     variance_scale: float = 1.0) -> np.ndarray:
    """Draws of the graph free field pinned to 0 at node ``pin`` by dense Cholesky.

    ``laplacian`` is the weighted graph Laplacian (conductances on the edges).
    Suitable for small graphs only.
    """
    Lm = laplacian.toarray() if sparse.issparse(laplacian) else np.asarray(laplacian, float)
    m = Lm.shape[0]
    out = np.zeros((n, m))
    free = np.arange(m) != pin
    if not free.any():
        return out
    C = linalg.cholesky(Lm[np.ix_(free, free)] / variance_scale, lower=False)
    out[:, free] = linalg.solve_triangular(C, rng.standard_normal((free.sum(), n)), lower=False).T
    return out


class HarmonicExtender:
    """Factorized discrete Dirichlet problem for a fixed Dirichlet node set.

    Graph nodes are the unblocked nodes plus the Dirichlet nodes; free nodes
    are the remaining graph nodes.  Nodes on the box edge without data get the
    natural (Neumann) condition.
    """

    def __init__(self, domain: LatticeDomain, dirichlet: np.ndarray):
        dirichlet = np.asarray(dirichlet, bool)
        self.domain = domain
        self.dirichlet = dirichlet
        graph = (~domain.blocked) | dirichlet
        self.free = graph & ~dirichlet
        Lg = graph_laplacian(domain, graph)
        fi = np.flatnonzero(self.free.ravel())
        di = np.flatnonzero(dirichlet.ravel())
        self._fi, self._di = fi, di
        LFF = Lg[fi][:, fi].tocsc()
        self._LFD = Lg[fi][:, di].tocsr()
        if fi.size:
            ncomp, lab = csgraph.connected_components(LFF, directed=False)
            touches = np.zeros(ncomp, bool)
            touches[lab[np.flatnonzero(np.asarray(abs(self._LFD).sum(axis=1)).ravel())]] = True
            if not touches.all():
                raise np.linalg.LinAlgError("singular system: a free component has no boundary data")
            self._lu = splu(LFF)
        else:
            self._lu = None

    def __call__(self, data: np.ndarray) -> np.ndarray:
        """Extend grid data given on the Dirichlet nodes; NaN outside the graph."""
        out = np.full((self.domain.ny, self.domain.nx), np.nan)
        flat = out.ravel()
        d = np.asarray(data, float).ravel()[self._di]
        flat[self._di] = d
        if self._lu is not None:
            flat[self._fi] = self._lu.solve(-(self._LFD @ d))
        return out


def _as_boundary_grid(domain: LatticeDomain, boundary_values) -> np.ndarray:
    if isinstance(boundary_values, Mapping):
        g = np.full((domain.ny, domain.nx), np.nan)
        for (i, j), v in boundary_values.items():
            g[j, i] = v
        return g
    g = np.asarray(boundary_values, float)
    if g.shape != (domain.ny, domain.nx):
        raise ValueError("boundary grid has the wrong shape")
    return g


def harmonic_extension(domain: LatticeDomain, boundary_values: Union[Mapping, np.ndarray]) -> np.ndarray:
    """Discrete harmonic function with the given boundary data.

    ``boundary_values`` maps ``(i, j)`` to a value, or is a grid with NaN at
    the nodes to solve for.  The data are normally given on the real axis and
    on the hull; nodes with data are Dirichlet nodes.
    """
    g = _as_boundary_grid(domain, boundary_values)
    return HarmonicExtender(domain, ~np.isnan(g))(np.nan_to_num(g))


def dirichlet_set(domain: LatticeDomain, hull_cells: Optional[np.ndarray] = None) -> np.ndarray:
    d = np.zeros((domain.ny, domain.nx), bool) if hull_cells is None else np.asarray(hull_cells, bool).copy()
    d[0, :] = True
    return d


def restrict_and_extend(field: LatticeField, hull_cells: Optional[np.ndarray] = None,
                        extender: Optional[HarmonicExtender] = None) -> np.ndarray:
    """Harmonic part of ``field`` in the box minus the hull.

    The field's values on the real axis and on the hull nodes are extended
    harmonically.  Passing a prebuilt ``extender`` for the same node set skips
    the factorization.
    """
    dom = field.domain
    if extender is None:
        if hull_cells is not None:
            dom = dom.with_blocked(hull_cells)
        extender = HarmonicExtender(dom, dirichlet_set(dom, hull_cells))
    return extender(field.node_values)


# ----------------------------------------------------------------------------
# hull rasterization


def rasterize_polyline(domain: LatticeDomain, polyline, fill: bool = True, start_at_origin: bool = True) -> np.ndarray:
    """Blocked-node mask of a trace polyline.

    A node is blocked when the polyline meets its cell, the square of side
    ``delta`` centred on it.  The polyline is refined to steps below a quarter
    of the mesh and, where a step changes both cell indices, the cell crossed
    in between is added, so the blocked set is 4-connected.  With ``fill``,
    regions cut off from the far field by the polyline and the real axis are
    blocked too.
    """
    pts = np.asarray(polyline, dtype=complex).ravel()
    if start_at_origin:
        pts = np.concatenate([[0.0], pts])
    blocked = np.zeros((domain.ny, domain.nx), bool)
    if pts.size == 0:
        return blocked
    if pts.size > 1:
        seg = np.abs(np.diff(pts))
        reps = np.maximum(1, np.ceil(4 * seg / domain.delta).astype(int))
        frac = np.concatenate([np.arange(r) / r for r in reps])
        start = np.repeat(np.arange(pts.size - 1), reps)
        dense = np.concatenate([pts[start] + frac * (pts[start + 1] - pts[start]), pts[-1:]])
    else:
        dense = pts
    fx = (dense.real + domain.L) / domain.delta
    fy = dense.imag / domain.delta
    if fx.min() < -0.5 or fx.max() > domain.nx - 0.5 or fy.min() < -0.5 or fy.max() > domain.ny - 0.5:
        raise ValueError("polyline leaves the lattice box")
    ci = np.clip(np.floor(fx + 0.5).astype(int), 0, domain.nx - 1)
    cj = np.clip(np.floor(fy + 0.5).astype(int), 0, domain.ny - 1)
    blocked[cj, ci] = True
    diag = np.flatnonzero((np.diff(ci) != 0) & (np.diff(cj) != 0))
    if diag.size:
        # parameter along the step at which the cell boundary is crossed in x and in y
        bx = np.maximum(ci[diag], ci[diag + 1]) - 0.5
        by = np.maximum(cj[diag], cj[diag + 1]) - 0.5
        sx = (bx - fx[diag]) / (fx[diag + 1] - fx[diag])
        sy = (by - fy[diag]) / (fy[diag + 1] - fy[diag])
        x_first = sx < sy
        blocked[np.where(x_first, cj[diag], cj[diag + 1]), np.where(x_first, ci[diag + 1], ci[diag])] = True
    if fill:
        _fill_enclosed(blocked)
    return blocked


def _fill_enclosed(blocked: np.ndarray) -> None:
    js, is_ = np.nonzero(blocked)
    j1 = min(blocked.shape[0] - 1, js.max() + 2)
    i_lo = max(0, is_.min() - 2)
    i_hi = min(blocked.shape[1] - 1, is_.max() + 2)
    win = blocked[: j1 + 1, i_lo: i_hi + 1]
    lab, n = ndimage.label(~win)
    if n <= 1:
        return
    outer = np.unique(np.concatenate([lab[-1, :], lab[:, 0], lab[:, -1]]))
    enclosed = ~np.isin(lab, outer) & (lab > 0)
    win[enclosed] = True


# ----------------------------------------------------------------------------
# separable Green's functions


class SeparableGreen:
    """Exact lattice covariances of the Markov decomposition at the real axis.

    Write the free field as ``h = u + h_tilde`` where ``u`` is the harmonic
    extension of the real-axis values (Neumann on the far sides) and
    ``h_tilde`` vanishes on the real axis.  The two parts are independent;
    ``h_tilde`` has covariance ``s * G`` with ``G`` the Green's function of the
    box grounded along the real axis.  Both diagonalize in the horizontal
    cosine basis, which gives

    * ``cov_u(a, b)``, the covariance of ``u`` with its constant mode removed;
    * ``green(a, b) = G(a, b)`` from a table indexed by rows and ``|i_a - i_b|``
      / ``i_a + i_b + 1`` (method of images for the cosine modes).

    The harmonic part of ``h`` in the box minus a hull with front nodes ``B``
    is ``u(a) + G[a, B] G[B, B]^{-1} h_tilde[B]``.

    ``row_max`` bounds the rows of evaluation nodes, ``hull_row_max`` the rows
    of hull nodes.
    """

    def __init__(self, domain: LatticeDomain, row_max: int, hull_row_max: int,
                 variance_scale: float = CONTINUUM_SCALE):
        nx, ny = domain.nx, domain.ny
        if not (0 < hull_row_max <= row_max < ny):
            raise ValueError("need 0 < hull_row_max <= row_max < ny")
        self.domain = domain
        self.variance_scale = float(variance_scale)
        self.row_max = int(row_max)
        self.hull_row_max = int(hull_row_max)
        self.mu = _path_eigen(nx)
        self.ck2 = np.full(nx, 2.0 / nx)
        self.ck2[0] = 1.0 / nx
        # y direction grounded at j = 0: nodes j = 1 .. ny-1, free at the top
        m = ny - 1
        diag = np.full(m, 2.0)
        diag[-1] = 1.0
        nu, psi = linalg.eigh_tridiagonal(diag, -np.ones(m - 1))
        rows = psi[: self.row_max]                    # rows j = 1 .. row_max
        inv = 1.0 / (nu[:, None] + self.mu[None, :])  # (l, k)
        # r_k(j): mode-k extension of unit data on the real axis
        r = np.ones((self.row_max + 1, nx))
        r[1:] = (rows * psi[0]) @ inv
        self.r = r
        # variance of the real-axis cosine modes of the free field (k >= 1)
        nu_f = _path_eigen(ny)
        cl2 = np.full(ny, 2.0 / ny)
        cl2[0] = 1.0 / ny
        psi0 = cl2 * np.cos(0.5 * np.pi * np.arange(ny) / ny) ** 2
        lam = nu_f[:, None] + self.mu[None, :]
        lam[0, 0] = np.inf
        self.bottom_var = psi0 @ (1.0 / lam)
        self.bottom_var[0] = 0.0
        # image table: F[ja, jb, m] = 1/2 sum_k c_k^2 g_k(ja, jb) cos(pi k m / nx)
        hb = psi[: self.hull_row_max]
        g = np.einsum("al,bl,lk->abk", rows, hb, inv, optimize=True)
        coef = 0.5 * self.ck2 * g
        spec = np.zeros(coef.shape[:2] + (2 * nx,))
        spec[..., :nx] = coef
        self._F = np.ascontiguousarray(np.real(fft.ifft(spec, axis=-1)) * (2 * nx))

    def green(self, ia, ja, ib, jb) -> np.ndarray:
        """Grounded Green's function ``G`` (unit scale) for all pairs ``(a, b)``.

        ``b`` nodes must have rows ``<= hull_row_max``; rows 0 give zeros.
        """
        ia, ja = np.asarray(ia).ravel(), np.asarray(ja).ravel()
        ib, jb = np.asarray(ib).ravel(), np.asarray(jb).ravel()
        if ja.size and ja.max() > self.row_max or jb.size and jb.max() > self.hull_row_max:
            raise ValueError("node rows exceed the precomputed table")
        A = ja[:, None]
        Bj = jb[None, :]
        ok = (A > 0) & (Bj > 0)
        A1, B1 = np.maximum(A - 1, 0), np.maximum(Bj - 1, 0)
        d = np.abs(ia[:, None] - ib[None, :])
        s = ia[:, None] + ib[None, :] + 1
        return np.where(ok, self._F[A1, B1, d] + self._F[A1, B1, s], 0.0)

    def _modes(self, i, j):
        i, j = np.asarray(i).ravel(), np.asarray(j).ravel()
        if j.max(initial=0) > self.row_max:
            raise ValueError("node rows exceed the precomputed table")
        phi = np.cos(np.pi * np.outer(i + 0.5, np.arange(self.domain.nx)) / self.domain.nx)
        return phi * np.sqrt(self.ck2) * self.r[j]

    def cov_u(self, ia, ja, ib=None, jb=None) -> np.ndarray:
        """Covariance (unit scale) of ``u`` without its constant mode."""
        Pa = self._modes(ia, ja)
        Pb = Pa if ib is None else self._modes(ib, jb)
        return (Pa * self.bottom_var) @ Pb.T

    def poisson_extension(self, bottom_row: np.ndarray, i, j) -> np.ndarray:
        """``u`` at nodes ``(i, j)`` for given real-axis values."""
        coef = fft.dct(np.asarray(bottom_row, float), norm="ortho")
        return self._modes(i, j) @ coef

    def extension_weights(self, ia, ja, hull_i, hull_j) -> np.ndarray:
        """``G[a, B] G[B, B]^{-1}``: harmonic measure of the hull front ``B`` from ``a``."""
        if np.size(hull_i) == 0:
            return np.zeros((np.size(ia), 0))
        GBB = self.green(hull_i, hull_j, hull_i, hull_j)
        GaB = self.green(ia, ja, hull_i, hull_j)
        return linalg.cho_solve(linalg.cho_factor(GBB), GaB.T).T


def calibrate_variance_scale(green: SeparableGreen, z_ref: complex, y0: float) -> float:
    """Scale ``s`` making the lattice variance of ``u(z_ref) - u(i y0)`` equal the continuum one.

    Both points are read by bilinear interpolation, as in the coupling.
    """
    from .gff import cov_halfplane
    dom = green.domain
    i, j, w = dom.bilinear(np.array([z_ref, 1j * y0]))
    C = green.cov_u(i.ravel(), j.ravel())
    v = np.concatenate([w[0], -w[1]])
    unit = float(v @ C @ v)
    return float(cov_halfplane(z_ref, z_ref, y0)) / unit
