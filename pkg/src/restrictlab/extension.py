"""Numerical evaluation of the extension operator

    Ef(x, t) = int e^{2 pi i (x . xi + t . Phi(xi))} f(xi) dxi

by midpoint quadrature, per-slice chirp-z evaluation on space-time grids,
L^q norms of fields and bilinear products over cubes, and a Plancherel
(quadrilinear delta) oracle for ||E1 f E2 g||_2.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np
from scipy.signal import CZT

from .errors import BadShape, RankDeficientD, ResolutionTooCoarse, TailNotConverged
from .parallel import pmap
from .surfaces import Box, Surface

CHUNK = 1 << 22  # complex entries per phase block


# -- data on a parameter box --------------------------------------------------

@dataclass(eq=False)
class GridFunction:
    """Samples of f at the midpoints of an n^d grid on ``box``."""

    box: Box
    values: np.ndarray
    func: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        d = self.box.dim
        if self.values.ndim != d or len(set(self.values.shape)) != 1:
            raise BadShape(f"values must have shape (n,)*{d}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite sample values")

    @classmethod
    def from_function(cls, box: Box, n: int, func: Callable) -> "GridFunction":
        g = cls(box, np.zeros((n,) * box.dim), func)
        g.values = np.asarray(func(g.nodes()), dtype=complex).reshape((n,) * box.dim)
        return g

    @property
    def d(self) -> int:
        return self.box.dim

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> np.ndarray:
        return self.box.sides / self.n

    @property
    def cell(self) -> float:
        return float(np.prod(self.h))

    def axes(self) -> list:
        return [self.box.lo[i] + (np.arange(self.n) + 0.5) * self.h[i] for i in range(self.d)]

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def flat_nodes(self) -> np.ndarray:
        return self.nodes().reshape(-1, self.d)

    def norm(self, p: float = 2.0) -> float:
        a = np.abs(self.values)
        if np.isinf(p):
            return float(a.max())
        return float((np.sum(a ** p) * self.cell) ** (1.0 / p))

    def refined(self, factor: int = 2) -> "GridFunction":
        if self.func is None:
            raise ValueError("refinement needs the generating function")
        return GridFunction.from_function(self.box, self.n * factor, self.func)

    def scaled(self, lam) -> "GridFunction":
        f = None if self.func is None else (lambda x, _f=self.func: lam * _f(x))
        return GridFunction(self.box, lam * self.values, f)

    def modulated(self, x0) -> "GridFunction":
        """f(xi) e^{-2 pi i x0 . xi}."""
        x0 = np.asarray(x0, dtype=float)
        ph = np.exp(-2j * np.pi * self.nodes() @ x0)
        f = None if self.func is None else (
            lambda x, _f=self.func: _f(x) * np.exp(-2j * np.pi * x @ x0))
        return GridFunction(self.box, self.values * ph, f)


def smooth_bump(box: Box, power: float = 1.0) -> Callable:
    """C^infinity bump supported on ``box`` (product of exp(-1/(1-s^2)))."""
    c, r = box.center, 0.5 * box.sides

    def f(x):
        s = (np.asarray(x) - c) / r
        inside = np.all(np.abs(s) < 1, axis=-1)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            v = np.exp(-np.sum(power / (1 - np.minimum(s * s, 1 - 1e-300)), axis=-1) + power * s.shape[-1])
        return np.where(inside, v, 0.0)

    return f


# -- direct quadrature ---------------------------------------------------------

def _split_pts(S: Surface, pts) -> tuple:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if pts.shape[-1] != S.d + S.k:
        raise BadShape(f"points must have {S.d + S.k} coordinates")
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite evaluation points")
    return pts[:, :S.d], pts[:, S.d:]


def _weights(S: Surface, f: GridFunction, jacobian: bool = False):
    xi = f.flat_nodes()
    w = f.values.reshape(-1) * f.cell
    if jacobian:
        w = w * surface_jacobian(S, xi)
    keep = w != 0
    return xi[keep], w[keep]


def _direct(S: Surface, f: GridFunction, pts, jacobian: bool = False) -> np.ndarray:
    x, t = _split_pts(S, pts)
    xi, w = _weights(S, f, jacobian)
    if len(w) == 0:
        return np.zeros(len(x), dtype=complex)
    ph = S.phi(xi)  # (M, k)
    out = np.empty(len(x), dtype=complex)
    step = max(1, CHUNK // len(w))
    for i in range(0, len(x), step):
        arg = x[i:i + step] @ xi.T + t[i:i + step] @ ph.T
        out[i:i + step] = np.exp(2j * np.pi * arg) @ w
    return out


def extend(S: Surface, f: GridFunction, pts, check: bool = False, check_tol: float = 1e-2) -> np.ndarray:
    """Midpoint-rule values of Ef at ``pts`` (rows (x, t)).

    With ``check=True`` the quadrature is repeated on a doubled grid (needs
    ``f.func``) and ResolutionTooCoarse is raised when the two disagree by
    more than ``check_tol`` relative.
    """
    vals = _direct(S, f, pts)
    if check:
        fine = _direct(S, f.refined(2), pts)
        diff = self_check_gap(vals, fine)
        if diff > check_tol:
            raise ResolutionTooCoarse(f"n vs 2n relative disagreement {diff:.2e}")
    return vals


def self_check_gap(coarse, fine) -> float:
    scale = max(float(np.max(np.abs(fine))), 1e-300)
    return float(np.max(np.abs(coarse - fine)) / scale)


def quadrature_error_bound(S: Surface, f: GridFunction, pts, C: Optional[float] = None) -> np.ndarray:
    """C h^2 (1 + |x| + |t| max|H Phi|)^2 ||f||_1 per point, C = (2 pi)^2 d / 24."""
    x, t = _split_pts(S, pts)
    C = (2 * np.pi) ** 2 * S.d / 24 if C is None else C
    Hmax = float(np.max(np.abs(np.linalg.eigvalsh(S.hessians(f.flat_nodes())))))
    h = float(np.max(f.h))
    return C * h * h * (1 + np.linalg.norm(x, axis=1) + np.linalg.norm(t, axis=1) * Hmax) ** 2 * f.norm(1)


def surface_jacobian(S: Surface, xi) -> np.ndarray:
    """sqrt(det(I + grad Phi^T grad Phi)) at xi."""
    G = S.grad(np.asarray(xi, dtype=float))
    M = np.eye(S.d) + np.swapaxes(G, -1, -2) @ G
    return np.sqrt(np.linalg.det(M))


def surface_measure_transform(S: Surface, f: GridFunction, pts, jacobian: bool = False) -> np.ndarray:
    """Fourier transform of f d sigma on the graph; ``jacobian`` switches from
    the parameter measure dxi to the induced surface measure."""
    if not jacobian:
        return extend(S, f, pts)
    return _direct(S, f, pts, jacobian=True)


# -- space-time grids ------------------------------------------------------------

def phi_bound(S: Surface, box: Box, n: int = 17) -> float:
    """max |Phi_j| over a lattice of ``box`` (used for the t spacing)."""
    return float(np.max(np.abs(S.phi(box.lattice(n)))))


def grad_bound(S: Surface, box: Box, n: int = 17) -> float:
    return float(np.max(np.abs(S.grad(box.lattice(n)))))


@dataclass(eq=False)
class SpaceTimeGrid:
    """Midpoint grid on the cube of side ``side`` centred at ``center`` in R^(d+k)."""

    d: int
    k: int
    center: np.ndarray
    side: float
    spacing: np.ndarray  # requested spacing per axis (d x-axes then k t-axes)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.spacing = np.broadcast_to(np.asarray(self.spacing, dtype=float), (self.d + self.k,)).copy()
        if self.center.shape != (self.d + self.k,):
            raise BadShape("center must have d + k coordinates")
        self.counts = np.maximum(1, np.ceil(self.side / self.spacing - 1e-9).astype(int))
        self.h = self.side / self.counts

    @classmethod
    def for_surface(cls, S: Surface, box: Box, side: float, center=None, spacing_x: float = 0.25,
                    spacing_t: Optional[float] = None) -> "SpaceTimeGrid":
        """Defaults: x spacing 1/4, t spacing 1/(4 max|Phi|) over ``box``."""
        center = np.zeros(S.d + S.k) if center is None else center
        if spacing_t is None:
            spacing_t = 0.25 / max(phi_bound(S, box), 1e-12)
        sp = np.concatenate([np.full(S.d, spacing_x), np.full(S.k, spacing_t)])
        return cls(S.d, S.k, center, side, sp)

    def axis(self, i: int) -> np.ndarray:
        return self.center[i] - self.side / 2 + (np.arange(self.counts[i]) + 0.5) * self.h[i]

    @property
    def x_axes(self) -> list:
        return [self.axis(i) for i in range(self.d)]

    @property
    def t_points(self) -> np.ndarray:
        mesh = np.meshgrid(*[self.axis(self.d + j) for j in range(self.k)], indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.k)

    @property
    def shape(self) -> tuple:
        return tuple(int(c) for c in self.counts)

    @property
    def cell(self) -> float:
        return float(np.prod(self.h))

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*[self.axis(i) for i in range(self.d + self.k)], indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.d + self.k)

    def sub(self, side: float) -> "SpaceTimeGrid":
        return SpaceTimeGrid(self.d, self.k, self.center, side, self.h)

    def nyquist_ok(self, S: Surface, box: Box) -> bool:
        """x spacing <= 1/(2 max|xi_i|), t spacing <= 1/(2 max|Phi_j|) over ``box``."""
        W = np.maximum(np.abs(box.lo), np.abs(box.hi))
        L = phi_bound(S, box)
        ok_x = np.all(self.h[:self.d] * 2 * W <= 1 + 1e-12)
        ok_t = np.all(self.h[self.d:] * 2 * L <= 1 + 1e-12)
        return bool(ok_x and ok_t)


def grid_resolution_gap(S: Surface, f: GridFunction, G: SpaceTimeGrid) -> float:
    """max_i h_i * max |x_i + t . d_i Phi(xi)| over the grid and f's box.

    The midpoint sum is periodic in x with period 1/h; values <= 1/2 mean the
    integrand phase is resolved on every grid point.
    """
    lo_x = np.array([a[0] for a in G.x_axes])
    hi_x = np.array([a[-1] for a in G.x_axes])
    tmax = np.max(np.abs(G.t_points), axis=0)
    gb = np.max(np.abs(S.grad(f.box.lattice(9))), axis=0)  # (k, d)
    reach = np.maximum(np.abs(lo_x), np.abs(hi_x)) + tmax @ gb
    return float(np.max(f.h * reach))


def _czt_axis(n, m, h_xi, h_x):
    return CZT(n, m, w=np.exp(2j * np.pi * h_x * h_xi), a=1.0)


class SliceEvaluator:
    """Evaluates Ef(., t) on the x-grid of G for one t at a time.

    Per axis i, sum_m e^{2 pi i x_j xi_m} a_m with x_j = x0 + j hx and
    xi_m = a + m h is a chirp-z transform after premodulating a_m by
    e^{2 pi i x0 xi_m} and postmodulating by e^{2 pi i j hx a}.
    """

    def __init__(self, S: Surface, f: GridFunction, G: SpaceTimeGrid, strict: bool = True,
                 jacobian: bool = False):
        if G.d != S.d or G.k != S.k or f.d != S.d:
            raise BadShape("dimension mismatch between surface, data and grid")
        gap = grid_resolution_gap(S, f, G)
        if strict and gap > 0.5:
            raise ResolutionTooCoarse(
                f"xi grid too coarse for the space-time cube (h * reach = {gap:.3f} > 1/2)")
        self.S, self.f, self.G = S, f, G
        self.gap = gap
        xi_axes = f.axes()
        self.base = f.values * f.cell
        if jacobian:
            self.base = self.base * surface_jacobian(S, f.nodes())
        self.phase = S.phi(f.nodes())  # (n,...,n, k)
        self.transforms = []
        pre = np.ones_like(self.base)
        for i in range(S.d):
            xs = G.axis(i)
            a = xi_axes[i][0]
            shape = [1] * S.d
            shape[i] = f.n
            pre = pre * np.exp(2j * np.pi * xs[0] * xi_axes[i]).reshape(shape)
            post = np.exp(2j * np.pi * (np.arange(len(xs)) * G.h[i]) * a)
            self.transforms.append((_czt_axis(f.n, len(xs), f.h[i], G.h[i]), post))
        self.base = self.base * pre

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        a = self.base * np.exp(2j * np.pi * (self.phase @ t))
        for i, (czt, post) in enumerate(self.transforms):
            a = czt(a, axis=i)
            shape = [1] * self.S.d
            shape[i] = len(post)
            a = a * post.reshape(shape)
        return a


def iter_slices(S: Surface, f: GridFunction, G: SpaceTimeGrid, strict: bool = True) -> Iterator:
    ev = SliceEvaluator(S, f, G, strict)
    for t in G.t_points:
        yield t, ev(t)


def extend_grid(S: Surface, f: GridFunction, G: SpaceTimeGrid, strict: bool = True) -> np.ndarray:
    """Field of Ef on all of G, shape G.shape (x axes first, then t axes)."""
    ev = SliceEvaluator(S, f, G, strict)
    slices = pmap(ev, list(G.t_points))
    arr = np.stack(slices, axis=-1)
    return arr.reshape(G.shape)


# -- norms -------------------------------------------------------------------------

def lq_norm(field, G: SpaceTimeGrid, q: float) -> float:
    """Riemann-sum L^q (quasi-)norm over the cube of G; q = inf gives the max."""
    a = np.abs(np.asarray(field))
    if np.isinf(q):
        return float(a.max())
    if q <= 0:
        raise ValueError("q must be positive")
    return float((np.sum(a ** q) * G.cell) ** (1.0 / q))


def bilinear_lq_norm(S1: Surface, f: GridFunction, S2: Surface, g: GridFunction, G: SpaceTimeGrid,
                     q: float, strict: bool = True) -> float:
    """||E1 f E2 g||_{L^q(G)}, streamed slice by slice."""
    e1 = SliceEvaluator(S1, f, G, strict)
    e2 = SliceEvaluator(S2, g, G, strict)

    def one(t):
        a = np.abs(e1(t) * e2(t))
        return float(a.max()) if np.isinf(q) else float(np.sum(a ** q))

    parts = pmap(one, list(G.t_points))
    if np.isinf(q):
        return max(parts)
    return float((sum(parts) * G.cell) ** (1.0 / q))


def slice_l2_norms(S: Surface, f: GridFunction, ts, period_grid: int = 1) -> np.ndarray:
    """||Ef(., t)||_2 over one full period of the discrete sum.

    The midpoint sum is 1/h periodic in x; on the x-grid of spacing
    h_x = 1/(n h) covering one period the discrete Parseval identity gives
    ||Ef(., t)||_2 = ||f||_2 exactly.
    """
    n = f.n
    period = 1.0 / f.h
    out = []
    for t in np.atleast_2d(ts):
        a = f.values * np.exp(2j * np.pi * S.phi(f.nodes()) @ np.asarray(t, float)) * f.cell
        F = np.fft.fftn(a)
        cell = float(np.prod(period / n))
        out.append(np.sqrt(np.sum(np.abs(F) ** 2) * cell))
    return np.array(out)


def bilinear_l1_constant(S: Surface, f: GridFunction, g: GridFunction, R: float, oversample: int = 2,
                         spacing_t: Optional[float] = None) -> float:
    """||E f E g||_{L^1} / (R^k ||f||_2 ||g||_2) with t over [-R/2, R/2]^k.

    The x-integral runs over one full period of the discrete sums (both data
    grids must share the cell size), sampled with ``oversample`` times the
    Parseval grid, so Cauchy-Schwarz gives a value <= 1 exactly.
    """
    if not np.allclose(f.h, g.h):
        raise BadShape("f and g must share the cell size")
    if spacing_t is None:
        spacing_t = 0.25 / max(phi_bound(S, f.box), phi_bound(S, g.box), 1e-12)
    m = int(np.ceil(R / spacing_t))
    ht = R / m
    t_axis = -R / 2 + (np.arange(m) + 0.5) * ht
    ts = np.stack(np.meshgrid(*[t_axis] * S.k, indexing="ij"), -1).reshape(-1, S.k)
    shape = tuple(oversample * f.n for _ in range(S.d))
    axes = tuple(range(S.d))
    cell_x = float(np.prod(1.0 / f.h)) / np.prod(shape)
    pf, pg = S.phi(f.nodes()), S.phi(g.nodes())

    def one(t):
        a = np.fft.fftn(f.values * np.exp(2j * np.pi * pf @ t) * f.cell, shape, axes)
        b = np.fft.fftn(g.values * np.exp(2j * np.pi * pg @ t) * g.cell, shape, axes)
        return float(np.sum(np.abs(a * b)))

    total = sum(pmap(one, list(ts))) * cell_x * ht ** S.k
    return total / (R ** S.k * f.norm() * g.norm())


# -- Plancherel oracle -------------------------------------------------------------

@dataclass
class BilinearL2Report:
    direct: float
    plancherel: float
    tail: float
    bin_width: float
    relative_gap: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def quadrilinear_l2(S1: Surface, f: GridFunction, S2: Surface, g: GridFunction, bin_width: float) -> float:
    """||E1 f E2 g||_2 via Plancherel: the L^2 norm of the density of the
    push-forward of f(xi) g(eta) under (xi, eta) -> (xi + eta, Phi1(xi) + Phi2(eta)),
    discretized by binning with a box mollifier of width ``bin_width``."""
    xi, wf = _weights(S1, f)
    eta, wg = _weights(S2, g)
    P1 = np.concatenate([xi, S1.phi(xi)], axis=1)
    P2 = np.concatenate([eta, S2.phi(eta)], axis=1)
    lo = P1.min(0) + P2.min(0) - bin_width
    D = P1.shape[1]
    hi = P1.max(0) + P2.max(0) + bin_width
    nb = np.ceil((hi - lo) / bin_width).astype(int) + 1
    H = np.zeros(int(np.prod(nb)), dtype=complex)
    step = max(1, (1 << 21) // len(wg))
    for i in range(0, len(wf), step):
        pts = P1[i:i + step, None, :] + P2[None, :, :]
        idx = np.floor((pts - lo) / bin_width).astype(np.int64)
        lin = np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), tuple(nb))
        w = wf[i:i + step, None] * wg[None, :]
        H += np.bincount(lin.ravel(), weights=w.real.ravel(), minlength=H.size)
        H += 1j * np.bincount(lin.ravel(), weights=w.imag.ravel(), minlength=H.size)
    return float(np.sqrt(np.sum(np.abs(H) ** 2) / bin_width ** D))


def bilinear_l2_oracle(S: Surface, f: GridFunction, g: GridFunction, G: SpaceTimeGrid,
                       bin_width: Optional[float] = None, tail_tol: float = 0.01,
                       S2: Optional[Surface] = None) -> BilinearL2Report:
    """Compare the direct ||E f E g||_{L^2(G)} with the Plancherel form.

    The tail is estimated as 1 - ||.||^2_{L^2(G/2)} / ||.||^2_{L^2(G)}; a
    tail above ``tail_tol`` raises TailNotConverged.  The default bin width
    is the dual resolution 1 / side of the cube.
    """
    S2 = S if S2 is None else S2
    from .conditions import d_matrix

    c1, c2 = f.box.lattice(3), g.box.lattice(3)
    sv = np.linalg.svd(d_matrix(S, c1[:, None, :], c2[None, :, :]) if S2 is S else
                       S2.grad(c2[None]) - S.grad(c1[:, None]), compute_uv=False)
    if np.min(sv[..., -1]) < 1e-10:
        raise RankDeficientD("gradient differences are dependent on S1 x S2")
    full = bilinear_lq_norm(S, f, S2, g, G, 2.0)
    half = bilinear_lq_norm(S, f, S2, g, G.sub(G.side / 2), 2.0)
    tail = 1.0 - (half / full) ** 2 if full > 0 else 0.0
    if tail > tail_tol:
        raise TailNotConverged(f"L2 mass outside the half cube is {tail:.3%}")
    w = 1.0 / G.side if bin_width is None else bin_width
    pl = quadrilinear_l2(S, f, S2, g, w)
    return BilinearL2Report(full, pl, tail, w, abs(full - pl) / max(pl, 1e-300))
