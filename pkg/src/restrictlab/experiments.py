"""End-to-end numerical experiments: Knapp slab constructions and their dual
boxes, necessary-exponent sweeps, stationary-phase lower bounds, bilinear
growth-exponent fits, and the complex-surface demonstrations.

Every sweep returns a SweepReport holding the measured points and an
unweighted log-log least-squares slope with its standard error.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import null_space
from scipy.stats import linregress, qmc

from .conditions import (
    ConditionReport, check_c12, check_c13, complex_condition, mixed_hessian,
)
from .errors import (
    ConditionNotMet, GridTooCoarse, NearSingular, NonSymmetric, BadShape, NormalFormFailed,
    SearchFailed,
)
from .extension import (
    GridFunction, SpaceTimeGrid, bilinear_lq_norm, extend, smooth_bump, surface_jacobian,
    surface_measure_transform,
)
from .incidence import whitney_pairs
from .parallel import pmap
from .surfaces import Box, ComplexQuadratic, Surface, normalize_D, real_point, realize_complex

SCHEMA = "restrictlab.sweep/1"


# -- threshold arithmetic ---------------------------------------------------------

def bilinear_threshold(d: int, k: int) -> Fraction:
    """Critical bilinear exponent (d + 3k)/(d + k)."""
    return Fraction(d + 3 * k, d + k)


def linear_threshold(d: int, k: int) -> Fraction:
    """Lower bound (d + k)/d on q forced by the stationary-phase example."""
    return Fraction(d + k, d)


def product_threshold(n: int = 2) -> Fraction:
    """Exponent for ||Ef Eg||_{q/2} on C^n product surfaces: twice the
    bilinear threshold of the real form (d = 2n, k = 2)."""
    return 2 * bilinear_threshold(2 * n, 2)


def slab_condition_margin(p: float, q: float, d: int, k: int) -> float:
    """1 - 1/p - (d+3k)/(d+k) / (2q); nonnegative iff the slab example allows (p, q)."""
    return 1.0 - 1.0 / p - float(bilinear_threshold(d, k)) / (2.0 * q)


# -- exponent fitting ---------------------------------------------------------------

@dataclass(frozen=True)
class LogLogFit:
    slope: float
    intercept: float
    stderr: float


def check_geometric(xs, min_points: int = 4, rtol: float = 1e-9) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 1 or len(xs) < min_points:
        raise ValueError(f"a sweep needs at least {min_points} parameter values")
    if np.any(xs <= 0):
        raise ValueError("sweep parameters must be positive")
    r = xs[1:] / xs[:-1]
    if np.any(np.abs(r - r[0]) > rtol * abs(r[0])) or abs(r[0] - 1) < rtol:
        raise ValueError("sweep parameters must form a strictly geometric sequence")
    return xs


def fit_loglog(xs, ys) -> LogLogFit:
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if np.any(ys <= 0):
        raise ValueError("log-log fit needs positive measurements")
    res = linregress(np.log(xs), np.log(ys))
    return LogLogFit(float(res.slope), float(res.intercept), float(res.stderr))


@dataclass
class SweepReport:
    """Measured norms ys at parameters xs, with the fitted log-log slope."""

    name: str
    param: str
    xs: np.ndarray
    ys: np.ndarray
    predicted_exponent: float
    tol: float
    fit_exponent: float = float("nan")
    stderr: float = float("nan")
    intercept: float = float("nan")
    passed: Optional[bool] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xs = check_geometric(self.xs)
        self.ys = np.asarray(self.ys, dtype=float)
        fit = fit_loglog(self.xs, self.ys)
        self.fit_exponent, self.stderr, self.intercept = fit.slope, fit.stderr, fit.intercept
        if self.passed is None:
            self.passed = bool(abs(self.fit_exponent - self.predicted_exponent) <= self.tol)

    @property
    def pass_(self) -> bool:
        return bool(self.passed)

    def stability(self) -> dict:
        """Slope change when the largest parameter point is dropped."""
        keep = self.xs != self.xs.max()
        drop = fit_loglog(self.xs[keep], self.ys[keep]).slope
        change = abs(drop - self.fit_exponent)
        return {"slope_without_largest": drop, "change": change,
                "within_2_stderr": bool(change <= 2 * self.stderr + 1e-12)}

    def rows(self) -> list:
        lo = self.lower if self.lower is not None else [float("nan")] * len(self.xs)
        hi = self.upper if self.upper is not None else [float("nan")] * len(self.xs)
        return [(float(x), float(y), float(a), float(b)) for x, y, a, b in zip(self.xs, self.ys, lo, hi)]

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA, "name": self.name, "param": self.param,
            "xs": self.xs.tolist(), "ys": self.ys.tolist(),
            "fit_exponent": self.fit_exponent, "stderr": self.stderr,
            "predicted_exponent": self.predicted_exponent, "tol": self.tol,
            "stability": self.stability(), "pass": bool(self.passed), "extra": _jsonable(self.extra),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, Fraction):
        return str(obj)
    if hasattr(obj, "to_json"):
        return obj.to_json()
    return obj


# -- Knapp slabs ------------------------------------------------------------------------

def knapp_frame(S: Surface, nu1, nu2) -> tuple:
    """Normals n_{j,i} = (-grad phi_i(nu_j), e_i) for j = 1, 2 and an orthonormal
    basis p of their common orthogonal complement in R^(d+k)."""
    normals = []
    for nu in (nu1, nu2):
        G = S.grad(np.asarray(nu, dtype=float))  # (k, d)
        normals.append(np.concatenate([-G, np.eye(S.k)], axis=1))
    P = null_space(np.concatenate(normals)).T
    if P.shape[0] != S.d - S.k:
        raise ConditionNotMet("gradient differences do not have rank k at the slab centres")
    for row in P:  # deterministic sign: largest entry positive
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return normals[0], normals[1], P


@dataclass(eq=False)
class KnappSlab:
    """Indicator of Lambda_j: points zeta of the j-th surface piece with
    |(zeta - zeta_j) . n_{3-j,i}| <= delta and |(zeta - zeta_j) . p_n| <= delta^(1/2)."""

    S: Surface
    j: int
    delta: float
    nu: np.ndarray
    normals: np.ndarray  # n_{3-j,i}, shape (k, d+k)
    own_normals: np.ndarray  # n_{j,i}
    tangents: np.ndarray  # p_n, shape (d-k, d+k)
    f: GridFunction
    cells_across: float
    clipped: bool = False  # the slab reached the boundary of S_j

    @property
    def widths(self) -> np.ndarray:
        return np.r_[np.full(self.S.k, self.delta), np.full(self.S.d - self.S.k, np.sqrt(self.delta))]

    def members(self, xi) -> np.ndarray:
        return _slab_members(self.S, self.nu, np.concatenate([self.normals, self.tangents]), self.widths, xi)

    def volume(self, surface_measure: bool = True) -> float:
        """|Lambda_j| in d sigma (or d xi) by cell counting."""
        w = np.abs(self.f.values.real)
        if surface_measure:
            w = w * surface_jacobian(self.S, self.f.nodes())
        return float(np.sum(w) * self.f.cell)

    def lp_norm(self, p: float) -> float:
        """||f_j||_{L^p(d sigma)}."""
        return self.volume() ** (1.0 / p)

    def dual_matrix(self) -> np.ndarray:
        """V with rows n_{1,.}, n_{2,.}, p; the dual box is V^{-1} of a box."""
        first, second = (self.own_normals, self.normals) if self.j == 1 else (self.normals, self.own_normals)
        return np.concatenate([first, second, self.tangents])

    def dual_half_widths(self, c: float) -> np.ndarray:
        k, d = self.S.k, self.S.d
        return c * np.r_[np.full(2 * k, 1 / self.delta), np.full(d - k, self.delta ** -0.5)]

    def transform(self, pts) -> np.ndarray:
        """Fourier transform of f_j d sigma_j at (x, t) points."""
        return surface_measure_transform(self.S, self.f, pts, jacobian=True)


def _slab_members(S, nu, frame, widths, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    v = np.concatenate([xi - nu, S.phi(xi) - S.phi(nu)], axis=-1)
    return np.all(np.abs(v @ frame.T) <= widths, axis=-1)


def knapp_slab(S: Surface, S1: Box, S2: Box, j: int, delta: float, n: int = 32,
               min_cells: float = 8.0, probe: int = 96) -> KnappSlab:
    """Build Lambda_j around the centre of S_j, sampled on an n^d grid over
    its bounding box (clipped to S_j)."""
    if j not in (1, 2):
        raise ValueError("j must be 1 or 2")
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    if S.d < S.k:
        raise ValueError("slabs need d >= k")
    nu1, nu2 = S1.center, S2.center
    n1, n2, P = knapp_frame(S, nu1, nu2)
    own, other = (n1, n2) if j == 1 else (n2, n1)
    nu = nu1 if j == 1 else nu2
    Sj = S1 if j == 1 else S2
    frame = np.concatenate([other, P])
    widths = np.r_[np.full(S.k, delta), np.full(S.d - S.k, np.sqrt(delta))]
    # linearized constraint map u -> frame . (u, grad Phi(nu) u)
    A = frame @ np.concatenate([np.eye(S.d), S.grad(nu)])
    ext = np.abs(np.linalg.inv(A)) @ widths
    lo = np.maximum(nu - 3 * ext - 1e-12, Sj.lo)
    hi = np.minimum(nu + 3 * ext + 1e-12, Sj.hi)
    coarse = GridFunction(Box(lo, hi), np.zeros((probe,) * S.d))
    inside = _slab_members(S, nu, frame, widths, coarse.nodes())
    if not inside.any():
        raise GridTooCoarse("slab not resolved by the probe grid")
    pts = coarse.nodes()[inside]
    hc = coarse.h
    box = Box(np.maximum(pts.min(axis=0) - hc, Sj.lo), np.minimum(pts.max(axis=0) + hc, Sj.hi))
    clipped = bool(np.any(np.isclose(box.lo, Sj.lo) | np.isclose(box.hi, Sj.hi)))
    g = GridFunction(box, np.zeros((n,) * S.d))
    g.values = _slab_members(S, nu, frame, widths, g.nodes()).astype(complex)
    # cell extent measured along each normal-type constraint direction
    An = A[:S.k] / np.linalg.norm(A[:S.k], axis=1, keepdims=True)
    across = float(np.min(2 * widths[:S.k] / np.linalg.norm(A[:S.k], axis=1) / (np.abs(An) @ g.h)))
    if across < min_cells and not np.all(box.sides <= 2 * ext + 1e-12):
        raise GridTooCoarse(f"only {across:.1f} cells across the slab width (need {min_cells})")
    return KnappSlab(S, j, float(delta), np.asarray(nu, float), other, own, P, g, across, clipped)


def dual_box_points(slab: KnappSlab, c: float = 0.125, n_random: int = 256, seed: int = 0) -> np.ndarray:
    """Origin, corners and uniform samples of {V^{-1} b : |b| <= widths}."""
    V = slab.dual_matrix()
    w = slab.dual_half_widths(c)
    m = len(w)
    corners = np.array(np.meshgrid(*[[-1, 1]] * m, indexing="ij")).reshape(m, -1).T
    rng = np.random.default_rng(seed)
    b = np.concatenate([np.zeros((1, m)), corners, rng.uniform(-1, 1, (n_random, m))]) * w
    return np.linalg.solve(V, b.T).T


def _phase_gap(S: Surface, f: GridFunction, pts) -> float:
    x, t = pts[:, :S.d], pts[:, S.d:]
    G = S.grad(f.box.lattice(5))  # (M, k, d)
    reach = np.max(np.abs(x[:, None, :] + np.einsum("pk,mkd->pmd", t, G)), axis=(0, 1))
    return float(np.max(f.h * reach))


def knapp_dual_box_value(S: Surface, slab: KnappSlab, c: float = 0.125, n_random: int = 256,
                         seed: int = 0) -> dict:
    """min |(f_j d sigma_j)^| over sampled points of the dual box."""
    pts = dual_box_points(slab, c, n_random, seed)
    gap = _phase_gap(S, slab.f, pts)
    if gap > 0.5:
        raise GridTooCoarse(f"slab grid too coarse for its dual box (h * reach = {gap:.3f})")
    vals = np.abs(slab.transform(pts))
    e = (S.d + S.k) / 2
    vol = slab.volume()
    return {
        "min_abs": float(vals.min()), "at_origin": float(vals[0]), "volume": vol,
        "kappa": float(vals.min() / slab.delta ** e), "min_over_volume": float(vals.min() / vol),
        "box": {"matrix": slab.dual_matrix().tolist(), "half_widths": slab.dual_half_widths(c).tolist(),
                "c": c, "samples": len(pts)},
    }


def knapp_sweep(S: Surface, S1: Box, S2: Box, deltas: Sequence[float], j: int = 1, c: float = 0.125,
                n: int = 32, tol: float = 0.15) -> SweepReport:
    """Fit the decay exponent of the dual-box lower value; target (d + k)/2."""
    deltas = check_geometric(deltas)

    def one(delta):
        slab = knapp_slab(S, S1, S2, j, delta, n)
        return {**knapp_dual_box_value(S, slab, c), "clipped": slab.clipped}

    res = pmap(one, list(deltas))
    ys = [r["min_abs"] for r in res]
    return SweepReport("knapp-dual-box", "delta", deltas, ys, (S.d + S.k) / 2, tol,
                       lower=[r["min_abs"] for r in res], upper=[r["at_origin"] for r in res],
                       extra={"kappa": [r["kappa"] for r in res], "volume": [r["volume"] for r in res],
                              "clipped": [r["clipped"] for r in res]})


# -- necessary-condition sweep ------------------------------------------------------------

def dual_region_lq(S: Surface, slab1: KnappSlab, slab2: KnappSlab, q: float, c: float = 0.125,
                   m: int = 10) -> float:
    """||(f1 d sigma1)^ (f2 d sigma2)^||_{L^q} over the common dual box, by a
    midpoint tensor rule in the frame coordinates b = V (x, t)."""
    V = slab1.dual_matrix()
    w = slab1.dual_half_widths(c)
    u = (np.arange(m) + 0.5) / m * 2 - 1
    mesh = np.stack(np.meshgrid(*[u] * len(w), indexing="ij"), -1).reshape(-1, len(w))
    pts = np.linalg.solve(V, (mesh * w).T).T
    for sl in (slab1, slab2):
        gap = _phase_gap(S, sl.f, pts)
        if gap > 0.5:
            raise GridTooCoarse(f"slab grid too coarse for the dual region (h * reach = {gap:.3f})")
    F = np.abs(slab1.transform(pts) * slab2.transform(pts))
    cell = np.prod(2 * w) / m ** len(w) / abs(np.linalg.det(V))
    return float((np.sum(F ** q) * cell) ** (1 / q))


def necessary_exponent_sweep(S: Surface, S1: Box, S2: Box, q: float, p: float, deltas: Sequence[float],
                             c: float = 0.125, m: int = 10, n: int = 32, tol: float = 0.15,
                             margin: float = 0.1) -> SweepReport:
    """Fit both sides of ||E1 f1 E2 f2||_{L^q(dual)} <= C ||f1||_p ||f2||_p for
    Knapp slabs as delta -> 0.

    Allowed (p, q): the LHS exponent must not fall below the RHS exponent by
    more than ``tol``.  Violated by at least ``margin``: the LHS exponent must
    be the smaller one.  In between the sweep is informational.
    """
    deltas = check_geometric(deltas)
    d, k = S.d, S.k

    def one(delta):
        s1 = knapp_slab(S, S1, S2, 1, delta, n)
        s2 = knapp_slab(S, S1, S2, 2, delta, n)
        return dual_region_lq(S, s1, s2, q, c, m), s1.lp_norm(p) * s2.lp_norm(p)

    res = pmap(one, list(deltas))
    lhs = np.array([a for a, _ in res])
    rhs = np.array([b for _, b in res])
    fl, fr = fit_loglog(deltas, lhs), fit_loglog(deltas, rhs)
    mg = slab_condition_margin(p, q, d, k)
    if mg >= 0:
        passed, regime = bool(fl.slope >= fr.slope - tol), "allowed"
    elif mg <= -margin:
        passed, regime = bool(fl.slope < fr.slope), "violated"
    else:
        passed, regime = True, "informational"
    return SweepReport("necessary-exponents", "delta", deltas, lhs, (d + k) - (d + 3 * k) / (2 * q), tol,
                       passed=passed, lower=lhs, upper=rhs,
                       extra={"rhs_fit": fr.slope, "rhs_stderr": fr.stderr, "rhs_predicted": (d + k) / p,
                              "condition_margin": mg, "regime": regime, "p": p, "q": q})


# -- stationary-phase lower bound ---------------------------------------------------------

def _resolved(S: Surface, box: Box, func: Callable, pts, gap_max: float = 0.35, n_min: int = 16) -> GridFunction:
    """Grid the data finely enough that h * |x + t grad Phi| <= gap_max at pts."""
    probe = GridFunction(box, np.zeros((2,) * S.d))
    reach = _phase_gap(S, probe, pts) / np.max(probe.h)  # upper bound over axes
    n = max(n_min, int(np.ceil(np.max(box.sides) * reach / gap_max)))
    return GridFunction.from_function(box, n, func)


def _time_direction(S: Surface, nu1, nu2) -> np.ndarray:
    if S.k == 1:
        return np.ones(1)
    from .conditions import sphere_samples
    ts = sphere_samples(S.k, 32)
    score = np.minimum(np.abs(np.linalg.det(mixed_hessian(S, nu1, ts))),
                       np.abs(np.linalg.det(mixed_hessian(S, nu2, ts))))
    return ts[int(np.argmax(score))]


def stationary_box_value(S: Surface, nu1, nu2, R: float, q: float, r: float = 0.1,
                         c_grid: Sequence[float] = tuple(2.0 ** -np.arange(1, 9)),
                         kappa_min: float = 0.1, n_mc: int = 1024, seed: int = 0) -> dict:
    """Search (over the cube size c R) for a cube Q on which R^{d/2}|E1 psi1(. - x0)|
    and R^{d/2}|E2 psi2| both exceed kappa_min, then measure ||E1 E2||_{L^q(Q)}.

    Q is centred at t = R e, x = -t grad Phi(nu2), so E2 psi2 is stationary at
    nu2; the modulation x0 = t (grad Phi(nu1) - grad Phi(nu2)) moves the
    stationary point of E1 to nu1.  Modulating psi1 by e^{-2 pi i x0 xi} is the
    same as evaluating E1 psi1 at x - x0.
    """
    nu1, nu2 = np.asarray(nu1, float), np.asarray(nu2, float)
    d, k = S.d, S.k
    e = _time_direction(S, nu1, nu2)
    tc = R * e
    xc = -tc @ S.grad(nu2)
    x0 = xc + tc @ S.grad(nu1)
    center = np.r_[xc, tc]
    shift = np.r_[x0, np.zeros(k)]
    b1, b2 = Box.cube(nu1, 2 * r), Box.cube(nu2, 2 * r)
    u = qmc.Sobol(d + k, scramble=True, seed=seed).random(n_mc) - 0.5
    for c in c_grid:
        side = c * R
        pts = center + side * u
        e1 = extend(S, _resolved(S, b1, smooth_bump(b1), pts - shift), pts - shift)
        e2 = extend(S, _resolved(S, b2, smooth_bump(b2), pts), pts)
        kappa = float(R ** (d / 2) * min(np.abs(e1).min(), np.abs(e2).min()))
        if kappa >= kappa_min:
            norm = float((side ** (d + k) * np.mean(np.abs(e1 * e2) ** q)) ** (1 / q))
            return {"norm": norm, "kappa": kappa, "c": float(c), "side": side,
                    "center": center.tolist(), "x0": x0.tolist(), "direction": e.tolist()}
    raise SearchFailed(f"no cube with both amplitudes >= {kappa_min} R^(-d/2) at R = {R:g}")


def stationary_box_lower(S: Surface, nu1, nu2, q: float, Rs: Sequence[float], r: float = 0.1,
                         kappa_min: float = 0.1, n_mc: int = 1024, tol: float = 0.15,
                         seed: int = 0, certify: bool = True) -> SweepReport:
    """Fit the R exponent of ||E1 E2||_{L^q(Q)} on stationary cubes; target
    -d + (d + k)/q.  The cube fraction c is searched at the largest R, where
    the amplitudes near the support edges are smallest, then held fixed."""
    Rs = check_geometric(Rs)
    nu1, nu2 = np.asarray(nu1, float), np.asarray(nu2, float)
    if certify:
        rep = check_c12(S, Box.cube(nu1, 2 * r), Box.cube(nu2, 2 * r))
        if not rep.passed:
            raise ConditionNotMet("mixed Hessian condition fails on the bump supports", rep)
    last = stationary_box_value(S, nu1, nu2, Rs[-1], q, r, kappa_min=kappa_min, n_mc=n_mc, seed=seed)
    c = last["c"]
    rest = pmap(lambda R: stationary_box_value(S, nu1, nu2, R, q, r, (c,), kappa_min, n_mc, seed),
                list(Rs[:-1]))
    res = rest + [last]
    return SweepReport("stationary-box", "R", Rs, [v["norm"] for v in res], -S.d + (S.d + S.k) / q, tol,
                       extra={"kappa": [v["kappa"] for v in res], "c": c, "q": q})


# -- bilinear growth ------------------------------------------------------------------------

def random_smooth_data(box: Box, seed: int = 0, modes: int = 3) -> Callable:
    """Smooth bump on ``box`` times a random trigonometric polynomial; a fixed
    callable, so every grid samples the same function."""
    rng = np.random.default_rng(seed)
    ks = np.stack(np.meshgrid(*[np.arange(-modes, modes + 1)] * box.dim, indexing="ij"), -1).reshape(-1, box.dim)
    coef = rng.standard_normal(len(ks)) + 1j * rng.standard_normal(len(ks))
    bump = smooth_bump(box)
    lo, sides = box.lo, box.sides

    def f(xi):
        xi = np.asarray(xi, float)
        u = (xi - lo) / sides
        return bump(xi) * (np.exp(2j * np.pi * u @ ks.T) @ coef)

    return f


def _needed_n(S: Surface, box: Box, G: SpaceTimeGrid, gap_max: float = 0.45) -> int:
    reach = np.max(np.abs(np.array([G.x_axes[i][[0, -1]] for i in range(S.d)])), axis=1)
    tmax = np.max(np.abs(G.t_points), axis=0)
    reach = reach + tmax @ np.max(np.abs(S.grad(box.lattice(9))), axis=0)
    return int(np.ceil(np.max(box.sides * reach) / gap_max))


def growth_data(kind: str, S: Surface, S1: Box, S2: Box, R: float, G: SpaceTimeGrid, seed: int = 0,
                knapp_scale: float = 1.0, n_min: int = 32) -> tuple:
    """Data pair for the growth sweep at scale R: ``random`` smooth data or
    Knapp slabs of width delta = knapp_scale / R."""
    if kind == "random":
        f1, f2 = random_smooth_data(S1, seed), random_smooth_data(S2, seed + 1)
        n1 = max(n_min, _needed_n(S, S1, G))
        n2 = max(n_min, _needed_n(S, S2, G))
        return GridFunction.from_function(S1, n1, f1), GridFunction.from_function(S2, n2, f2)
    if kind == "knapp":
        delta = min(1.0, knapp_scale / R)
        out = []
        for j in (1, 2):
            probe = knapp_slab(S, S1, S2, j, delta, n_min)
            n = max(n_min, _needed_n(S, probe.f.box, G))
            out.append(knapp_slab(S, S1, S2, j, delta, n).f)
        return tuple(out)
    raise ValueError(f"unknown data kind {kind!r}")


def growth_norm(S: Surface, f: GridFunction, g: GridFunction, G: SpaceTimeGrid, q: float) -> float:
    """||E1 f E2 g||_{L^q(G)} / (||f||_2 ||g||_2)."""
    return bilinear_lq_norm(S, f, S, g, G, q) / (f.norm() * g.norm())


def bilinear_growth_sweep(S: Surface, S1: Box, S2: Box, q: float, Rs: Sequence[float], data: str = "random",
                          seed: int = 0, knapp_scale: float = 1.0, upper_gate: float = 0.2,
                          lower_gate: float = 0.05, band: float = 0.1, spacing_x: float = 0.25,
                          certify: bool = True) -> SweepReport:
    """Fit alpha in ||E1 f E2 g||_{L^q(Q_R)} <~ R^alpha ||f||_2 ||g||_2.

    Above the bilinear threshold by ``band`` the gate is alpha <= upper_gate;
    below it by ``band`` with Knapp data the gate is alpha >= lower_gate;
    otherwise the sweep is informational.
    """
    Rs = check_geometric(Rs)
    if certify:
        for rep in (check_c12(S, S1, S2), check_c13(S, S1, S2)):
            if not rep.passed:
                raise ConditionNotMet(f"{rep.condition} fails on the data boxes", rep)
    d, k = S.d, S.k
    hull = Box(np.minimum(S1.lo, S2.lo), np.maximum(S1.hi, S2.hi))
    ys = []
    for R in Rs:
        G = SpaceTimeGrid.for_surface(S, hull, R, spacing_x=spacing_x)
        f, g = growth_data(data, S, S1, S2, R, G, seed, knapp_scale)
        ys.append(growth_norm(S, f, g, G, q))
    thr = float(bilinear_threshold(d, k))
    predicted = (d + 3 * k) / (2 * q) - (d + k) / 2 if data == "knapp" else 0.0
    rep = SweepReport("bilinear-growth", "R", Rs, ys, predicted, float("nan"), passed=True,
                      extra={"q": q, "data": data, "threshold": thr})
    if q >= thr + band:
        rep.passed, rep.extra["gate"] = bool(rep.fit_exponent <= upper_gate), f"alpha <= {upper_gate}"
    elif q <= thr - band and data == "knapp":
        rep.passed, rep.extra["gate"] = bool(rep.fit_exponent >= lower_gate), f"alpha >= {lower_gate}"
    else:
        rep.extra["gate"] = "informational"
    return rep


# -- complex surfaces ----------------------------------------------------------------------------

def complex_failure_demo(n: int = 2, D=None, box_side: float = 1e-10) -> dict:
    """Separated pairs on which the complex transversality quantity vanishes,
    confirmed on the real form by the C13 scan."""
    if n != 2:
        raise ValueError("the demonstration is for n = 2")
    I = np.eye(2)
    cases = []

    def case(label, Dm, z1, z2):
        z1, z2 = np.asarray(z1, complex), np.asarray(z2, complex)
        cases.append({"label": label, "D": np.asarray(Dm).tolist(), "z1": z1, "z2": z2,
                      "separation": float(np.linalg.norm(z2 - z1)),
                      "value": complex_condition(Dm, z1, z2)})

    case("identity, complex separation (1, i)", I, [0, 0], [1, 1j])
    case("diag(1,-1), real separation (1, 1)", np.diag([1.0, -1.0]), [0, 0], [1, 1])
    case("identity, real separation (1, 0)", I, [0, 0], [1, 0])
    lines = [[s, s * sgn] for sgn in (1.0, -1.0) for s in (-1.0, 1.0)]
    null_pair = cases[0] if D is None else None
    if D is not None:
        D = np.asarray(D, float)
        lam, Q = np.linalg.eigh(D)
        # an isotropic complex vector for z^T D z: u with sum lam_i u_i^2 = 0
        u = Q @ np.array([1 / np.sqrt(abs(lam[0])), (1j if lam[0] * lam[1] > 0 else 1) / np.sqrt(abs(lam[1]))])
        u = u / np.linalg.norm(u)
        case("given D, isotropic separation", D, [0, 0], u)
        null_pair = cases[-1]
    Dn = np.asarray(null_pair["D"], float)
    S = realize_complex(ComplexQuadratic(Dn))
    b1 = Box.cube(real_point(null_pair["z1"]), box_side)
    b2 = Box.cube(real_point(null_pair["z2"]), box_side)
    rep = check_c13(S, b1, b2, grid=2)
    cert = ConditionReport("complex-separation", rep.min_abs_det, rep.argmin, rep.sample_counts,
                           rep.threshold, False, {"certified_failure": bool(rep.min_abs_det <= 1e-9),
                                                  "pair": null_pair["label"]})
    return {"cases": cases, "null_lines_diag_1_-1": lines, "report": cert,
            "min_abs_det": rep.min_abs_det}


MODEL_PRODUCT = np.array([[0.0, 1.0], [1.0, 0.0]])  # 1/2 z^T D z = z1 z2


def _cbox(lo, hi) -> Box:
    """Product of complex squares (one per variable) in real coordinates
    (x1, x2, y1, y2) with z_i = x_i + i y_i."""
    (a, b), (c, e) = lo, hi
    return Box([a.real, b.real, a.imag, b.imag], [c.real, e.real, c.imag, e.imag])


def _indicator(box: Box) -> Callable:
    return lambda x: box.contains(np.asarray(x, float)).astype(float)


@dataclass
class PipelineReport:
    levels: list
    ratios: list
    predicted_slope: float
    fit_slope: float
    passed: bool
    reassembly_bound: float
    direct: float
    normal_form: str
    probes: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return _jsonable({**self.__dict__, "schema": "restrictlab.whitney-bilinear/1"})


def whitney_bilinear_pipeline(D, f: Optional[Callable] = None, g: Optional[Callable] = None, q: float = 4.0,
                              p: float = 4.0, j_max: int = 4, W: float = 4.0, n_points: int = 1024,
                              tol: float = 0.2, seed: int = 0,
                              probes: Sequence[tuple] = ((2, 0), (2, 2), (3, 1))) -> PipelineReport:
    """Whitney-level bilinear estimates on the product surface z1 z2.

    f lives on H1 x K and g on H2 x K (H1, H2 separated squares in the first
    variable, K the unit square in the second).  At level j each probe pair
    (I, I') of Whitney squares (offset I' - I in index units) gives pieces
    f 1_{H1 x I}, g 1_{H2 x I'}.  The pieces are translated so that I is
    centred at 0 (an exact shear of space-time), and ||E f E g||_{q/2} is
    measured by quasi-Monte Carlo over the box |w1| <= W/2, |w2|, |w3| <= 2^j W/2.
    The per-level ratio to ||f||_p ||g||_p is fitted against j.
    """
    try:
        nf = normalize_D(D)
    except (NearSingular, NonSymmetric, BadShape) as exc:
        raise NormalFormFailed(str(exc)) from exc
    S = realize_complex(ComplexQuadratic(MODEL_PRODUCT))
    H1 = (complex(-1.25, -0.25), complex(-0.75, 0.25))
    H2 = (complex(0.75, -0.25), complex(1.25, 0.25))
    K = (complex(-0.5, -0.5), complex(0.5, 0.5))
    full1, full2 = _cbox((H1[0], K[0]), (H1[1], K[1])), _cbox((H2[0], K[0]), (H2[1], K[1]))
    f = f if f is not None else _indicator(full1)
    g = g if g is not None else _indicator(full2)
    pairs = whitney_pairs(j_max, 2)
    sob = qmc.Sobol(6, scramble=True, seed=seed).random(n_points) - 0.5

    def measure(fb, gb, ff, gg, scale):
        # w coordinates in real order: (w1.re, w2.re, w1.im, w2.im, t1, t2)
        widths = W * np.array([1, scale, 1, scale, scale, scale])
        pts = sob * widths
        F = extend(S, _resolved(S, fb, ff, pts, 0.45, 8), pts)
        G = extend(S, _resolved(S, gb, gg, pts, 0.45, 8), pts)
        return float((np.prod(widths) * np.mean(np.abs(F * G) ** (q / 2))) ** (2 / q))

    def lp(box, func):
        grid = GridFunction.from_function(box, 24, func)
        return grid.norm(p)

    levels, ratios, details, bound = [], [], {}, 0.0
    for j, ps in pairs.items():
        if not ps:
            continue
        s = 2.0 ** -j
        by_offset = {}
        for I, J in ps:
            by_offset.setdefault(tuple(np.subtract(J.index, I.index)), (I, J))
        vals, norms = [], []
        for off in probes:
            if off not in by_offset:
                continue
            I, J = by_offset[off]
            a = complex(*(I.lo + s / 2 - 0.5))
            sq = (complex(-s / 2, -s / 2), complex(s / 2, s / 2))
            sqJ = (sq[0] + complex(*(J.lo - I.lo)), sq[1] + complex(*(J.lo - I.lo)))
            fb = _cbox((H1[0], sq[0]), (H1[1], sq[1]))
            gb = _cbox((H2[0], sqJ[0]), (H2[1], sqJ[1]))
            sh = np.array([0, a.real, 0, a.imag])
            ff = lambda x, _s=sh: f(np.asarray(x) + _s)
            gg = lambda x, _s=sh: g(np.asarray(x) + _s)
            norm = measure(fb, gb, ff, gg, 1 / s)
            den = lp(fb, ff) * lp(gb, gg)
            vals.append(norm / den if den > 0 else 0.0)
            norms.append(norm)
            details.setdefault(str(off), []).append({"level": j, "norm": norm, "ratio": vals[-1]})
        if vals:
            levels.append(j)
            ratios.append(float(max(vals)))
            # triangle-inequality reassembly, probes standing in for every pair of the level
            bound += len(ps) * float(np.mean(norms))
    predicted = 4 * (1 / p + 2 / q - 1)
    if len(levels) >= 2:
        fit = float(np.polyfit(levels, np.log2(ratios), 1)[0])
    else:
        fit = predicted if levels else float("nan")
    direct = measure(full1, full2, f, g, 1.0)
    return PipelineReport(levels, ratios, predicted, fit, bool(abs(fit - predicted) <= tol), bound, direct,
                          nf.form, details)
