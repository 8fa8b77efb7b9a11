"""Plates pi_{l,nu}, the resonance surface Pi_1^{nu1,nu2'}, the conical set
Gamma built over it, and sampled witnesses for the plate intersection and
Gamma/plate transversality statements.

A plate is the slab ``|x - l + sum_j t_j grad phi_j(nu)| <= C R^(1/2+delta)``
in R^(d+k).  Pi_1^{nu1,nu2'} is the set of nu1' with
``Phi(nu1) + Phi(nu1' + nu2' - nu1) = Phi(nu1') + Phi(nu2')``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.distance import pdist

from .conditions import c12_value, c13_value, c15_value, d_matrix, mixed_hessian, n_matrix, sphere_samples
from .errors import LeftBox, NoConvergence, PreconditionFailed, RankDeficientD
from .surfaces import Box, Surface

RANK_TOL = 1e-10
DET_GATE = 1e-8


@dataclass(frozen=True, eq=False)
class Tube:
    """Plate pi_{l,nu} at scale R with thickening R^delta and constant C."""

    surface: Surface
    nu: np.ndarray
    R: float
    ell: Optional[np.ndarray] = None
    delta: float = 0.0
    C: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "nu", np.asarray(self.nu, dtype=float))
        ell = np.zeros(self.surface.d) if self.ell is None else np.asarray(self.ell, dtype=float)
        object.__setattr__(self, "ell", ell)

    @property
    def radius(self) -> float:
        return self.C * self.R ** (0.5 + self.delta)

    @property
    def gradients(self) -> np.ndarray:
        return self.surface.grad(self.nu)

    def offset(self, x, t) -> np.ndarray:
        """x - l + sum_j t_j grad phi_j(nu); broadcasts over leading axes."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        return x - self.ell + t @ self.gradients

    def contains(self, x, t) -> np.ndarray:
        return np.linalg.norm(self.offset(x, t), axis=-1) <= self.radius

    def shifted(self, a) -> "Tube":
        return Tube(self.surface, self.nu, self.R, self.ell + np.asarray(a, float), self.delta, self.C)


def tube_contains(T: Tube, x, t):
    return T.contains(x, t)


# -- plate intersection -----------------------------------------------------

@dataclass
class IntersectionReport:
    diameter: float
    max_radius: float
    bound: float
    C: float
    sigma_min: float
    t_bound: float
    n_accepted: int
    passed: bool

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _ball(rng, n, m):
    g = rng.standard_normal((n, m))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.random((n, 1)) ** (1.0 / m)


def tube_intersection_diameter(T1: Tube, T2: Tube, n_samples: int = 20000,
                               rng: Optional[np.random.Generator] = None) -> IntersectionReport:
    """Rejection-sample pi_{nu1} cap pi_{nu2} and measure it.

    The two slab inequalities give |t^T D - (l2 - l1)| <= r1 + r2, so t is
    drawn from the ball of radius (r1 + r2 + |l2 - l1|)/sigma_min(D) and x
    from the core of the first plate thickened by r1.  Containment is
    checked against B(0, C R^(1/2)) with C = 2/sigma_min + 2.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    S = T1.surface
    D = d_matrix(S, T1.nu, T2.nu)
    sv = np.linalg.svd(D, compute_uv=False)
    smin = float(sv[-1])
    if smin < RANK_TOL:
        raise RankDeficientD("plates over nu1, nu2 are not transversal",
                             sample={"nu1": T1.nu.tolist(), "nu2": T2.nu.tolist()})
    r1, r2 = T1.radius, T2.radius
    t_bound = (r1 + r2 + np.linalg.norm(T2.ell - T1.ell)) / smin
    t = _ball(rng, n_samples, S.k) * t_bound * 1.02
    x = T1.ell - t @ T1.gradients + r1 * _ball(rng, n_samples, S.d)
    keep = T1.contains(x, t) & T2.contains(x, t)
    pts = np.concatenate([x[keep], t[keep]], axis=1)
    if len(pts) > 3000:
        pts = pts[rng.choice(len(pts), 3000, replace=False)]
    diam = float(pdist(pts).max()) if len(pts) > 1 else 0.0
    rad = float(np.linalg.norm(pts, axis=1).max()) if len(pts) else 0.0
    C = 2.0 / smin + 2.0
    bound = C * T1.R ** 0.5 * max(T1.C, T2.C) * T1.R ** max(T1.delta, T2.delta)
    return IntersectionReport(diam, rad, float(bound), C, smin, float(t_bound), int(keep.sum()),
                              bool(rad <= bound))


# -- the resonance surface Pi -----------------------------------------------

@dataclass
class PiSurfacePoint:
    nu: np.ndarray
    residual: float
    iterations: int


def pi_constraint(S: Surface, nu1, nu2p, nu) -> np.ndarray:
    """Phi(nu1) + Phi(nu + nu2' - nu1) - Phi(nu) - Phi(nu2')."""
    nu1, nu2p, nu = (np.asarray(a, float) for a in (nu1, nu2p, nu))
    return S.phi(nu1) + S.phi(nu + nu2p - nu1) - S.phi(nu) - S.phi(nu2p)


def pi_jacobian(S: Surface, nu1, nu2p, nu) -> np.ndarray:
    """Rows grad phi_j(nu + nu2' - nu1) - grad phi_j(nu) = D(nu, nu~2)."""
    nu = np.asarray(nu, float)
    return d_matrix(S, nu, nu + np.asarray(nu2p, float) - np.asarray(nu1, float))


def solve_pi_surface(S: Surface, nu1, nu2p, seed, box1: Box, box2: Optional[Box] = None,
                     tol: float = 1e-10, max_iter: int = 50, box_tol: float = 1e-9) -> PiSurfacePoint:
    """Project ``seed`` onto Pi_1^{nu1,nu2'} by damped minimum-norm Newton steps."""
    nu = np.asarray(seed, dtype=float).copy()
    if not box1.contains(nu, box_tol):
        raise PreconditionFailed("seed is not in S1")
    J = pi_jacobian(S, nu1, nu2p, nu)
    if np.linalg.svd(J, compute_uv=False)[-1] < RANK_TOL:
        raise RankDeficientD("constraint Jacobian has rank < k at the seed", sample={"nu": nu.tolist()})
    F = pi_constraint(S, nu1, nu2p, nu)
    res = float(np.max(np.abs(F)))
    it = 0
    while res > tol:
        if it >= max_iter:
            raise NoConvergence(f"Pi projection stalled at residual {res:.3e}")
        it += 1
        J = pi_jacobian(S, nu1, nu2p, nu)
        step = -np.linalg.pinv(J) @ F
        lam = 1.0
        for _ in range(40):
            trial = nu + lam * step
            Ft = pi_constraint(S, nu1, nu2p, trial)
            rt = float(np.max(np.abs(Ft)))
            if rt < res or rt <= tol:
                break
            lam *= 0.5
        else:
            raise NoConvergence("line search failed in Pi projection")
        nu, F, res = trial, Ft, rt
    if not box1.contains(nu, box_tol):
        raise LeftBox(f"Pi point {nu} left S1")
    if box2 is not None:
        partner = nu + np.asarray(nu2p, float) - np.asarray(nu1, float)
        if not box2.contains(partner, box_tol):
            raise LeftBox(f"partner point {partner} left S2")
    return PiSurfacePoint(nu, res, it)


def pi_tangent_basis(S: Surface, nu1, nu2p, nu0) -> np.ndarray:
    """Orthonormal rows spanning the tangent space of Pi at nu0."""
    return n_matrix(pi_jacobian(S, nu1, nu2p, nu0))


def _is_affine(S: Surface) -> bool:
    return S.kind in ("quadratic", "complex-quadratic")


# -- transversality determinant ----------------------------------------------

def tangent_matrix(S: Surface, nu1, nu2p, nu0, t0, nu2) -> np.ndarray:
    """(d+k) x (d+k) matrix with rows (grad phi_j(nu0), -e_j),
    (v_i H(t0, nu0), 0) and (grad phi_j(nu2), -e_j)."""
    d, k = S.d, S.k
    V = pi_tangent_basis(S, nu1, nu2p, nu0)
    H = mixed_hessian(S, nu0, t0)
    E = -np.eye(k)
    top = np.concatenate([S.grad(np.asarray(nu0, float)), E], axis=1)
    mid = np.concatenate([V @ H, np.zeros((d - k, k))], axis=1)
    bot = np.concatenate([S.grad(np.asarray(nu2, float)), E], axis=1)
    return np.concatenate([top, mid, bot], axis=0)


def transversality_det(S: Surface, nu1, nu2p, nu0, t0, nu2) -> float:
    return float(np.linalg.det(tangent_matrix(S, nu1, nu2p, nu0, t0, nu2)))


def reduced_transversality_det(S: Surface, nu1, nu2p, nu0, t0, nu2) -> float:
    """det [[V H], [D(nu0, nu2)]], equal in modulus to the full determinant."""
    V = pi_tangent_basis(S, nu1, nu2p, nu0)
    H = mixed_hessian(S, nu0, t0)
    return float(np.linalg.det(np.concatenate([V @ H, d_matrix(S, nu0, nu2)], axis=0)))


# -- Gamma witness ------------------------------------------------------------

@dataclass
class GammaWitness:
    diameter: float
    bound: float
    passed: bool
    min_abs_det: float
    det_argmin: dict
    constants: dict
    conditions: dict
    n_points: int
    diameter_passed: bool = True
    det_passed: bool = True
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        out = dict(self.__dict__)
        out["det_argmin"] = {k: np.asarray(v).tolist() for k, v in self.det_argmin.items()}
        return out


class _GammaChart:
    """Local chart of the core surface {(-t^T grad Phi(nu), t): nu in Pi} at unit scale."""

    def __init__(self, S, nu1, nu2p, box1, rho_lo):
        self.S, self.nu1, self.nu2p, self.box1 = S, np.asarray(nu1, float), np.asarray(nu2p, float), box1
        self.V = pi_tangent_basis(S, nu1, nu2p, nu1)
        self.rho_lo = rho_lo
        half = 0.5 * box1.sides
        # tangent coordinates reaching the box; the box check is applied to nu itself
        self.s_max = float(np.linalg.norm(half)) + 1e-12

    def nu_of(self, s):
        base = self.nu1 + s @ self.V
        if _is_affine(self.S):
            F = pi_constraint(self.S, self.nu1, self.nu2p, base)
            J = pi_jacobian(self.S, self.nu1, self.nu2p, base)
            return base - np.linalg.pinv(J) @ F
        return solve_pi_surface(self.S, self.nu1, self.nu2p, base, Box(base - 1, base + 1)).nu

    def point(self, nu, tau):
        return np.concatenate([-tau @ self.S.grad(nu), tau])

    def distance(self, p) -> float:
        """Distance from p to the core over nu in Pi cap S1, rho_lo <= |tau| <= 1."""
        S, k, m = self.S, self.S.k, self.V.shape[0]
        x, t = p[:S.d], p[S.d:]
        best = np.inf
        starts = []
        if k == 1:
            for sgn in (1.0, -1.0):
                rho0 = float(np.clip(sgn * t[0], self.rho_lo, 1.0))
                starts.append(("sign", sgn, np.concatenate([np.zeros(m), [rho0]])))
        elif k == 2:
            rho0 = float(np.clip(np.linalg.norm(t), self.rho_lo, 1.0))
            th0 = float(np.arctan2(t[1], t[0]))
            starts.append(("polar", 0.0, np.concatenate([np.zeros(m), [rho0, th0]])))
        else:
            starts.append(("box", 0.0, np.concatenate([np.zeros(m), np.clip(t, -1, 1)])))

        for mode, sgn, z0 in starts:
            def tau_of(z):
                if mode == "sign":
                    return np.array([sgn * z[m]])
                if mode == "polar":
                    return z[m] * np.array([np.cos(z[m + 1]), np.sin(z[m + 1])])
                return z[m:]

            def resid(z):
                nu = self.nu_of(z[:m])
                tau = tau_of(z)
                r = self.point(nu, tau) - p
                out = np.concatenate([r, 2.0 * np.maximum(0.0, nu - self.box1.hi),
                                      2.0 * np.maximum(0.0, self.box1.lo - nu)])
                if mode == "box":
                    out = np.concatenate([out, [10.0 * max(0.0, self.rho_lo - np.linalg.norm(tau))]])
                return out

            # linearized start for the tangent coordinates
            tau0 = tau_of(z0)
            G = self.S.grad(self.nu1)
            A = mixed_hessian(self.S, self.nu1, tau0) @ self.V.T
            if m:
                s0, *_ = np.linalg.lstsq(A, -(x + tau0 @ G), rcond=None)
                z0 = z0.copy()
                z0[:m] = np.clip(s0, -self.s_max, self.s_max)
            lo = np.concatenate([-self.s_max * np.ones(m), self._tau_lo(mode)])
            hi = np.concatenate([self.s_max * np.ones(m), self._tau_hi(mode)])
            z0 = np.clip(z0, lo + 1e-12, hi - 1e-12)
            sol = least_squares(resid, z0, bounds=(lo, hi), xtol=1e-12, ftol=1e-12, gtol=1e-12)
            nu = self.nu_of(sol.x[:m])
            if self.box1.contains(nu, 1e-9):
                best = min(best, float(np.linalg.norm(self.point(nu, tau_of(sol.x)) - p)))
        return best

    def _tau_lo(self, mode):
        k = self.S.k
        if mode == "sign":
            return np.array([self.rho_lo])
        if mode == "polar":
            return np.array([self.rho_lo, -np.inf])
        return -np.ones(k)

    def _tau_hi(self, mode):
        k = self.S.k
        if mode == "sign":
            return np.array([1.0])
        if mode == "polar":
            return np.array([1.0, np.inf])
        return np.ones(k)


def _pointwise_conditions(S, nu1, nu2, n_t=16) -> dict:
    ts = sphere_samples(S.k, n_t)
    out = {}
    c12 = min(abs(float(c12_value(S, nu, t))) for nu in (nu1, nu2) for t in ts)
    out["C12"] = c12
    if c12 > 1e-12:
        out["C13"] = min(abs(float(c13_value(S, nu1, nu2, t, nu))) for nu in (nu1, nu2) for t in ts)
    out["C15"] = min(abs(float(c15_value(S, nu1, nu2, t, nu))) for nu in (nu1, nu2) for t in ts)
    return out


def gamma_transversality_witness(S: Surface, nu1, nu2p, nu2, R: float, delta: float = 0.0,
                                 box1: Optional[Box] = None, n_base: int = 24, n_shifts: int = 4,
                                 n_points: int = 120, C_const: float = 16.0, exp_const: float = 1.0,
                                 thickening: float = 1.0, t_floor: float = 0.5,
                                 rng: Optional[np.random.Generator] = None) -> GammaWitness:
    """Sampled check that Gamma~_1^{nu1,nu2'}(R, R^delta) meets shifted plates
    R^delta pi_{nu2} + u in a set of diameter <= C R^(1/2 + C' delta).

    Work is done at unit scale, (x, t) -> (x, t)/R, where the neighbourhood
    width becomes eps = thickening * R^(-1/2+delta) and |t| ranges over
    [t_floor R^-delta, 1]; reported lengths are scaled back by R.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    nu1, nu2p, nu2 = (np.asarray(a, float) for a in (nu1, nu2p, nu2))
    d, k = S.d, S.k
    box1 = Box.cube(nu1, 0.2) if box1 is None else box1
    for a, b in ((nu1, nu2p), (nu1, nu2)):
        if np.linalg.svd(d_matrix(S, a, b), compute_uv=False)[-1] < RANK_TOL:
            raise PreconditionFailed("gradient differences must have rank k")
    conds = _pointwise_conditions(S, nu1, nu2)
    notes = []
    if conds.get("C13", 0.0) < 1e-6 and conds["C15"] < 1e-6:
        notes.append("neither the C12+C13 nor the C15 hypothesis holds at nu1, nu2")

    # transversality determinant over base points on Pi and t0 with |t0| in [1/2, 1]
    bases = [nu1]
    V = pi_tangent_basis(S, nu1, nu2p, nu1)
    half = 0.5 * box1.sides
    for _ in range(n_base):
        s = rng.uniform(-1, 1, V.shape[0]) * float(np.min(half))
        try:
            seed = np.clip(nu1 + s @ V, box1.lo, box1.hi)
            bases.append(solve_pi_surface(S, nu1, nu2p, seed, box1).nu)
        except (NoConvergence, LeftBox, RankDeficientD, PreconditionFailed):
            continue
    ts = sphere_samples(k, 12)
    best, arg = np.inf, {}
    for nu0 in bases:
        if not box1.contains(nu0, 1e-9):
            continue
        for t in ts:
            for scale in (0.5, 1.0):
                v = abs(transversality_det(S, nu1, nu2p, nu0, scale * t, nu2))
                if v < best:
                    best, arg = v, {"nu0": nu0, "t0": scale * t}
    det_ok = best > DET_GATE

    # shifted-plate sampling at unit scale
    eps = thickening * R ** (-0.5 + delta)
    rho_lo = t_floor * R ** (-delta)
    chart = _GammaChart(S, nu1, nu2p, box1, rho_lo)
    G2 = S.grad(nu2)
    diam = 0.0
    total = 0
    for _ in range(n_shifts):
        nu_a = bases[int(rng.integers(len(bases)))]
        w = rng.standard_normal(k)
        t_a = w / np.linalg.norm(w) * rng.uniform(max(rho_lo, 0.5), 1.0)
        p0 = chart.point(nu_a, t_a)
        u = p0 - np.concatenate([-t_a @ G2, t_a]) + eps * 0.5 * _ball(rng, 1, d + k)[0]
        near = t_a + _ball(rng, n_points // 2, k) * (
            np.exp(rng.uniform(np.log(eps / 10), np.log(2.0), (n_points // 2, 1))))
        far = _ball(rng, n_points - n_points // 2, k) * 2.0
        s = np.concatenate([near, far])
        pts = np.concatenate([-s @ G2, s], axis=1) + u + eps * _ball(rng, len(s), d + k)
        members = [p for p in pts if chart.distance(p) <= eps]
        total += len(members)
        if len(members) > 1:
            diam = max(diam, float(pdist(np.array(members)).max()))
    diameter = diam * R
    bound = C_const * R ** (0.5 + exp_const * delta)
    diam_ok = diameter <= bound
    return GammaWitness(
        diameter=diameter, bound=float(bound), passed=bool(diam_ok and det_ok),
        min_abs_det=float(best), det_argmin=arg,
        constants={"C": C_const, "C_exponent": exp_const, "thickening": thickening,
                   "t_range": [t_floor * R ** (1 - delta), R], "det_gate": DET_GATE},
        conditions=conds, n_points=total, diameter_passed=bool(diam_ok), det_passed=bool(det_ok),
        notes=notes)
