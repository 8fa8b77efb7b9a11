"""Curvature and transversality matrices, and sampled certification of the
nondegeneracy conditions on a pair of parameter boxes S1, S2.

Conditions are labelled as follows::

    C12  det(sum_j t_j Hphi_j(nu)) != 0                      (nu in S1 u S2)
    C13  det(D H^{-1} D^T) != 0                               (nu in {nu1, nu2})
    C14  det M != 0,  M = [[0, D], [D^T, H]]
    C15  det(N H N^T) != 0,  N an orthonormal basis of (row D)^perp

with D = D(nu1, nu2) the k x d matrix of gradient differences.  All checks
are deterministic grid minima, not certificates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import EmptyBox, RankDeficientD, SingularHessian
from .surfaces import Box, Surface

DEFAULT_THRESHOLD = 1e-6
RANK_TOL = 1e-10
ZERO_TOL = 1e-10


# -- matrices ---------------------------------------------------------------

def mixed_hessian(S: Surface, nu, t) -> np.ndarray:
    """sum_j t_j Hphi_j(nu); broadcasts over leading axes of nu and t."""
    H = S.hessians(np.asarray(nu, dtype=float))
    t = np.asarray(t, dtype=float)
    return np.einsum("...j,...jab->...ab", t, H)


def d_matrix(S: Surface, nu1, nu2) -> np.ndarray:
    """Rows grad phi_j(nu2) - grad phi_j(nu1)."""
    return S.grad(np.asarray(nu2, float)) - S.grad(np.asarray(nu1, float))


def m_matrix(S: Surface, t, nu1, nu2, nu) -> np.ndarray:
    D = d_matrix(S, nu1, nu2)
    H = mixed_hessian(S, nu, t)
    batch = np.broadcast_shapes(D.shape[:-2], H.shape[:-2])
    D = np.broadcast_to(D, batch + D.shape[-2:])
    H = np.broadcast_to(H, batch + H.shape[-2:])
    k = D.shape[-2]
    Z = np.zeros(D.shape[:-2] + (k, k))
    top = np.concatenate([Z, D], axis=-1)
    bottom = np.concatenate([np.swapaxes(D, -1, -2), H], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def n_matrix(D) -> np.ndarray:
    """Orthonormal rows spanning the complement of the rows of D.

    Uses a complete Householder QR of D^T, so the basis is a deterministic
    function of D.  Works on stacks of matrices.
    """
    D = np.asarray(D, dtype=float)
    k, d = D.shape[-2:]
    Q, _ = np.linalg.qr(np.swapaxes(D, -1, -2), mode="complete")
    return np.swapaxes(Q[..., :, k:], -1, -2)


def n_matrix_svd(D) -> np.ndarray:
    """Second, independent orthonormalization (right singular vectors)."""
    D = np.asarray(D, dtype=float)
    k = D.shape[-2]
    _, _, Vh = np.linalg.svd(D, full_matrices=True)
    return Vh[..., k:, :]


def det0(A) -> np.ndarray:
    """Determinant with the 0x0 convention det = 1."""
    A = np.asarray(A)
    if A.shape[-1] == 0:
        return np.ones(A.shape[:-2])
    return np.linalg.det(A)


def normalized_det(A, scale=None) -> np.ndarray:
    """|det A| / scale^n with scale = ||A||_2 by default; lies in [0, 1].

    A row-norm (Hadamard) normalization is not used because it maps a
    uniformly tiny matrix to ratio ~1.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[-1]
    if n == 0:
        return np.ones(A.shape[:-2])
    if scale is None:
        scale = np.linalg.norm(A, ord=2, axis=(-2, -1))
    scale = np.asarray(scale, dtype=float)
    det = np.abs(np.linalg.det(A))
    safe = np.where(scale > 0, scale, 1.0)
    return np.where(scale > 0, det / safe ** n, 0.0)


# -- pointwise values -------------------------------------------------------

def c12_value(S, nu, t):
    return np.linalg.det(mixed_hessian(S, nu, t))


def c13_value(S, nu1, nu2, t, nu, nu1p=None, nu2p=None):
    """det[D(nu1,nu2) H^{-1} D(nu1',nu2')^T]; the primes default to nu1, nu2."""
    D = d_matrix(S, nu1, nu2)
    Dp = D if nu1p is None else d_matrix(S, nu1p, nu2p)
    H = mixed_hessian(S, nu, t)
    X = np.linalg.solve(H, np.swapaxes(Dp, -1, -2))
    return det0(D @ X)


def c14_value(S, nu1, nu2, t, nu):
    return np.linalg.det(m_matrix(S, t, nu1, nu2, nu))


def c15_value(S, nu1, nu2, t, nu, basis: str = "qr"):
    D = d_matrix(S, nu1, nu2)
    N = n_matrix(D) if basis == "qr" else n_matrix_svd(D)
    H = mixed_hessian(S, nu, t)
    return det0(N @ H @ np.swapaxes(N, -1, -2))


def block_identity_gap(S, nu1, nu2, t, nu) -> float:
    """Relative gap in det M = (-1)^k det(H) det(D H^{-1} D^T)."""
    lhs = c14_value(S, nu1, nu2, t, nu)
    rhs = (-1) ** S.k * c12_value(S, nu, t) * c13_value(S, nu1, nu2, t, nu)
    return float(abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))


def complex_condition(D, z1, z2) -> float:
    """|(z2 - z1)^T D (z2 - z1)| in complex arithmetic."""
    delta = np.asarray(z2, dtype=complex) - np.asarray(z1, dtype=complex)
    D = np.asarray(D, dtype=float)
    return float(abs(delta @ D @ delta))


def complex_condition_real(D, dx, dy) -> float:
    """Same quantity written with the real and imaginary separations."""
    D = np.asarray(D, dtype=float)
    a = dx @ D @ dx - dy @ D @ dy
    b = dx @ D @ dy
    return float(np.sqrt(a * a + 4 * b * b))


# -- sampling ---------------------------------------------------------------

def sphere_samples(k: int, n: int = 16) -> np.ndarray:
    """Deterministic directions on S^{k-1}: +-1 for k=1, equiangular for k=2,
    a Fibonacci lattice for k=3, seeded Gaussian directions beyond."""
    if k == 1:
        return np.array([[1.0], [-1.0]])
    if k == 2:
        a = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(a), np.sin(a)], axis=-1)
    if k == 3:
        i = np.arange(n) + 0.5
        z = 1 - 2 * i / n
        r = np.sqrt(1 - z * z)
        phi = np.pi * (1 + 5 ** 0.5) * i
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    g = np.random.default_rng(k).standard_normal((n, k))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass
class ConditionReport:
    condition: str
    min_abs_det: float
    argmin: dict
    sample_counts: dict
    threshold: float
    passed: bool
    extra: dict = field(default_factory=dict)

    @property
    def pass_(self) -> bool:
        return self.passed

    def to_json(self) -> dict:
        return {
            "condition": self.condition,
            "min_abs_det": self.min_abs_det,
            "argmin": {key: np.asarray(v).tolist() for key, v in self.argmin.items()},
            "sample_counts": self.sample_counts,
            "threshold": self.threshold,
            "pass": self.passed,
            **({"extra": self.extra} if self.extra else {}),
        }


def _box_points(box: Box, grid: int, d: int) -> np.ndarray:
    if box.is_empty():
        raise EmptyBox(f"empty box {box}")
    if box.dim != d:
        raise EmptyBox(f"box dimension {box.dim} does not match d={d}")
    if grid < 2:
        raise ValueError("grid resolution must be >= 2 per axis")
    return box.lattice(grid)


def _report(name, values, tuples, counts, c, extra=None) -> ConditionReport:
    values = np.abs(np.asarray(values))
    i = int(np.argmin(values))
    m = float(values[i])
    return ConditionReport(name, m, tuples(i), counts, c, bool(m >= c), extra or {})


def check_c12(S: Surface, S1: Box, S2: Box, grid: int = 5, c: float = DEFAULT_THRESHOLD,
              n_t: int = 16) -> ConditionReport:
    nus = np.concatenate([_box_points(S1, grid, S.d), _box_points(S2, grid, S.d)])
    ts = sphere_samples(S.k, n_t)
    vals = c12_value(S, nus[:, None, :], ts[None, :, :])
    flat = np.abs(vals).ravel()
    nt = len(ts)

    def tuples(i):
        return {"nu": nus[i // nt], "t": ts[i % nt]}

    return _report("C12", flat, tuples, {"nu": len(nus), "t": nt, "grid": grid}, c)


def _pair_scan(S, S1, S2, grid, n_t, fn):
    """Evaluate fn(nu1 (N2,d), nu2s (N2,d), ts (T,k), which) over all pairs,
    chunked over nu1; returns flat values and a tuple decoder."""
    P1 = _box_points(S1, grid, S.d)
    P2 = _box_points(S2, grid, S.d)
    ts = sphere_samples(S.k, n_t)
    T = len(ts)
    chunks = []
    for nu1 in P1:
        a = np.broadcast_to(nu1, P2.shape)
        chunks.append(fn(a[:, None, :], P2[:, None, :], ts[None, :, :]))
    vals = np.stack(chunks)  # (N1, N2, T, 2)
    shape = vals.shape

    def tuples(i):
        i1, i2, it, w = np.unravel_index(i, shape)
        nu = P1[i1] if w == 0 else P2[i2]
        return {"nu1": P1[i1], "nu2": P2[i2], "t": ts[it], "nu": nu}

    counts = {"nu1": len(P1), "nu2": len(P2), "t": T, "grid": grid}
    return vals.ravel(), tuples, counts


def check_c13(S: Surface, S1: Box, S2: Box, grid: int = 5, c: float = DEFAULT_THRESHOLD,
              n_t: int = 16, four_point: bool = False, max_samples: int = 20000,
              seed: int = 0) -> ConditionReport:
    if four_point:
        return _check_c13_four_point(S, S1, S2, grid, c, n_t, max_samples, seed)

    def fn(a, b, ts):
        D = d_matrix(S, a, b)
        out = []
        for nu in (a, b):
            H = mixed_hessian(S, nu, ts)
            dH = np.linalg.det(H)
            bad = np.abs(dH) < 1e-14
            if np.any(bad):
                j = np.argwhere(bad)[0]
                raise SingularHessian("mixed Hessian not invertible",
                                      sample={"nu": nu[j[0], 0].tolist(), "t": ts[0, j[1]].tolist()})
            Dt = np.broadcast_to(D, H.shape[:-2] + D.shape[-2:])
            X = np.linalg.solve(H, np.swapaxes(Dt, -1, -2))
            out.append(det0(Dt @ X))
        return np.stack(out, axis=-1)

    vals, tuples, counts = _pair_scan(S, S1, S2, grid, n_t, fn)
    return _report("C13", vals, tuples, counts, c)


def _check_c13_four_point(S, S1, S2, grid, c, n_t, max_samples, seed):
    P1 = _box_points(S1, grid, S.d)
    P2 = _box_points(S2, grid, S.d)
    nus = np.concatenate([P1, P2])
    ts = sphere_samples(S.k, n_t)
    rng = np.random.default_rng(seed)
    m = max_samples
    i1, i1p = rng.integers(len(P1), size=(2, m))
    i2, i2p = rng.integers(len(P2), size=(2, m))
    it = rng.integers(len(ts), size=m)
    iv = rng.integers(len(nus), size=m)
    vals = c13_value(S, P1[i1], P2[i2], ts[it], nus[iv], P1[i1p], P2[i2p])

    def tuples(i):
        return {"nu1": P1[i1[i]], "nu1p": P1[i1p[i]], "nu2": P2[i2[i]],
                "nu2p": P2[i2p[i]], "t": ts[it[i]], "nu": nus[iv[i]]}

    return _report("C13-four-point", vals, tuples, {"samples": m, "grid": grid}, c)


def check_c14(S: Surface, S1: Box, S2: Box, grid: int = 5, c: float = DEFAULT_THRESHOLD,
              n_t: int = 16) -> ConditionReport:
    def fn(a, b, ts):
        return np.stack([c14_value(S, a, b, ts, nu) for nu in (a, b)], axis=-1)

    vals, tuples, counts = _pair_scan(S, S1, S2, grid, n_t, fn)
    return _report("C14", vals, tuples, counts, c)


def check_c15(S: Surface, S1: Box, S2: Box, grid: int = 5, c: float = DEFAULT_THRESHOLD,
              n_t: int = 16, basis_tol: float = 1e-9) -> ConditionReport:
    worst = [0.0]

    def fn(a, b, ts):
        D = d_matrix(S, a, b)
        sv = np.linalg.svd(D, compute_uv=False)
        smin = sv[..., -1] if sv.shape[-1] else np.ones(sv.shape[:-1])
        if np.any(smin < RANK_TOL):
            j = int(np.argmin(smin[:, 0]))
            raise RankDeficientD("gradient differences are linearly dependent",
                                 sample={"nu1": a[j, 0].tolist(), "nu2": b[j, 0].tolist()})
        N1, N2 = n_matrix(D), n_matrix_svd(D)
        out = []
        for nu in (a, b):
            H = mixed_hessian(S, nu, ts)
            v1 = det0(N1 @ H @ np.swapaxes(N1, -1, -2))
            v2 = det0(N2 @ H @ np.swapaxes(N2, -1, -2))
            gap = np.max(np.abs(v1 - v2) / np.maximum(1.0, np.abs(v1)))
            worst[0] = max(worst[0], float(gap))
            out.append(v1)
        return np.stack(out, axis=-1)

    vals, tuples, counts = _pair_scan(S, S1, S2, grid, n_t, fn)
    rep = _report("C15", vals, tuples, counts, c, {"basis_discrepancy": worst[0]})
    if worst[0] > basis_tol:
        rep.passed = False
    return rep


def equivalence_c14_c15(S: Surface, samples: Iterable, zero_tol: float = ZERO_TOL) -> dict:
    """Compare zero/nonzero classification of det M and det(N H N^T).

    ``samples`` yields tuples (nu1, nu2, t, nu).  Determinants are normalized
    to [0, 1] before thresholding: det M by ||M||^(d+k) and det(N H N^T)
    by ||H||^(d-k), the natural scale since N has orthonormal rows.  Samples where D loses
    rank are skipped (the equivalence presupposes rank k).
    """
    discrepancies, n, skipped = [], 0, 0
    for nu1, nu2, t, nu in samples:
        D = d_matrix(S, nu1, nu2)
        if S.k and np.linalg.svd(D, compute_uv=False)[-1] < RANK_TOL:
            skipped += 1
            continue
        n += 1
        M = m_matrix(S, t, nu1, nu2, nu)
        N = n_matrix(D)
        H = mixed_hessian(S, nu, t)
        rm = float(normalized_det(M))
        rn = float(normalized_det(N @ H @ N.T, np.linalg.norm(H, ord=2)))
        if (rm > zero_tol) != (rn > zero_tol):
            discrepancies.append({"nu1": np.asarray(nu1).tolist(), "nu2": np.asarray(nu2).tolist(),
                                  "t": np.asarray(t).tolist(), "nu": np.asarray(nu).tolist(),
                                  "ratio_M": rm, "ratio_N": rn})
    return {"samples": n, "skipped_rank_deficient": skipped,
            "discrepancies": discrepancies, "pass": not discrepancies}


def injectivity_margin(S: Surface, S1: Box, t, grid: int = 6) -> float:
    """min |G(nu) - G(nu')| / |nu - nu'| over lattice pairs, G = sum_j t_j grad phi_j."""
    t = np.asarray(t, dtype=float)
    P = _box_points(S1, grid, S.d)
    G = np.einsum("j,njd->nd", t, S.grad(P))
    iu, ju = np.triu_indices(len(P), k=1)
    num = np.linalg.norm(G[iu] - G[ju], axis=-1)
    den = np.linalg.norm(P[iu] - P[ju], axis=-1)
    return float(np.min(num / den))


def all_conditions(S, S1, S2, grid=5, c=DEFAULT_THRESHOLD, n_t=16) -> list[ConditionReport]:
    """C12..C15 on the same boxes; C13 is skipped when C12 fails."""
    out = [check_c12(S, S1, S2, grid, c, n_t)]
    if out[0].passed:
        out.append(check_c13(S, S1, S2, grid, c, n_t))
    out.append(check_c14(S, S1, S2, grid, c, n_t))
    try:
        out.append(check_c15(S, S1, S2, grid, c, n_t))
    except RankDeficientD as exc:
        out.append(ConditionReport("C15", 0.0, exc.sample or {}, {"grid": grid}, c, False,
                                   {"error": "RankDeficientD"}))
    return out
