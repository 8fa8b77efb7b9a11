"""Wave-packet decomposition Ef = sum_{l,nu} Ef_{l,nu} with
f_{l,nu} = F(psi_l F^{-1}(zeta_nu f)), coefficients
c_{l,nu} = R^{d/4} M(F^{-1}(zeta_nu f))(l) and normalized profiles
P_{l,nu} = Ef_{l,nu} / c_{l,nu}.

Everything is discrete and exact on the torus: with xi-spacing h the sums are
1/h periodic in x, the spatial lattice l in R^(1/2) Z^d must tile one period
(K = 1/(h R^(1/2)) an integer), and the kernels form exact partitions of
unity on their lattices.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.ndimage import uniform_filter

from .errors import BadShape, GridTooCoarse, InsufficientStrata, MixedDecompositions, PreconditionFailed
from .extension import GridFunction, extend
from .parallel import pmap
from .surfaces import Box, Surface

PRUNE_REL = 1e-12


# -- kernels ----------------------------------------------------------------

def _smooth_step(u):
    """C^infinity step: 0 for u <= 0, 1 for u >= 1, T(u) + T(1-u) = 1."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1 - u, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class PartitionKernels:
    """Frequency cut-off zeta and spatial kernel psi, both tensor products.

    zeta: chi(u) = 1 on |u| <= 1 - r, 0 on |u| >= r, smooth in between, so
    sum_m chi(u - m) = 1; r = min(0.7, 1/sqrt(d)) keeps supp zeta in B(0,1).
    For r = 1/2 (d >= 4) chi is the half-open indicator of [-1/2, 1/2).

    psi: psi1 = |g^|^2 / int g^2 with g a smooth plateau bump on
    [-1/2, 1/2].  Then psi1 >= 0, psi1^ = g * g / int g^2 is supported in
    [-1, 1] and vanishes at +-1, so sum_m psi1(u - m) = psi1^(0) = 1 exactly.
    """

    d: int
    r_zeta: float = None
    plateau: float = 0.3
    quad_nodes: int = 600

    def __post_init__(self):
        if self.r_zeta is None:
            object.__setattr__(self, "r_zeta", min(0.7, 1.0 / np.sqrt(self.d)))
        if not 0.5 <= self.r_zeta <= 1.0 / np.sqrt(self.d) + 1e-12:
            raise ValueError("zeta radius must lie in [1/2, 1/sqrt(d)]")

    # zeta
    def chi(self, u):
        u = np.asarray(u, dtype=float)
        r = self.r_zeta
        if r - 0.5 < 1e-12:
            return ((u >= -0.5) & (u < 0.5)).astype(float)
        return _smooth_step((r - np.abs(u)) / (2 * r - 1))

    def zeta(self, u):
        return np.prod(self.chi(u), axis=-1)

    # psi
    def g(self, eta):
        """Plateau bump: 1 on |eta| <= plateau / 2, smoothly 0 at |eta| = 1/2."""
        a = np.abs(np.asarray(eta, dtype=float))
        p = 0.5 * self.plateau
        return _smooth_step((0.5 - a) / (0.5 - p))

    @cached_property
    def _quad(self):
        x, w = leggauss(self.quad_nodes)
        eta = 0.25 * (x + 1)  # [0, 1/2]
        w = 0.25 * w
        gv = self.g(eta)
        norm = 2 * np.sum(w * gv * gv)
        return eta, w * gv, norm

    def psi1(self, u):
        eta, wg, norm = self._quad
        u = np.asarray(u, dtype=float)
        gc = 2 * np.cos(2 * np.pi * u[..., None] * eta) @ wg
        return gc * gc / norm

    def psi(self, u):
        return np.prod(self.psi1(u), axis=-1)

    @property
    def psi_hat_radius(self) -> float:
        """Per-axis support radius of psi^ (in units of the lattice dual)."""
        return 1.0

    @property
    def tail_mass(self) -> float:
        """Energy of psi^ outside its nominal support; zero by construction."""
        return 0.0

    def partition_error(self, m: int = 40, samples: int = 101) -> dict:
        u = np.linspace(-0.5, 0.5, samples)
        shifts = np.arange(-m, m + 1)
        z = np.sum(self.chi(u[:, None] - shifts[None, :]), axis=1)
        p = np.sum(self.psi1(u[:, None] - shifts[None, :]), axis=1)
        return {"zeta": float(np.max(np.abs(z - 1))), "psi": float(np.max(np.abs(p - 1))),
                "psi_min": float(self.psi1(np.linspace(-m, m, 401)).min())}


# -- decomposition ------------------------------------------------------------

@dataclass(frozen=True)
class WavePacket:
    ell: np.ndarray
    nu: np.ndarray
    c: float
    index: tuple
    owner: int = 0
    R: Optional[float] = None

    def to_json(self) -> dict:
        return {"l": np.asarray(self.ell).tolist(), "nu": np.asarray(self.nu).tolist(),
                "c": [float(np.real(self.c)), float(np.imag(self.c))]}


class Decomposition:
    """Wave packets of f at scale R.

    Attributes: ``nus`` (N_nu, d), ``ells`` (K^d, d) in [-P/2, P/2)^d,
    ``coeffs`` (N_nu, K^d), ``keep`` mask after pruning, ``pruned_l1``
    an upper bound for sup |E(pruned part)|.
    """

    _counter = 0

    def __init__(self, S: Surface, f: GridFunction, R: float, kernels: Optional[PartitionKernels] = None,
                 prune: float = PRUNE_REL):
        if R < 16:
            raise PreconditionFailed("wave packets need R >= 16")
        d = f.d
        if S.d != d:
            raise BadShape("surface and data dimensions differ")
        side = float(np.max(f.box.sides))
        if not np.allclose(f.box.sides, side):
            raise BadShape("wave packets need a cubic parameter box")
        L = R ** 0.5
        if f.n < 8 * side * L - 1e-9:
            raise GridTooCoarse(f"need n >= 8 * side * R^(1/2) = {8 * side * L:.1f}, got {f.n}")
        h = side / f.n
        K = 1.0 / (h * L)
        if abs(K - round(K)) > 1e-9:
            raise GridTooCoarse("x-period 1/h must be an integer multiple of R^(1/2)")
        K = int(round(K))
        self.kernels = kernels or PartitionKernels(d)
        Decomposition._counter += 1
        self.id = Decomposition._counter
        self.S, self.f, self.R, self.L, self.K, self.h, self.d = S, f, float(R), L, K, h, d
        # extended xi grid: margin >= 1/L per side, total size a multiple of K
        margin = int(np.ceil(self.kernels.psi_hat_radius / L / h - 1e-9))
        n_ext = f.n + 2 * margin
        n_ext = int(np.ceil(n_ext / K) * K)
        lo_pad = (n_ext - f.n) // 2
        self.n_ext, self.offset = n_ext, lo_pad
        self.box_ext = Box(f.box.lo - lo_pad * h, f.box.lo + (n_ext - lo_pad) * h)
        self.period = 1.0 / h
        self.dx = self.period / n_ext
        self.step = n_ext // K  # x samples per lattice cell
        # frequency lattice
        r = self.kernels.r_zeta / L
        lo = np.ceil((f.box.lo - r) * L - 1e-12).astype(int)
        hi = np.floor((f.box.hi + r) * L + 1e-12).astype(int)
        ranges = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        mesh = np.stack(np.meshgrid(*ranges, indexing="ij"), -1).reshape(-1, d)
        nus, pieces = [], []
        for m in mesh:
            nu = m / L
            sl, vals = self._zeta_piece(nu)
            if vals is not None and np.any(vals != 0):
                nus.append(nu)
                pieces.append((sl, vals))
        self.nus = np.array(nus).reshape(-1, d)
        self._pieces = pieces
        # spatial lattice and psi tables (per axis, periodized)
        idx = np.arange(K)
        ell1 = idx * L
        ell1 = np.where(ell1 >= self.period / 2, ell1 - self.period, ell1)
        self._ell1 = ell1
        grids = np.meshgrid(*([ell1] * d), indexing="ij")
        self.ells = np.stack(grids, -1).reshape(-1, d)
        xj = np.arange(n_ext) * self.dx
        u = (xj[None, :] - (idx * L)[:, None]) / L
        u = (u + K / 2) % K - K / 2
        table = sum(self.kernels.psi1(u + m * K) for m in range(-4, 5))
        self.partition_defect = float(np.max(np.abs(table.sum(0) - 1)))
        self._psi = table / table.sum(0, keepdims=True)  # (K, n_ext)
        self._compute_coefficients(prune)

    # pieces
    def _zeta_piece(self, nu):
        f, L = self.f, self.L
        ax = f.axes()
        ws = [self.kernels.chi((ax[i] - nu[i]) * L) for i in range(self.d)]
        idx = [np.nonzero(w)[0] for w in ws]
        if any(len(i) == 0 for i in idx):
            return None, None
        sl = tuple(slice(i[0], i[-1] + 1) for i in idx)
        w = ws[0][sl[0]]
        for i in range(1, self.d):
            w = np.multiply.outer(w, ws[i][sl[i]])
        return sl, f.values[sl] * w

    def _b(self, i) -> np.ndarray:
        """zeta_nu f on the extended grid."""
        sl, vals = self._pieces[i]
        b = np.zeros((self.n_ext,) * self.d, dtype=complex)
        sl_ext = tuple(slice(s.start + self.offset, s.stop + self.offset) for s in sl)
        b[sl_ext] = vals
        return b

    def a(self, i) -> np.ndarray:
        """F^{-1}(zeta_nu f) on the x torus, up to the unimodular phase e^{2 pi i x xi_0}."""
        return np.fft.ifftn(self._b(i)) * (self.n_ext * self.h) ** self.d

    def _psi_field(self, weights: np.ndarray) -> np.ndarray:
        """sum_l w_l psi_l on the x torus for w of shape (K,)*d."""
        out = weights
        for axis in range(self.d):
            out = np.tensordot(out, self._psi, axes=([0], [0]))
        return out

    def _maximal(self, absA: np.ndarray) -> np.ndarray:
        """Discrete maximal function at the lattice points: max over closed
        cubes centred at l with sides R^(1/2) 2^m."""
        best = np.zeros((self.K,) * self.d)
        sel = tuple(slice(None, None, self.step) for _ in range(self.d))
        m = 0
        while True:
            w = self.step * 2 ** m
            if w + 1 >= self.n_ext:
                avg = np.full(best.shape, absA.mean())
            else:
                avg = uniform_filter(absA, size=w + 1, mode="wrap")[sel]
            best = np.maximum(best, avg)
            if w + 1 >= self.n_ext:
                break
            m += 1
        return best

    def _compute_coefficients(self, prune):
        d, K = self.d, self.K
        scale = self.R ** (d / 4)

        def one(i):
            A = self.a(i)
            absA = np.abs(A)
            c = scale * self._maximal(absA)
            # ||psi_l a||_2 for every l, separable contraction of |a|^2
            sq = absA ** 2
            for _ in range(d):
                sq = np.tensordot(sq, self._psi ** 2, axes=([0], [1]))
            # tensordot cycles axes: after d contractions the order is restored
            norms = np.sqrt(np.maximum(sq, 0) * self.dx ** d)
            return c.reshape(-1), norms.reshape(-1)

        res = pmap(one, range(len(self.nus)))
        self.coeffs = np.array([r[0] for r in res]).reshape(len(self.nus), K ** d)
        self.piece_l2 = np.array([r[1] for r in res]).reshape(len(self.nus), K ** d)
        cmax = float(self.coeffs.max()) if self.coeffs.size else 0.0
        self.keep = self.coeffs > prune * cmax if cmax > 0 else np.zeros_like(self.coeffs, bool)
        supp = (2 * (self.kernels.r_zeta + self.kernels.psi_hat_radius) / self.L) ** (d / 2)
        self.pruned_l1 = float(np.sum(self.piece_l2[~self.keep]) * supp)

    # access
    @property
    def n_packets(self) -> int:
        return int(self.keep.sum())

    def packets(self) -> list:
        out = []
        for i, j in zip(*np.nonzero(self.keep)):
            out.append(WavePacket(self.ells[j], self.nus[i], float(self.coeffs[i, j]), (int(i), int(j)), self.id, self.R))
        return out

    def coefficient_l2(self) -> float:
        return float(np.sqrt(np.sum(self.coeffs[self.keep] ** 2)))

    def piece(self, i: int, j) -> GridFunction:
        """f_{l,nu} for nu index i and l index (or boolean/weight vector over l) j."""
        w = np.zeros(self.K ** self.d)
        if np.ndim(j) == 0:
            w[j] = 1.0
        else:
            w = np.asarray(j, dtype=float)
        field = self._psi_field(w.reshape((self.K,) * self.d)) * self.a(i)
        vals = np.fft.fftn(field) * self.dx ** self.d
        return GridFunction(self.box_ext, vals)

    def nu_sum(self, i: int) -> GridFunction:
        return self.piece(i, self.keep[i].astype(float))

    def total(self) -> GridFunction:
        acc = np.zeros((self.n_ext,) * self.d, dtype=complex)
        for i in range(len(self.nus)):
            acc += self.nu_sum(i).values
        return GridFunction(self.box_ext, acc)

    def padded_f(self) -> GridFunction:
        vals = np.zeros((self.n_ext,) * self.d, dtype=complex)
        sl = tuple(slice(self.offset, self.offset + self.f.n) for _ in range(self.d))
        vals[sl] = self.f.values
        return GridFunction(self.box_ext, vals)

    def profile(self, packet: WavePacket, pts) -> np.ndarray:
        self._own(packet)
        i, j = packet.index
        return extend(self.S, self.piece(i, j), pts) / packet.c

    def fourier_tail(self, packet: WavePacket, radius: float = 4.0, t=None) -> float:
        """Energy fraction of F(P(., t)) outside D(nu, radius R^(-1/2))."""
        i, j = packet.index
        g = self.piece(i, j)
        xi = g.flat_nodes()
        v = np.abs(g.values.reshape(-1)) ** 2
        out = np.linalg.norm(xi - packet.nu, axis=1) > radius / self.L
        tot = v.sum()
        return float(v[out].sum() / tot) if tot > 0 else 0.0

    def _own(self, packet):
        if packet.owner != self.id:
            raise MixedDecompositions("packet belongs to another decomposition")

    def dump_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for p in self.packets():
                fh.write(json.dumps(p.to_json()) + "\n")


def decompose(S: Surface, f: GridFunction, R: float, kernels: Optional[PartitionKernels] = None,
              prune: float = PRUNE_REL) -> Decomposition:
    return Decomposition(S, f, R, kernels, prune)


def reconstruct(packets: Sequence[WavePacket], pts, decomp: Decomposition, by_packet: bool = False) -> np.ndarray:
    """sum c P over ``packets`` at ``pts``.

    Packets are grouped by nu and their pieces summed in frequency before a
    single extension; ``by_packet`` evaluates each c P separately instead.
    """
    packets = list(packets)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if not packets:
        return np.zeros(len(pts), dtype=complex)
    for p in packets:
        decomp._own(p)
    if by_packet:
        return sum(p.c * decomp.profile(p, pts) for p in packets)
    w = np.zeros(decomp.coeffs.shape)
    for p in packets:
        w[p.index] = 1.0
    acc = np.zeros((decomp.n_ext,) * decomp.d, dtype=complex)
    for i in np.nonzero(w.any(axis=1))[0]:
        acc += decomp.piece(int(i), w[i]).values
    return extend(decomp.S, GridFunction(decomp.box_ext, acc), pts)


def reconstruction_tolerance(decomp: Decomposition, exact) -> float:
    return 1e-6 * float(np.max(np.abs(exact))) + decomp.pruned_l1


# -- decay ------------------------------------------------------------------------

@dataclass
class DecayReport:
    strata: list  # (r_lo, r_hi, max |P|) with r in units of R^(1/2)
    exponents: list  # (r_mid, N) between successive strata
    min_N_tail: float
    floor: float
    core: float
    passed: bool

    def to_json(self) -> dict:
        return dict(self.__dict__)


def tube_distance(decomp: Decomposition, packet: WavePacket, pts) -> np.ndarray:
    """Periodic |x - l + sum_j t_j grad phi_j(nu)|."""
    pts = np.atleast_2d(pts)
    x, t = pts[:, :decomp.d], pts[:, decomp.d:]
    off = x - packet.ell + t @ decomp.S.grad(packet.nu)
    P = decomp.period
    off = (off + P / 2) % P - P / 2
    return np.linalg.norm(off, axis=1)


def decay_profile(decomp: Decomposition, packet: WavePacket, pts=None, n_pts: int = 600,
                  floor_rel: float = 1e-12, tail_from: float = 4.0, min_N: float = 2.0,
                  rng: Optional[np.random.Generator] = None) -> DecayReport:
    """Empirical decay of |P| away from the tube core, in half-octave strata of
    R^(1/2)-distance; N between strata is -d log max|P| / d log(1 + r)."""
    rng = np.random.default_rng(0) if rng is None else rng
    d, k, R, L = decomp.d, decomp.S.k, decomp.R, decomp.L
    if pts is None:
        t = rng.uniform(-R, R, (n_pts, k))
        rmax = decomp.period / 2
        r = np.concatenate([[0.0], np.exp(rng.uniform(np.log(0.1 * L), np.log(rmax), n_pts - 1))])
        u = rng.standard_normal((n_pts, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        x = packet.ell - t @ decomp.S.grad(packet.nu) + r[:, None] * u
        pts = np.concatenate([x, t], axis=1)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if np.any(np.abs(pts[:, d:]) > R * (1 + 1e-12)):
        raise PreconditionFailed("decay profile is only defined for |t| <= R")
    vals = np.abs(decomp.profile(packet, pts))
    dist = tube_distance(decomp, packet, pts) / L
    core = float(vals[dist <= 1].max()) if np.any(dist <= 1) else float(vals.max())
    floor = floor_rel * core
    edges = np.concatenate([[0.0], 2.0 ** (0.5 * np.arange(0, 40))])
    strata = []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (dist >= a) & (dist < b)
        if np.any(sel):
            strata.append((float(a), float(b), float(vals[sel].max())))
    exps = []
    for (a0, b0, m0), (a1, b1, m1) in zip(strata[:-1], strata[1:]):
        if a0 < tail_from or m1 <= floor or m0 <= floor:
            continue
        r0, r1 = 0.5 * (a0 + b0), 0.5 * (a1 + b1)
        exps.append((0.5 * (r0 + r1), float(-np.log(m1 / m0) / np.log((1 + r1) / (1 + r0)))))
    reached_floor = any(a >= tail_from and m <= floor for a, _, m in strata)
    if not exps and not reached_floor:
        raise InsufficientStrata("fewer than two populated strata beyond the tail threshold")
    min_N = float(min(n for _, n in exps)) if exps else float("inf")
    return DecayReport(strata, exps, min_N, floor, core, bool(min_N >= 2.0))


# -- orthogonality ------------------------------------------------------------------

def orthogonality_check(decomp: Decomposition, W: Iterable[WavePacket], t) -> dict:
    """||sum_W P(., t)||_2^2 over one x period (discrete Parseval on the xi grid)."""
    W = list(W)
    if not W:
        return {"norm_sq": 0.0, "count": 0, "ratio": 0.0}
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(np.abs(t) > decomp.R * (1 + 1e-12)):
        raise PreconditionFailed("orthogonality is checked only for |t| <= R")
    acc = np.zeros((decomp.n_ext,) * decomp.d, dtype=complex)
    for p in W:
        decomp._own(p)
        acc += decomp.piece(*p.index).values / p.c
    g = GridFunction(decomp.box_ext, acc)
    phase = np.exp(2j * np.pi * decomp.S.phi(g.nodes()) @ t)
    norm_sq = float(np.sum(np.abs(acc * phase) ** 2) * g.cell)
    return {"norm_sq": norm_sq, "count": len(W), "ratio": norm_sq / len(W)}
