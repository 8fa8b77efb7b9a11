"""Tube/cube incidences, dyadic pigeonholing classes, the relation
omega ~ B and Whitney pairs of dyadic cubes.

Tubes are pi_omega = {(x, t): |x - l + t grad Phi(nu)| <= R^(1/2)} inside
Q_R = [-R/2, R/2]^(d+k).  A tube meets the dilated cube R^delta q when the
horizontal distance from the cube centre to the core, minus the Lipschitz
constant of that distance times the circumradius of R^delta q, is at most
R^(1/2).  The test never misses a true intersection.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ScaleMismatch
from .surfaces import Surface

TOL = 1e-9


def dyadic_floor(n):
    """Largest power of two <= n (n >= 1)."""
    n = np.asarray(n)
    return np.where(n >= 1, 2 ** np.floor(np.log2(np.maximum(n, 1))).astype(np.int64), 0)


# -- cube grids ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CubeGrid:
    """Axis-parallel cubes of equal side covering Q_R."""

    level: str  # "q" or "B"
    R: float
    dim: int
    per_axis: int
    delta: float = 0.0

    @classmethod
    def q_scale(cls, R: float, dim: int, delta: float = 0.0) -> "CubeGrid":
        return cls("q", float(R), dim, max(1, int(np.ceil(R / np.sqrt(R) - 1e-12))), delta)

    @classmethod
    def b_scale(cls, R: float, dim: int, delta: float) -> "CubeGrid":
        return cls("B", float(R), dim, max(1, int(np.ceil(R / R ** (1 - delta) - 1e-12))), delta)

    @property
    def side(self) -> float:
        return self.R / self.per_axis

    @property
    def nominal(self) -> float:
        return np.sqrt(self.R) if self.level == "q" else self.R ** (1 - self.delta)

    def __len__(self) -> int:
        return self.per_axis ** self.dim

    @property
    def indices(self) -> np.ndarray:
        ax = np.arange(self.per_axis)
        return np.stack(np.meshgrid(*([ax] * self.dim), indexing="ij"), -1).reshape(-1, self.dim)

    @property
    def lo(self) -> np.ndarray:
        return -self.R / 2 + self.indices * self.side

    @property
    def centers(self) -> np.ndarray:
        return self.lo + self.side / 2

    def locate(self, pts) -> np.ndarray:
        """Flat index of the cube containing each point of Q_R."""
        pts = np.atleast_2d(pts)
        idx = np.clip(np.floor((pts + self.R / 2) / self.side).astype(int), 0, self.per_axis - 1)
        return np.ravel_multi_index(tuple(idx.T), (self.per_axis,) * self.dim)

    def to_json(self) -> dict:
        return {"level": self.level, "R": self.R, "dim": self.dim, "per_axis": self.per_axis,
                "side": self.side, "delta": self.delta}


def boxes_meet(lo1, side1, lo2, side2, tol: float = TOL) -> np.ndarray:
    """Closed axis-parallel cubes intersect; broadcasts over leading axes."""
    return np.all((lo1 <= lo2 + side2 + tol) & (lo2 <= lo1 + side1 + tol), axis=-1)


# -- tubes ----------------------------------------------------------------------

@dataclass(frozen=True)
class TubeSpec:
    ell: np.ndarray
    nu: np.ndarray
    R: Optional[float] = None

    @classmethod
    def from_packet(cls, p, R=None) -> "TubeSpec":
        return cls(np.asarray(p.ell, float), np.asarray(p.nu, float), getattr(p, "R", None) if R is None else R)


def _as_tubes(packets) -> list:
    return [p if isinstance(p, TubeSpec) else TubeSpec.from_packet(p) for p in packets]


def horizontal_distance(S: Surface, tube: TubeSpec, pts) -> np.ndarray:
    pts = np.atleast_2d(pts)
    A = S.grad(tube.nu)  # (k, d)
    return np.linalg.norm(pts[:, :S.d] - tube.ell + pts[:, S.d:] @ A, axis=1)


def hit_matrix(S: Surface, tubes: Sequence[TubeSpec], grid: CubeGrid, delta: float) -> np.ndarray:
    """Boolean (#cubes, #tubes): pi_omega meets R^delta q."""
    tubes = _as_tubes(tubes)
    out = np.zeros((len(grid), len(tubes)), dtype=bool)
    if not tubes:
        return out
    R = grid.R
    centers = grid.centers
    circ = 0.5 * np.sqrt(grid.dim) * grid.side * R ** delta
    for j, tb in enumerate(tubes):
        A = S.grad(tb.nu)
        lip = np.sqrt(1 + np.linalg.norm(A, 2) ** 2)
        dist = horizontal_distance(S, tb, centers)
        out[:, j] = dist - lip * circ <= np.sqrt(R) + TOL
    return out


def _check_scale(tubes, R):
    for tb in tubes:
        if tb.R is not None and abs(tb.R - R) > 1e-9 * R:
            raise ScaleMismatch(f"packet at scale {tb.R} on a grid at scale {R}")


# -- incidence table --------------------------------------------------------------

@dataclass
class IncidenceTable:
    grid: CubeGrid
    delta: float
    hits: tuple  # (hits1, hits2) boolean (#cubes, #W_j)
    counts: tuple  # #W_j(q) per cube
    classes: dict  # (rho1, rho2) -> cube indices
    lambdas: dict  # (rho1, rho2) -> (lambda1 array, lambda2 array)
    packet_classes: dict  # (j, lam, rho1, rho2) -> packet indices

    @property
    def empty(self) -> bool:
        return not self.classes

    def class_of(self, q: int) -> Optional[tuple]:
        for key, qs in self.classes.items():
            if q in qs:
                return key
        return None

    def double_counting(self) -> dict:
        """sum_{q in Q(rho)} #W_j(q) against sum_omega lambda(omega; rho), per class."""
        out = {}
        for key, qs in self.classes.items():
            for j in (0, 1):
                lhs = int(self.counts[j][qs].sum())
                rhs = int(self.lambdas[key][j].sum())
                out[(j + 1,) + key] = (lhs, rhs)
        return out

    def summary(self) -> dict:
        dc = self.double_counting()
        return {
            "grid": self.grid.to_json(), "delta": self.delta,
            "packets": [int(self.hits[0].shape[1]), int(self.hits[1].shape[1])],
            "classes": [{"rho1": int(a), "rho2": int(b), "cubes": int(len(q))} for (a, b), q in
                        sorted(self.classes.items())],
            "packet_classes": len(self.packet_classes),
            "double_counting_exact": all(a == b for a, b in dc.values()),
        }


def build_incidence(S: Surface, packets1, packets2, grid: CubeGrid, delta: float = 0.0) -> IncidenceTable:
    t1, t2 = _as_tubes(packets1), _as_tubes(packets2)
    _check_scale(t1 + t2, grid.R)
    if grid.level != "q":
        raise ScaleMismatch("incidences are built on the q-scale grid")
    h1 = hit_matrix(S, t1, grid, delta)
    h2 = hit_matrix(S, t2, grid, delta)
    c1, c2 = h1.sum(1), h2.sum(1)
    both = (c1 >= 1) & (c2 >= 1)
    r1, r2 = dyadic_floor(c1), dyadic_floor(c2)
    classes, lambdas, pclasses = {}, {}, {}
    for a, b in sorted(set(zip(r1[both].tolist(), r2[both].tolist()))):
        qs = np.nonzero(both & (r1 == a) & (r2 == b))[0]
        classes[(a, b)] = qs
        lam = (h1[qs].sum(0), h2[qs].sum(0))
        lambdas[(a, b)] = lam
        for j in (0, 1):
            lj = lam[j]
            dl = dyadic_floor(lj)
            for v in sorted(set(dl[lj >= 1].tolist())):
                pclasses[(j + 1, v, a, b)] = np.nonzero(dl == v)[0]
    return IncidenceTable(grid, delta, (h1, h2), (c1, c2), classes, lambdas, pclasses)


# -- B*, ~ and counting ------------------------------------------------------------

def _q_meets_B(qgrid: CubeGrid, bgrid: CubeGrid) -> np.ndarray:
    """Boolean (#q, #B) of closed intersections."""
    return boxes_meet(qgrid.lo[:, None, :], qgrid.side, bgrid.lo[None, :, :], bgrid.side)


def _lex_order(bgrid: CubeGrid) -> np.ndarray:
    c = bgrid.centers
    return np.lexsort(c.T[::-1])


def b_star_all(table: IncidenceTable, bgrid: CubeGrid, rho: tuple, family: int,
               meets: Optional[np.ndarray] = None) -> np.ndarray:
    """B*(omega) for every packet of family 1 or 2 within class rho."""
    if meets is None:
        meets = _q_meets_B(table.grid, bgrid)
    qs = table.classes.get(tuple(rho), np.array([], int))
    H = table.hits[family - 1][qs]  # (#q in class, #W)
    counts = H.T.astype(np.int64) @ meets[qs].astype(np.int64)  # (#W, #B)
    order = _lex_order(bgrid)
    return order[np.argmax(counts[:, order], axis=1)] if counts.shape[0] else np.array([], int)


def b_star(table: IncidenceTable, bgrid: CubeGrid, rho: tuple, family: int, omega: int) -> int:
    return int(b_star_all(table, bgrid, rho, family)[omega])


def dilate_meets(center_star, side_star, center_b, side_b, factor: float = 10.0) -> bool:
    """Closed cube (center_b, side_b) meets the concentric factor-dilate of (center_star, side_star)."""
    gap = np.max(np.abs(np.asarray(center_b, float) - np.asarray(center_star, float)))
    reach = 0.5 * factor * side_star + 0.5 * side_b
    return bool(gap <= reach * (1 + TOL))


def relation_sim(bgrid: CubeGrid, b_star_index: int, B: int) -> bool:
    """omega ~ B: B meets the 10-fold dilate of B*(omega)."""
    c = bgrid.centers
    return dilate_meets(c[b_star_index], bgrid.side, c[B], bgrid.side)


def sim_matrix(bgrid: CubeGrid, bstars: np.ndarray) -> np.ndarray:
    """Boolean (#W, #B) of omega ~ B."""
    c = bgrid.centers
    gap = np.max(np.abs(c[None, :, :] - c[bstars][:, None, :]), axis=-1)
    return gap <= 5.5 * bgrid.side * (1 + TOL)


@dataclass
class CountingReport:
    max_b_per_packet: int
    sum_over_b: int
    n_packets: int
    ratio: float
    gate: float
    passed: bool

    def to_json(self) -> dict:
        return dict(self.__dict__)


def counting_bounds(table: IncidenceTable, bgrid: CubeGrid, gate: Optional[float] = None) -> CountingReport:
    """max_omega #{B: omega ~ B} and sum_B #{omega ~ B} / #W over all classes and both families."""
    gate = float(30 ** bgrid.dim) if gate is None else float(gate)
    meets = _q_meets_B(table.grid, bgrid)
    mx, total, n = 0, 0, 0
    for rho in table.classes:
        for fam in (1, 2):
            bs = b_star_all(table, bgrid, rho, fam, meets)
            if len(bs) == 0:
                continue
            per = sim_matrix(bgrid, bs).sum(1)
            mx = max(mx, int(per.max()))
            total += int(per.sum())
            n += len(bs)
    ratio = total / n if n else 0.0
    return CountingReport(mx, total, n, ratio, gate, bool(mx <= gate and ratio <= gate))


def distant_cube_counts(table: IncidenceTable, separation: float, family: int = 1) -> int:
    """max over cube pairs at distance >= separation of the number of tubes meeting both."""
    H = table.hits[family - 1].astype(np.int64)
    if H.size == 0:
        return 0
    common = H @ H.T
    g = table.grid
    lo = g.lo
    gap = np.maximum(0, np.abs(lo[:, None, :] - lo[None, :, :]) - g.side)
    far = np.linalg.norm(gap, axis=-1) >= separation
    return int(common[far].max()) if np.any(far) else 0


# -- Whitney pairs ------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class DyadicCube:
    level: int
    index: tuple

    @property
    def side(self) -> float:
        return 2.0 ** -self.level

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.index, float) * self.side

    def parent(self) -> "DyadicCube":
        return DyadicCube(self.level - 1, tuple(i // 2 for i in self.index))

    def contains(self, pt) -> bool:
        pt = np.asarray(pt, float)
        return bool(np.all((pt >= self.lo - TOL) & (pt <= self.lo + self.side + TOL)))


def cube_distance(I: DyadicCube, J: DyadicCube) -> float:
    gap = np.maximum(0.0, np.maximum(I.lo - (J.lo + J.side), J.lo - (I.lo + I.side)))
    return float(np.linalg.norm(gap))


def whitney_level(j: int, m: int) -> list:
    """Ordered pairs (I, I') at level j in [0,1]^m: parents adjacent, cubes not adjacent."""
    n = 2 ** j
    ks = np.stack(np.meshgrid(*([np.arange(n)] * m), indexing="ij"), -1).reshape(-1, m)
    offs = np.stack(np.meshgrid(*([np.arange(-3, 4)] * m), indexing="ij"), -1).reshape(-1, m)
    a = np.repeat(ks, len(offs), axis=0)
    b = a + np.tile(offs, (len(ks), 1))
    ok = np.all((b >= 0) & (b < n), axis=1)
    ok &= np.max(np.abs(b // 2 - a // 2), axis=1) <= 1
    ok &= np.max(np.abs(b - a), axis=1) >= 2
    return [(DyadicCube(j, tuple(x)), DyadicCube(j, tuple(y)))
            for x, y in zip(a[ok].tolist(), b[ok].tolist())]


def whitney_pairs(j_max: int, m: int) -> dict:
    if j_max < 1:
        raise ValueError("j_max must be >= 1")
    return {j: whitney_level(j, m) for j in range(1, j_max + 1)}


def whitney_constant(m: int) -> float:
    """c_m: least dist/side of two non-adjacent dyadic cubes of one level in R^m."""
    return 1.0


def _pair_arrays(ps) -> tuple:
    a = np.array([I.index for I, _ in ps], dtype=float)
    b = np.array([J.index for _, J in ps], dtype=float)
    return a, b


def whitney_checks(pairs: dict, m: int) -> dict:
    """dist/side range and the enclosing-ball property per level."""
    lo, hi, ball_ok = np.inf, 0.0, True
    for j, ps in pairs.items():
        if not ps:
            continue
        a, b = _pair_arrays(ps)  # in units of the side
        gap = np.maximum(0.0, np.abs(a - b) - 1)
        r = np.linalg.norm(gap, axis=1)
        lo, hi = min(lo, r.min()), max(hi, r.max())
        ext = np.maximum(a, b) + 1 - np.minimum(a, b)
        radius = 0.5 * np.linalg.norm(ext, axis=1) * 2.0 ** -j
        ball_ok &= bool(np.all(radius <= 2.0 ** (2 - j) + TOL))
    c = whitney_constant(m)
    empty = not any(pairs.values())
    return {"ratio_min": float(lo) if not empty else None, "ratio_max": float(hi), "ball": bool(ball_ok),
            "passed": bool(empty or (ball_ok and lo >= 0.5 * c and hi <= 8))}


def whitney_lookup(pairs: dict) -> dict:
    return {j: {(I.index, J.index) for I, J in ps} for j, ps in pairs.items()}


def whitney_cover(lookup: dict, pt) -> list:
    """Selected products I x I' (from ``whitney_lookup``) containing (z, w) in [0,1]^(2m)."""
    pt = np.asarray(pt, float)
    m = len(pt) // 2
    z, w = pt[:m], pt[m:]
    out = []
    for j, sel in lookup.items():
        kz = tuple(int(v) for v in np.minimum(np.floor(z * 2 ** j), 2 ** j - 1))
        kw = tuple(int(v) for v in np.minimum(np.floor(w * 2 ** j), 2 ** j - 1))
        if (kz, kw) in sel:
            out.append((j, kz, kw))
    return out


def whitney_csv_rows(pairs: dict) -> list:
    rows = []
    for j, ps in pairs.items():
        for I, J in ps:
            rows.append([j, *I.index, *J.index, cube_distance(I, J) / I.side])
    return rows
