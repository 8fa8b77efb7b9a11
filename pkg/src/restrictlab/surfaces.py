"""Surfaces (xi, Phi(xi)) of codimension k over the cube I^d = [-1, 1]^d.

Every surface carries exact derivative oracles.  Finite differences are
only ever used to cross-check them (see :func:`fd_gradient`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BadShape, NearSingular, NonSymmetric, UnknownName

SYM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Box:
    """Closed axis-parallel box ``[lo, hi]`` in R^m."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise BadShape("box corners must be 1-d arrays of equal length")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, center, side) -> "Box":
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return cls(c - side / 2.0, c + side / 2.0)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def sides(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def side(self) -> float:
        """Side length; only meaningful for cubes."""
        return float(np.max(self.sides))

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    def is_empty(self) -> bool:
        return bool(np.any(self.hi < self.lo))

    def contains(self, pts, tol: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return np.all((pts >= self.lo - tol) & (pts <= self.hi + tol), axis=-1)

    def lattice(self, n: int) -> np.ndarray:
        """Tensor grid with ``n`` points per axis, corners included; shape (n**m, m)."""
        axes = [np.linspace(a, b, n) if n > 1 else np.array([0.5 * (a + b)])
                for a, b in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def to_json(self) -> list:
        return [self.lo.tolist(), self.hi.tolist()]

    @classmethod
    def from_json(cls, obj) -> "Box":
        return cls(np.asarray(obj[0], float), np.asarray(obj[1], float))


@dataclass(frozen=True)
class Surface:
    """Graph surface of Phi: I^d -> R^k with analytic derivative oracles.

    ``phi`` maps (..., d) -> (..., k), ``grad`` maps (..., d) -> (..., k, d)
    (rows are the gradients of phi_j) and ``hessians`` maps
    (..., d) -> (..., k, d, d).
    """

    d: int
    k: int
    phi: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hessians: Callable[[np.ndarray], np.ndarray]
    kind: str = "custom"
    A: Optional[np.ndarray] = field(default=None, repr=False)
    b: Optional[np.ndarray] = field(default=None, repr=False)
    D: Optional[np.ndarray] = field(default=None, repr=False)
    name: str = ""

    def hess(self, xi, j: int) -> np.ndarray:
        """Hessian of phi_j at xi."""
        return self.hessians(xi)[..., j, :, :]

    @property
    def dim(self) -> int:
        return self.d + self.k

    def to_json(self) -> dict:
        out = {"kind": self.kind, "d": self.d, "k": self.k}
        if self.kind == "complex-quadratic":
            out["n"] = self.d // 2
            out["D"] = np.asarray(self.D).tolist()
        elif self.A is not None:
            out["kind"] = "quadratic"
            out["matrices"] = np.asarray(self.A).tolist()
            if self.b is not None and np.any(self.b):
                out["b"] = np.asarray(self.b).tolist()
        if self.name:
            out["name"] = self.name
        return out


def _as_matrices(A, d=None) -> np.ndarray:
    arr = np.asarray(A, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise BadShape("expected a list of square matrices")
    if d is not None and arr.shape[1] != d:
        raise BadShape(f"matrices must be {d}x{d}")
    return arr


def make_quadratic(A: Sequence, b: Optional[Sequence] = None, name: str = "") -> Surface:
    """phi_j(xi) = 1/2 xi^T A_j xi + b_j . xi with exact derivatives."""
    A = _as_matrices(A)
    k, d, _ = A.shape
    if k > d:
        raise BadShape(f"codimension k={k} exceeds d={d}")
    asym = np.max(np.abs(A - np.swapaxes(A, 1, 2))) if A.size else 0.0
    if asym > SYM_TOL:
        raise NonSymmetric(f"matrix asymmetry {asym:.3e} exceeds {SYM_TOL:g}")
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    if b is None:
        b = np.zeros((k, d))
    b = np.asarray(b, dtype=float).reshape(k, -1)
    if b.shape != (k, d):
        raise BadShape("linear parts must have shape (k, d)")
    A.setflags(write=False)
    b.setflags(write=False)

    def phi(xi):
        xi = np.asarray(xi, dtype=float)
        return 0.5 * np.einsum("...i,jil,...l->...j", xi, A, xi) + xi @ b.T

    def grad(xi):
        xi = np.asarray(xi, dtype=float)
        return np.einsum("...i,jil->...jl", xi, A) + b

    def hessians(xi):
        xi = np.asarray(xi, dtype=float)
        return np.broadcast_to(A, xi.shape[:-1] + A.shape)

    return Surface(d=d, k=k, phi=phi, grad=grad, hessians=hessians,
                   kind="quadratic", A=A, b=b, name=name)


def make_custom(d: int, k: int, phi, grad, hessians, name: str = "") -> Surface:
    """Wrap user oracles; Hessians are symmetrized on every call."""
    if k > d:
        raise BadShape(f"codimension k={k} exceeds d={d}")

    def sym_hess(xi):
        H = np.asarray(hessians(xi), dtype=float)
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    return Surface(d=d, k=k, phi=phi, grad=grad, hessians=sym_hess,
                   kind="custom", name=name)


@dataclass(frozen=True)
class ComplexQuadratic:
    """gamma(z) = (z, 1/2 z^T D z) for z in C^n, D real symmetric invertible."""

    D: np.ndarray

    def __post_init__(self):
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        if D.shape[0] != D.shape[1]:
            raise BadShape("D must be square")
        if np.max(np.abs(D - D.T)) > SYM_TOL:
            raise NonSymmetric("D must be symmetric")
        if abs(np.linalg.det(D)) <= 0.0:
            raise NearSingular("D must be invertible")
        object.__setattr__(self, "D", 0.5 * (D + D.T))

    @property
    def n(self) -> int:
        return self.D.shape[0]

    def value(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        return 0.5 * np.einsum("...i,ij,...j->...", z, self.D, z)


def realize_complex(C: ComplexQuadratic) -> Surface:
    """Real form on R^{2n}: phi_1 = (x^T D x - y^T D y)/2, phi_2 = x^T D y."""
    D = C.D
    n = C.n
    Z = np.zeros((n, n))
    A1 = np.block([[D, Z], [Z, -D]])
    A2 = np.block([[Z, D], [D, Z]])
    S = make_quadratic([A1, A2], name="complex-quadratic")
    return Surface(d=2 * n, k=2, phi=S.phi, grad=S.grad, hessians=S.hessians,
                   kind="complex-quadratic", A=S.A, b=S.b, D=D.copy(),
                   name="complex-quadratic")


def complex_point(xy) -> np.ndarray:
    """Map real coordinates (x, y) in R^{2n} to z = x + iy in C^n."""
    xy = np.asarray(xy, dtype=float)
    n = xy.shape[-1] // 2
    return xy[..., :n] + 1j * xy[..., n:]


def real_point(z) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    return np.concatenate([z.real, z.imag], axis=-1)


@dataclass(frozen=True)
class NormalForm:
    """Linear change of variables w = L z with 1/2 z^T D z = w_1 w_2.

    ``form`` records the diagonal intermediate: ``"sum"`` when D is
    definite (z1^2 + z2^2 factors over C) and ``"product"`` when D is
    indefinite (z1^2 - z2^2 factors over R).
    """

    form: str
    L: np.ndarray
    sign: float

    def apply(self, z) -> np.ndarray:
        return np.asarray(z, dtype=complex) @ self.L.T

    def product(self, z) -> np.ndarray:
        w = self.apply(z)
        return w[..., 0] * w[..., 1]


def normalize_D(D, tol: float = 1e-10) -> NormalForm:
    D = np.asarray(D, dtype=float)
    if D.shape != (2, 2):
        raise BadShape("normal forms are implemented for n = 2 only")
    if np.max(np.abs(D - D.T)) > SYM_TOL:
        raise NonSymmetric("D must be symmetric")
    if abs(np.linalg.det(D)) < tol:
        raise NearSingular(f"|det D| = {abs(np.linalg.det(D)):.3e} below {tol:g}")
    lam, Q = np.linalg.eigh(0.5 * (D + D.T))
    s = np.sign(lam)
    # u = diag(sqrt|lam|) Q^T z gives 1/2 z^T D z = 1/2 (s1 u1^2 + s2 u2^2)
    U = np.diag(np.sqrt(np.abs(lam))) @ Q.T
    r = 1.0 / np.sqrt(2.0)
    if s[0] == s[1]:
        form, sign = "sum", float(s[0])
        # s/2 (u1^2 + u2^2) = [s (u1 + i u2)/sqrt2] [(u1 - i u2)/sqrt2]
        M = np.array([[sign * r, sign * 1j * r], [r, -1j * r]])
    else:
        form, sign = "product", 1.0
        if s[0] < 0:
            U = U[::-1]
        # 1/2 (u1^2 - u2^2) = [(u1 + u2)/sqrt2] [(u1 - u2)/sqrt2]
        M = np.array([[r, r], [r, -r]], dtype=complex)
    return NormalForm(form=form, L=M @ U, sign=sign)


def _paraboloid(d: int = 2, **_) -> Surface:
    return make_quadratic([np.eye(d)], name="paraboloid")


def _saddle(d: int = 2, **_) -> Surface:
    if d < 2:
        raise BadShape("saddle needs d >= 2")
    diag = np.ones(d)
    diag[d // 2:] = -1.0
    return make_quadratic([np.diag(diag)], name="saddle")


def _complex_paraboloid(n: int = 2, D=None, **_) -> Surface:
    D = np.eye(n) if D is None else np.asarray(D, dtype=float)
    return realize_complex(ComplexQuadratic(D))


def _custom_quadratic(matrices=None, b=None, **_) -> Surface:
    if matrices is None:
        raise BadShape("custom quadratic surface needs 'matrices'")
    return make_quadratic(matrices, b)


_REGISTRY = {
    "paraboloid": _paraboloid,
    "hyperbolic-paraboloid": _saddle,
    "saddle": _saddle,
    "complex-paraboloid": _complex_paraboloid,
    "complex-quadratic": _complex_paraboloid,
    "quadratic": _custom_quadratic,
}


def named_surface(name: str, **params) -> Surface:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise UnknownName(f"unknown surface {name!r}; known: {sorted(_REGISTRY)}") from None
    return factory(**params)


def surface_from_json(obj: dict) -> Surface:
    """Build a surface from ``{kind, d, k, matrices, b?, n?, D?}``."""
    if not isinstance(obj, dict) or "kind" not in obj:
        raise BadShape("surface declaration must be an object with a 'kind'")
    kind = obj["kind"]
    if kind in ("quadratic", "custom-quadratic"):
        S = make_quadratic(obj["matrices"], obj.get("b"))
    elif kind in ("complex-quadratic", "complex-paraboloid"):
        D = obj.get("D")
        n = obj.get("n", None if D is None else len(D))
        S = named_surface("complex-paraboloid", n=n or 2, D=D)
    else:
        params = {key: obj[key] for key in ("d", "n", "D") if key in obj}
        S = named_surface(kind, **params)
    for key in ("d", "k"):
        if key in obj and getattr(S, key) != obj[key]:
            raise BadShape(f"declared {key}={obj[key]} but surface has {key}={getattr(S, key)}")
    return S


def fd_gradient(S: Surface, xi, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient, for cross-checking ``S.grad`` only."""
    xi = np.asarray(xi, dtype=float)
    cols = []
    for i in range(S.d):
        e = np.zeros(S.d)
        e[i] = step
        cols.append((S.phi(xi + e) - S.phi(xi - e)) / (2 * step))
    return np.stack(cols, axis=-1)
