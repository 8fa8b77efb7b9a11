import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from restrictlab.errors import ResolutionTooCoarse, TailNotConverged
from restrictlab.extension import (
    GridFunction, SpaceTimeGrid, bilinear_l1_constant, bilinear_l2_oracle, bilinear_lq_norm, extend, extend_grid, lq_norm,
    quadrature_error_bound, quadrilinear_l2, slice_l2_norms,
    smooth_bump, surface_jacobian, surface_measure_transform,
)
from restrictlab.surfaces import Box, make_quadratic, named_surface

RNG = np.random.default_rng(0)
PARA = named_surface("paraboloid", d=2)
PARA1 = named_surface("paraboloid", d=1)
B1 = Box.cube([-0.5, 0.0], 0.5)
B2 = Box.cube([0.5, 0.0], 0.5)


def random_grid(box, n, rng):
    return GridFunction(box, rng.standard_normal((n,) * box.dim) + 1j * rng.standard_normal((n,) * box.dim))


class TestExtend:
    def test_volume(self):
        f = GridFunction.from_function(Box.cube([0, 0], 2), 16, lambda x: np.ones(x.shape[:-1]))
        assert extend(PARA, f, [[0, 0, 0]])[0] == pytest.approx(4.0)

    def test_t0_matches_dft(self):
        n = 16
        box = Box([-1.0, -0.5], [0.0, 0.5])
        f = random_grid(box, n, RNG)
        m = np.arange(n)
        mesh = np.stack(np.meshgrid(m, m, indexing="ij"), -1).reshape(-1, 2)
        x = mesh / box.sides  # dual lattice
        pts = np.concatenate([x, np.zeros((len(x), 1))], axis=1)
        direct = extend(PARA, f, pts)
        xi0 = box.lo + 0.5 * f.h
        oracle = np.fft.ifftn(f.values) * n * n * f.cell
        oracle = oracle.reshape(-1) * np.exp(2j * np.pi * x @ xi0)
        np.testing.assert_allclose(direct, oracle, atol=1e-9 * np.max(np.abs(oracle)))

    def test_self_check(self):
        f = GridFunction.from_function(B1, 8, smooth_bump(B1))
        with pytest.raises(ResolutionTooCoarse):
            extend(PARA, f, [[40.0, 3.0, 0.0]], check=True)
        f = GridFunction.from_function(B1, 64, smooth_bump(B1))
        extend(PARA, f, [[1.0, 0.5, 2.0]], check=True)

    def test_error_bound_positive(self):
        f = GridFunction.from_function(B1, 16, smooth_bump(B1))
        b = quadrature_error_bound(PARA, f, [[0, 0, 0], [3, 0, 1]])
        assert b[1] > b[0] > 0

    def test_modulation_covariance(self):
        f = GridFunction.from_function(B1, 32, smooth_bump(B1))
        x0 = np.array([1.5, -0.75])
        pts = RNG.uniform(-4, 4, (20, 3))
        a = np.abs(extend(PARA, f.modulated(x0), pts))
        shifted = pts.copy()
        shifted[:, :2] -= x0
        b = np.abs(extend(PARA, f, shifted))
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestGrid:
    def test_agreement_with_direct(self):
        f = GridFunction.from_function(B1, 48, smooth_bump(B1))
        G = SpaceTimeGrid.for_surface(PARA, B1, 8.0, spacing_x=0.5, spacing_t=0.5)
        F = extend_grid(PARA, f, G)
        P = G.points()
        idx = RNG.choice(len(P), 100, replace=False)
        d = extend(PARA, f, P[idx])
        assert np.max(np.abs(F.reshape(-1)[idx] - d) / np.max(np.abs(d))) <= 1e-6
        np.testing.assert_allclose(F.reshape(-1)[np.argmin(np.linalg.norm(P, axis=1))],
                                   extend(PARA, f, P[[np.argmin(np.linalg.norm(P, axis=1))]])[0])

    def test_codim_two_grid(self):
        S = make_quadratic([np.eye(2), np.diag([1.0, -1.0])])
        f = GridFunction.from_function(B1, 32, smooth_bump(B1))
        G = SpaceTimeGrid(2, 2, np.zeros(4), 4.0, 0.5)
        F = extend_grid(S, f, G)
        assert F.shape == (8, 8, 8, 8)
        P = G.points()
        idx = RNG.choice(len(P), 50, replace=False)
        np.testing.assert_allclose(F.reshape(-1)[idx], extend(S, f, P[idx]), atol=1e-10)

    def test_conjugate_symmetry(self):
        f = GridFunction.from_function(B1, 32, smooth_bump(B1))
        G = SpaceTimeGrid.for_surface(PARA, B1, 6.0, spacing_x=0.5, spacing_t=0.5)
        F = extend_grid(PARA, f, G)
        # Ef(x, -t) = conj Ef(-x, t) for real f; the grid is symmetric about 0
        np.testing.assert_allclose(F[::-1, ::-1, ::-1], np.conj(F), atol=1e-12)

    def test_resolution_gate(self):
        f = GridFunction.from_function(B1, 8, smooth_bump(B1))
        G = SpaceTimeGrid.for_surface(PARA, B1, 64.0, spacing_x=0.5, spacing_t=0.5)
        with pytest.raises(ResolutionTooCoarse):
            extend_grid(PARA, f, G)

    def test_default_spacing(self):
        G = SpaceTimeGrid.for_surface(PARA, Box.cube([0, 0], 2), 4.0)
        assert np.all(G.h[:2] <= 0.25) and G.h[2] <= 0.25 / 1.0 + 1e-12
        assert G.nyquist_ok(PARA, Box.cube([0, 0], 2))


class TestNorms:
    def test_constant_field(self):
        G = SpaceTimeGrid(2, 1, np.zeros(3), 8.0, 0.5)
        F = np.full(G.shape, 3.0 - 4.0j)
        for q in (0.5, 1.0, 5 / 3, 2.0):
            assert lq_norm(F, G, q) == pytest.approx(5.0 * 8.0 ** (3 / q))
        assert lq_norm(F, G, np.inf) == 5.0

    def test_tiny_cube(self):
        f = GridFunction.from_function(Box([-1.0], [1.0]), 64, lambda x: np.ones(x.shape[:-1]))
        G = SpaceTimeGrid(1, 1, np.zeros(2), 1e-3, 1e-3 / 2)
        F = extend_grid(PARA1, f, G, strict=False)
        q = 3.0
        assert lq_norm(F, G, q) == pytest.approx(2.0 * (1e-6) ** (1 / q), rel=1e-5)

    def test_monotone_in_cube(self):
        f = GridFunction.from_function(B1, 32, smooth_bump(B1))
        G = SpaceTimeGrid(2, 1, np.zeros(3), 8.0, 0.5)
        F = extend_grid(PARA, f, G)
        inner = F[4:12, 4:12, 4:12]
        for q in (1.0, 2.0, 4.0):
            assert lq_norm(inner, G, q) <= lq_norm(F, G, q)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_plancherel(self, seed):
        rng = np.random.default_rng(seed)
        f = random_grid(Box.cube(rng.uniform(-0.5, 0.5, 2), 0.5), 24, rng)
        ts = rng.uniform(-50, 50, (10, 1))
        assert np.all(slice_l2_norms(PARA, f, ts) <= (1 + 1e-6) * f.norm(2))


class TestL1Constant:
    def test_single_cells_saturate(self):
        f = GridFunction(B1, np.zeros((8, 8), complex))
        g = GridFunction(B2, np.zeros((8, 8), complex))
        f.values[3, 5] = 2.0
        g.values[6, 1] = 1j
        assert bilinear_l1_constant(PARA, f, g, 16.0) == pytest.approx(1.0, rel=1e-12)

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 10_000), R=st.sampled_from([4.0, 16.0]))
    def test_cauchy_schwarz(self, seed, R):
        rng = np.random.default_rng(seed)
        f, g = random_grid(B1, 12, rng), random_grid(B2, 12, rng)
        c = bilinear_l1_constant(PARA, f, g, R)
        assert 0 < c <= 1 + 1e-12
        assert bilinear_l1_constant(PARA, f.scaled(3.0), g, R) == pytest.approx(c, rel=1e-12)

    def test_cell_mismatch(self):
        with pytest.raises(Exception):
            bilinear_l1_constant(PARA, random_grid(B1, 8, RNG), random_grid(B2, 16, RNG), 4.0)


class TestSurfaceMeasure:
    def test_no_jacobian_is_extend(self):
        f = GridFunction.from_function(B1, 16, smooth_bump(B1))
        pts = RNG.uniform(-3, 3, (5, 3))
        np.testing.assert_array_equal(surface_measure_transform(PARA, f, pts), extend(PARA, f, pts))

    def test_flat(self):
        S = make_quadratic([np.zeros((2, 2))])
        f = GridFunction.from_function(B1, 16, smooth_bump(B1))
        pts = RNG.uniform(-3, 3, (5, 3))
        np.testing.assert_allclose(surface_measure_transform(S, f, pts, jacobian=True),
                                   surface_measure_transform(S, f, pts), atol=1e-15)

    def test_paraboloid_1d(self):
        f = GridFunction.from_function(Box([-1.0], [1.0]), 2000, lambda x: np.ones(x.shape[:-1]))
        np.testing.assert_allclose(surface_jacobian(PARA1, np.array([[0.5]])), np.sqrt(1.25))
        v = surface_measure_transform(PARA1, f, [[0.0, 0.0]], jacobian=True)[0]
        assert v.real == pytest.approx(np.sqrt(2) + np.arcsinh(1.0), rel=1e-6)


class TestBilinear:
    def test_single_cells(self):
        h = 1 / 8
        f = GridFunction(Box([-0.5, 0.0], [-0.5 + h, h]), np.ones((1, 1)))
        g = GridFunction(Box([0.5, 0.0], [0.5 + h, h]), np.ones((1, 1)))
        G = SpaceTimeGrid(2, 1, np.zeros(3), 4.0, 0.25)
        cell = h * h
        direct = bilinear_lq_norm(PARA, f, PARA, g, G, 2.0, strict=False)
        pl = quadrilinear_l2(PARA, f, PARA, g, 1.0 / G.side)
        expected = cell ** 2 * G.side ** 1.5
        assert direct == pytest.approx(expected, rel=1e-9)
        assert pl == pytest.approx(expected, rel=1e-9)

    def test_agreement_and_scaling(self):
        f = GridFunction.from_function(B1, 64, smooth_bump(B1))
        g = GridFunction.from_function(B2, 64, smooth_bump(B2))
        G = SpaceTimeGrid.for_surface(PARA, B1, 32.0, spacing_x=0.5, spacing_t=0.5)
        rep = bilinear_l2_oracle(PARA, f, g, G)
        assert rep.relative_gap <= 0.05
        rep2 = bilinear_l2_oracle(PARA, f.scaled(-2.0), g, G)
        assert rep2.direct == pytest.approx(2 * rep.direct, rel=1e-12)
        assert rep2.plancherel == pytest.approx(2 * rep.plancherel, rel=1e-12)

    def test_tail_detected(self):
        f = GridFunction.from_function(B1, 32, smooth_bump(B1))
        g = GridFunction.from_function(B2, 32, smooth_bump(B2))
        G = SpaceTimeGrid(2, 1, np.zeros(3), 4.0, 0.5)
        with pytest.raises(TailNotConverged):
            bilinear_l2_oracle(PARA, f, g, G)
