from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from restrictlab.errors import ConditionNotMet, GridTooCoarse, NormalFormFailed, SearchFailed
from restrictlab.experiments import (
    SweepReport, bilinear_growth_sweep, bilinear_threshold, check_geometric, complex_failure_demo,
    dual_box_points, fit_loglog, growth_data, growth_norm, knapp_dual_box_value, knapp_slab, knapp_sweep,
    linear_threshold, necessary_exponent_sweep, product_threshold, random_smooth_data, slab_condition_margin,
    stationary_box_lower, whitney_bilinear_pipeline, MODEL_PRODUCT, _cbox,
)
from restrictlab.extension import GridFunction, SpaceTimeGrid, bilinear_lq_norm, extend
from restrictlab.surfaces import Box, ComplexQuadratic, make_quadratic, named_surface, realize_complex

RNG = np.random.default_rng(0)
PARA = named_surface("paraboloid", d=2)
WIDE1, WIDE2 = Box.cube([-1, 0], 1.0), Box.cube([1, 0], 1.0)
NARROW1, NARROW2 = Box([-0.75, -0.25], [-0.25, 0.25]), Box([0.25, -0.25], [0.75, 0.25])
DELTAS = [2.0 ** -e for e in range(3, 7)]


class TestThresholds:
    def test_bilinear_threshold(self):
        assert bilinear_threshold(2, 1) == Fraction(5, 3)

    def test_product_threshold_is_twice_bilinear(self):
        assert product_threshold(2) == Fraction(10, 3)
        assert product_threshold(2) == 2 * bilinear_threshold(4, 2)

    def test_linear_threshold(self):
        assert linear_threshold(2, 1) == Fraction(3, 2)
        assert linear_threshold(2, 2) == 2

    def test_slab_margin_sign(self):
        assert slab_condition_margin(2, 2, 2, 1) > 0
        assert slab_condition_margin(1.2, 1.2, 2, 1) < -0.1


class TestFitting:
    def test_geometric_required(self):
        with pytest.raises(ValueError):
            check_geometric([1, 2, 4])
        with pytest.raises(ValueError):
            check_geometric([1, 2, 4, 9])
        with pytest.raises(ValueError):
            check_geometric([1, 1, 1, 1])

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-3, 3), st.floats(0.1, 10))
    def test_exact_power_law(self, a, C):
        xs = 2.0 ** np.arange(5)
        fit = fit_loglog(xs, C * xs ** a)
        assert fit.slope == pytest.approx(a, abs=1e-9)
        assert fit.stderr < 1e-7

    def test_report_rows_and_stability(self):
        xs = 2.0 ** np.arange(4, 9)
        ys = xs ** 0.5 * (1 + 0.01 * RNG.standard_normal(5))
        rep = SweepReport("t", "R", xs, ys, 0.5, 0.1)
        assert rep.passed
        assert len(rep.rows()) == 5 and len(rep.rows()[0]) == 4
        assert set(rep.stability()) == {"slope_without_largest", "change", "within_2_stderr"}
        assert rep.to_json()["schema"].endswith("/1")


class TestKnapp:
    def test_degenerate_slab_is_whole_box(self):
        sl = knapp_slab(PARA, NARROW1, NARROW2, 1, NARROW1.side)
        assert np.all(sl.f.values == 1)
        val = knapp_dual_box_value(PARA, sl)
        assert val["at_origin"] == pytest.approx(sl.volume(), rel=1e-12)

    def test_value_at_origin_is_volume(self):
        sl = knapp_slab(PARA, WIDE1, WIDE2, 2, 2.0 ** -5)
        assert knapp_dual_box_value(PARA, sl)["at_origin"] == pytest.approx(sl.volume(), rel=1e-12)

    def test_slab_inside_box_and_membership(self):
        for j, box in ((1, WIDE1), (2, WIDE2)):
            sl = knapp_slab(PARA, WIDE1, WIDE2, j, 2.0 ** -4)
            nodes = sl.f.nodes()[sl.f.values.real > 0]
            assert np.all(box.contains(nodes))
            np.testing.assert_array_equal(sl.members(sl.f.nodes()), sl.f.values.real > 0)
            assert sl.cells_across >= 8 and not sl.clipped

    def test_frame_orthogonality(self):
        sl = knapp_slab(PARA, WIDE1, WIDE2, 1, 2.0 ** -4)
        V = sl.dual_matrix()
        np.testing.assert_allclose(V[:2] @ sl.tangents.T, 0, atol=1e-12)
        np.testing.assert_allclose(sl.tangents @ sl.tangents.T, np.eye(1), atol=1e-12)

    def test_dual_box_points_satisfy_constraints(self):
        sl = knapp_slab(PARA, WIDE1, WIDE2, 1, 2.0 ** -4)
        pts = dual_box_points(sl, 0.125)
        b = pts @ sl.dual_matrix().T
        assert np.all(np.abs(b) <= sl.dual_half_widths(0.125) * (1 + 1e-9))

    def test_coarse_grid_refused(self):
        with pytest.raises(GridTooCoarse):
            knapp_slab(PARA, WIDE1, WIDE2, 1, 2.0 ** -4, n=4)

    def test_exponent(self):
        rep = knapp_sweep(PARA, WIDE1, WIDE2, DELTAS)
        assert abs(rep.fit_exponent - 1.5) <= 0.15
        kappa = rep.extra["kappa"]
        assert max(kappa) / min(kappa) <= 2

    def test_volume_exponent_brute_force(self):
        # |Lambda_j| ~ delta^{(d+k)/2}, counted directly on the grid
        vols = [knapp_slab(PARA, WIDE1, WIDE2, 1, d).volume(False) for d in DELTAS]
        assert fit_loglog(DELTAS, vols).slope == pytest.approx(1.5, abs=0.05)

    def test_clipped_flag(self):
        assert knapp_slab(PARA, NARROW1, NARROW2, 1, 2.0 ** -3).clipped


class TestNecessary:
    @pytest.mark.parametrize("p,q", [(2.0, 2.0), (4.0, 4.0)])
    def test_allowed_pairs(self, p, q):
        rep = necessary_exponent_sweep(PARA, WIDE1, WIDE2, q, p, DELTAS)
        assert rep.extra["regime"] == "allowed" and rep.passed
        assert rep.fit_exponent == pytest.approx(3 - 5 / (2 * q), abs=0.05)
        assert rep.extra["rhs_fit"] == pytest.approx(3 / p, abs=0.05)

    def test_violated_pair_reverses(self):
        rep = necessary_exponent_sweep(PARA, WIDE1, WIDE2, 1.2, 1.2, DELTAS)
        assert rep.extra["regime"] == "violated" and rep.passed
        assert rep.fit_exponent < rep.extra["rhs_fit"]


class TestStationary:
    def test_exponent_paraboloid(self):
        rep = stationary_box_lower(PARA, [-0.5, 0], [0.5, 0], 2.0, [2.0 ** e for e in range(7, 11)])
        assert rep.passed
        assert min(rep.extra["kappa"]) >= 0.1

    def test_refuses_degenerate_hessian(self):
        S = make_quadratic([np.diag([1.0, 0.0])])
        with pytest.raises(ConditionNotMet):
            stationary_box_lower(S, [-0.5, 0], [0.5, 0], 2.0, [2.0 ** e for e in range(4, 8)])

    def test_search_failure_reported(self):
        with pytest.raises(SearchFailed):
            stationary_box_lower(PARA, [-0.5, 0], [0.5, 0], 2.0, [2.0 ** e for e in range(4, 8)], kappa_min=10)


class TestGrowth:
    def test_scaling_covariance(self):
        R = 16.0
        hull = Box([-0.75, -0.25], [0.75, 0.25])
        G = SpaceTimeGrid.for_surface(PARA, hull, R)
        f, g = growth_data("random", PARA, NARROW1, NARROW2, R, G)
        base = bilinear_lq_norm(PARA, f, PARA, g, G, 2.0)
        lam, mu = 2.5 - 1j, -0.3j
        scaled = bilinear_lq_norm(PARA, f.scaled(lam), PARA, g.scaled(mu), G, 2.0)
        assert scaled == pytest.approx(abs(lam * mu) * base, rel=1e-12)
        assert growth_norm(PARA, f.scaled(lam), g.scaled(mu), G, 2.0) == pytest.approx(
            growth_norm(PARA, f, g, G, 2.0), rel=1e-12)

    def test_norms_nested(self):
        hull = Box([-0.75, -0.25], [0.75, 0.25])
        big = SpaceTimeGrid.for_surface(PARA, hull, 32.0)
        f, g = growth_data("random", PARA, NARROW1, NARROW2, 32.0, big)
        small = SpaceTimeGrid(2, 1, np.zeros(3), 16.0, big.h)
        assert bilinear_lq_norm(PARA, f, PARA, g, small, 2.0) < bilinear_lq_norm(PARA, f, PARA, g, big, 2.0)

    def test_random_data_above_threshold(self):
        rep = bilinear_growth_sweep(PARA, NARROW1, NARROW2, 2.0, [2.0 ** e for e in range(4, 8)])
        assert rep.passed and rep.fit_exponent <= 0.2

    def test_knapp_data_below_threshold(self):
        rep = bilinear_growth_sweep(PARA, NARROW1, NARROW2, 1.2, [2.0 ** e for e in range(4, 8)], data="knapp")
        assert rep.passed and rep.fit_exponent >= 0.05
        assert rep.fit_exponent == pytest.approx(rep.predicted_exponent, abs=0.1)

    def test_refuses_without_transversality(self):
        with pytest.raises(ConditionNotMet):
            bilinear_growth_sweep(PARA, NARROW1, NARROW1, 2.0, [2.0 ** e for e in range(4, 8)])

    def test_random_data_is_fixed_function(self):
        f = random_smooth_data(NARROW1, seed=3)
        a = GridFunction.from_function(NARROW1, 16, f)
        b = GridFunction.from_function(NARROW1, 32, f)
        assert abs(a.norm() - b.norm()) < 0.05 * b.norm()


class TestComplex:
    def test_demo_values(self):
        out = complex_failure_demo()
        vals = [c["value"] for c in out["cases"]]
        assert vals[0] <= 1e-12 and vals[1] <= 1e-12
        assert vals[2] == pytest.approx(1.0)
        assert all(c["separation"] >= 1 for c in out["cases"])
        assert out["min_abs_det"] <= 1e-9
        rep = out["report"]
        assert not rep.passed and rep.extra["certified_failure"]

    def test_null_lines(self):
        D = np.diag([1.0, -1.0])
        for x in complex_failure_demo()["null_lines_diag_1_-1"]:
            x = np.asarray(x)
            assert abs(x @ D @ x) < 1e-12

    def test_isotropic_pair_for_given_D(self):
        out = complex_failure_demo(D=[[2.0, 0.5], [0.5, 3.0]])
        assert out["cases"][-1]["value"] <= 1e-12
        assert out["min_abs_det"] <= 1e-9


class TestWhitneyPipeline:
    def test_normal_form_failure(self):
        with pytest.raises(NormalFormFailed):
            whitney_bilinear_pipeline([[1.0, 1.0], [1.0, 1.0]])

    def test_level_scaling(self):
        rep = whitney_bilinear_pipeline(np.eye(2), q=4, p=4, j_max=3, n_points=256)
        assert rep.passed
        assert rep.predicted_slope == pytest.approx(-1.0)
        assert rep.ratios[1] < rep.ratios[0]

    def test_translation_is_a_shear(self):
        # E of a piece over H x I equals, up to a unimodular factor, E of its
        # translate to the origin at sheared space-time points
        S = realize_complex(ComplexQuadratic(MODEL_PRODUCT))
        a = complex(0.375, -0.125)
        s = 0.25
        H = (complex(-1.25, -0.25), complex(-0.75, 0.25))
        fb = _cbox((H[0], a - s / 2 * (1 + 1j)), (H[1], a + s / 2 * (1 + 1j)))
        tb = _cbox((H[0], -s / 2 * (1 + 1j)), (H[1], s / 2 * (1 + 1j)))
        pts = RNG.uniform(-2, 2, (50, 6))
        w = pts.copy()
        t1, t2 = pts[:, 4], pts[:, 5]
        w[:, 0] += t1 * a.real + t2 * a.imag
        w[:, 2] += -t1 * a.imag + t2 * a.real
        one = lambda x: np.ones(np.shape(x)[:-1])
        u = extend(S, GridFunction.from_function(fb, 12, one), pts)
        v = extend(S, GridFunction.from_function(tb, 12, one), w)
        np.testing.assert_allclose(np.abs(u), np.abs(v), atol=1e-12)
