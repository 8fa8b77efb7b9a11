import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from restrictlab.errors import GridTooCoarse, InsufficientStrata, MixedDecompositions, PreconditionFailed
from restrictlab.extension import GridFunction, extend
from restrictlab.surfaces import Box, named_surface
from restrictlab.wavepackets import (
    PartitionKernels, decay_profile, decompose, orthogonality_check, reconstruct,
    reconstruction_tolerance, tube_distance,
)

RNG = np.random.default_rng(0)
PARA = named_surface("paraboloid", d=2)
PARA1 = named_surface("paraboloid", d=1)
UNIT2 = Box.cube([0, 0], 1.0)
UNIT1 = Box.cube([0], 1.0)


def random_grid(box, n, rng):
    shape = (n,) * box.dim
    return GridFunction(box, rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def q_points(R, d, k, m, rng):
    return np.concatenate([rng.uniform(-R / 2, R / 2, (m, d)), rng.uniform(-R, R, (m, k))], axis=1)


@pytest.fixture(scope="module")
def decomp64():
    f = random_grid(UNIT2, 128, np.random.default_rng(1))
    return decompose(PARA, f, 64)


class TestKernels:
    @pytest.mark.parametrize("d", [1, 2, 3, 4])
    def test_partitions_of_unity(self, d):
        err = PartitionKernels(d).partition_error()
        assert err["zeta"] < 1e-12
        assert err["psi"] < 1e-9
        assert err["psi_min"] >= 0

    @pytest.mark.parametrize("d", [1, 2, 3, 4])
    def test_zeta_support_in_unit_ball(self, d):
        K = PartitionKernels(d)
        u = RNG.uniform(-1, 1, (20000, d))
        inside = K.zeta(u) > 0
        assert np.all(np.linalg.norm(u[inside], axis=1) <= 1 + 1e-12)

    def test_psi_transform_matches_compact_support(self):
        # psi1^ vanishes beyond |eta| = 1: its samples at integers, via the
        # Poisson sum of psi1, are exactly those of a delta
        K = PartitionKernels(2)
        u = np.linspace(-60, 60, 24001)
        du = u[1] - u[0]
        for m in (1, 2, 3):
            val = np.sum(K.psi1(u) * np.cos(2 * np.pi * m * u)) * du
            assert abs(val) < 1e-9
        assert np.sum(K.psi1(u)) * du == pytest.approx(1.0, abs=1e-9)

    def test_bad_zeta_radius(self):
        with pytest.raises(ValueError):
            PartitionKernels(2, r_zeta=0.9)


class TestDecompose:
    def test_preconditions(self):
        f = random_grid(UNIT2, 64, RNG)
        with pytest.raises(PreconditionFailed):
            decompose(PARA, f, 8)
        with pytest.raises(GridTooCoarse):
            decompose(PARA, f, 256)
        with pytest.raises(GridTooCoarse):
            decompose(PARA, random_grid(UNIT2, 90, RNG), 16)

    def test_pieces_sum_to_f(self, decomp64):
        total = decomp64.total().values
        ref = decomp64.padded_f().values
        assert np.max(np.abs(total - ref)) <= 1e-8 * np.max(np.abs(ref))

    def test_reconstruct_matches_extension(self, decomp64):
        pts = q_points(64, 2, 1, 30, RNG)
        exact = extend(PARA, decomp64.f, pts)
        rec = reconstruct(decomp64.packets(), pts, decomp64)
        assert np.max(np.abs(rec - exact)) <= reconstruction_tolerance(decomp64, exact)

    def test_reconstruct_by_packet_1d(self):
        f = random_grid(UNIT1, 32, RNG)
        D = decompose(PARA1, f, 16)
        pts = q_points(16, 1, 1, 10, RNG)
        rec = reconstruct(D.packets(), pts, D, by_packet=True)
        exact = extend(PARA1, f, pts)
        np.testing.assert_allclose(rec, exact, atol=1e-9 * np.max(np.abs(exact)))

    def test_zero_data_gives_no_packets(self):
        f = GridFunction(UNIT2, np.zeros((64, 64)))
        D = decompose(PARA, f, 16)
        assert D.packets() == []
        assert np.all(reconstruct([], [[0, 0, 0]], D) == 0)

    def test_coefficient_l2_constant(self, decomp64):
        assert decomp64.coefficient_l2() <= 4 * decomp64.f.norm()

    def test_mixed_decompositions(self, decomp64):
        other = decompose(PARA, random_grid(UNIT2, 64, RNG), 16)
        with pytest.raises(MixedDecompositions):
            reconstruct([decomp64.packets()[0], other.packets()[0]], [[0, 0, 0]], decomp64)

    def test_lattices(self, decomp64):
        L = decomp64.L
        np.testing.assert_allclose(decomp64.ells / L, np.round(decomp64.ells / L), atol=1e-12)
        np.testing.assert_allclose(decomp64.nus * L, np.round(decomp64.nus * L), atol=1e-12)

    def test_fourier_localization(self, decomp64):
        for p in decomp64.packets()[::997]:
            assert decomp64.fourier_tail(p, 4.0) <= decomp64.kernels.tail_mass + 1e-9

    def test_translation_permutes_coefficients(self):
        f = random_grid(UNIT2, 64, RNG)
        D = decompose(PARA, f, 16)
        D2 = decompose(PARA, f.modulated([0, 4.0]), 16)
        A = D.coeffs.reshape(-1, D.K, D.K)
        B = D2.coeffs.reshape(-1, D.K, D.K)
        np.testing.assert_allclose(np.roll(A, 1, axis=2), B, atol=1e-12 * A.max())

    def test_jsonl_dump(self, tmp_path):
        D = decompose(PARA, random_grid(UNIT2, 64, RNG), 16)
        path = tmp_path / "packets.jsonl"
        D.dump_jsonl(path)
        rows = [json.loads(s) for s in path.read_text().splitlines()]
        assert len(rows) == D.n_packets
        assert set(rows[0]) == {"l", "nu", "c"}


class TestOracles:
    def test_maximal_function_brute_force(self):
        f = random_grid(UNIT1, 32, RNG)
        D = decompose(PARA1, f, 16)
        i = len(D.nus) // 2
        a = np.abs(D.a(i))
        x = np.arange(D.n_ext) * D.dx
        P = D.period
        for j, ell in enumerate(D.ells[:, 0]):
            best = 0.0
            side = D.L
            while True:
                dist = np.abs((x - ell + P / 2) % P - P / 2)
                sel = dist <= side / 2 + 1e-9 if side < P else np.ones_like(x, bool)
                best = max(best, a[sel].mean())
                if side >= P:
                    break
                side *= 2
            assert D.coeffs[i, j] == pytest.approx(16 ** 0.25 * best, rel=1e-12)

    def test_piece_direct_sums(self):
        # f_{l,nu} by direct Fourier sums, no FFT
        f = random_grid(UNIT1, 32, RNG)
        D = decompose(PARA1, f, 16)
        i, j = len(D.nus) // 2, 3
        b = D._b(i)
        g = GridFunction(D.box_ext, b)
        xi = g.axes()[0]
        x = np.arange(D.n_ext) * D.dx
        a = np.exp(2j * np.pi * np.outer(x, xi)) @ b * D.h
        ell = D.ells[j, 0]
        u = ((x - ell + D.period / 2) % D.period - D.period / 2) / D.L
        psi = sum(D.kernels.psi1(u + m * D.K) for m in range(-8, 9))
        piece = np.exp(-2j * np.pi * np.outer(xi, x)) @ (psi * a) * D.dx
        np.testing.assert_allclose(D.piece(i, j).values, piece, atol=1e-10 * np.abs(piece).max())

    @settings(max_examples=8, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_pieces_sum_property(self, seed):
        f = random_grid(UNIT1, 64, np.random.default_rng(seed))
        D = decompose(PARA1, f, 16)
        np.testing.assert_allclose(D.total().values, D.padded_f().values, atol=1e-10 * np.abs(f.values).max())


class TestDecayAndOrthogonality:
    def test_decay_beyond_four_cells(self):
        f = random_grid(UNIT2, 256, np.random.default_rng(2))
        D = decompose(PARA, f, 64)
        p = D.packets()[len(D.packets()) // 2]
        rep = decay_profile(D, p, rng=np.random.default_rng(3))
        assert rep.passed and rep.min_N_tail >= 2

    def test_decay_refuses_large_t(self, decomp64):
        p = decomp64.packets()[0]
        with pytest.raises(PreconditionFailed):
            decay_profile(decomp64, p, pts=[[0, 0, 65.0]])

    def test_decay_needs_strata(self, decomp64):
        p = decomp64.packets()[0]
        with pytest.raises(InsufficientStrata):
            decay_profile(decomp64, p, pts=[[p.ell[0], p.ell[1], 0.0]])

    def test_tube_distance_zero_on_core(self, decomp64):
        p = decomp64.packets()[5]
        t = 10.0
        x = p.ell - t * PARA.grad(p.nu)[0]
        assert tube_distance(decomp64, p, [np.r_[x, t]])[0] == pytest.approx(0, abs=1e-9)

    def test_orthogonality_ratio(self, decomp64):
        ps = decomp64.packets()
        rng = np.random.default_rng(4)
        for _ in range(5):
            W, seen = [], set()
            for i in rng.permutation(len(ps)):
                if ps[i].index[0] not in seen:
                    seen.add(ps[i].index[0])
                    W.append(ps[i])
                if len(W) == 12:
                    break
            r = orthogonality_check(decomp64, W, [rng.uniform(-64, 64)])["ratio"]
            assert 1 / 8 <= r <= 8

    def test_orthogonality_empty(self, decomp64):
        assert orthogonality_check(decomp64, [], [0.0])["ratio"] == 0.0

    def test_single_profile_norm_time_invariant(self, decomp64):
        p = decomp64.packets()[100]
        a = orthogonality_check(decomp64, [p], [0.0])["norm_sq"]
        b = orthogonality_check(decomp64, [p], [40.0])["norm_sq"]
        assert a == pytest.approx(b, rel=1e-12)
