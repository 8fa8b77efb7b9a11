"""Wave packets, tube incidences and the Whitney decomposition.

Run: python3 demos/packets_and_incidence.py
"""
import numpy as np

from restrictlab.extension import GridFunction, extend
from restrictlab.incidence import (
    CubeGrid, build_incidence, counting_bounds, whitney_checks, whitney_pairs,
)
from restrictlab.surfaces import Box, named_surface
from restrictlab.wavepackets import decompose, orthogonality_check, reconstruct, reconstruction_tolerance

RNG = np.random.default_rng(0)
S = named_surface("paraboloid", d=2)
R = 64.0

# Rough data on two separated boxes, cut into packets at scale R.
f = GridFunction(Box([-0.75, -0.25], [-0.25, 0.25]), RNG.standard_normal((64, 64)) + 0j)
g = GridFunction(Box([0.25, -0.25], [0.75, 0.25]), RNG.standard_normal((64, 64)) + 0j)
Df, Dg = decompose(S, f, R), decompose(S, g, R)
print("packets:", len(Df.packets()), len(Dg.packets()))
print("coefficient l2 / ||f||:", round(Df.coefficient_l2() / f.norm(), 4))

# Summing every packet gives back the extension.
pts = np.concatenate([RNG.uniform(-R / 2, R / 2, (20, 2)), RNG.uniform(-R, R, (20, 1))], axis=1)
exact = extend(S, f, pts)
err = np.abs(reconstruct(Df.packets(), pts, Df) - exact).max()
print(f"reconstruction error {err:.1e} (tolerance {reconstruction_tolerance(Df, exact):.1e})")

# Packets with distinct frequencies are almost orthogonal at a fixed time.
W = {p.index[0]: p for p in Df.packets()}
print("orthogonality ratio:", round(orthogonality_check(Df, list(W.values())[:12], [10.0])["ratio"], 3))

# Which R^(1/2)-cubes each tube meets, grouped by dyadic counts.
top1 = sorted(Df.packets(), key=lambda p: -abs(p.c))[:40]
top2 = sorted(Dg.packets(), key=lambda p: -abs(p.c))[:40]
table = build_incidence(S, top1, top2, CubeGrid.q_scale(R, 3))
print("double counting exact:", table.summary()["double_counting_exact"])
counts = counting_bounds(table, CubeGrid.b_scale(R, 3, 0.25))
print("max #B per packet:", counts.max_b_per_packet, "<=", int(counts.gate))

# Whitney pairs: equal-size cubes that are separated but have touching parents.
pairs = whitney_pairs(5, 2)
print("pairs per level:", {j: len(ps) for j, ps in pairs.items()})
chk = whitney_checks(pairs, 2)
print(f"distance / side ranges over [{chk['ratio_min']:.2f}, {chk['ratio_max']:.2f}]")
