"""Evaluating the extension operator and watching the Knapp scaling appear.

Run: python3 demos/extension_and_knapp.py
"""
import numpy as np

from restrictlab.experiments import bilinear_threshold, knapp_sweep
from restrictlab.extension import (
    GridFunction, SpaceTimeGrid, bilinear_l1_constant, extend, extend_grid, slice_l2_norms, smooth_bump,
)
from restrictlab.surfaces import Box, named_surface

RNG = np.random.default_rng(0)
S = named_surface("paraboloid", d=2)

# A smooth bump on a box left of the origin, sampled on a 32 x 32 midpoint grid.
box = Box.cube([-0.5, 0.0], 0.5)
f = GridFunction.from_function(box, 32, smooth_bump(box))

# Direct quadrature at a few points, and the same values from the slice evaluator.
G = SpaceTimeGrid.for_surface(S, box, side=8.0)
field = extend_grid(S, f, G)
pts = G.points()[::500]
direct = extend(S, f, pts)
print("grid shape", G.shape, "max |slice - direct| =", np.abs(field.reshape(-1)[::500] - direct).max())

# The norm of each time slice never exceeds the norm of the data.
ts = RNG.uniform(-50, 50, (5, 1))
print("slice norms / ||f||:", np.round(slice_l2_norms(S, f, ts) / f.norm(), 12))

# Integrating in t gives the trivial L^1 bound with a constant that does not move with R.
g_box = Box.cube([0.5, 0.0], 0.5)
rough_f = GridFunction(box, RNG.standard_normal((32, 32)) + 1j * RNG.standard_normal((32, 32)))
rough_g = GridFunction(g_box, RNG.standard_normal((32, 32)) + 1j * RNG.standard_normal((32, 32)))
for R in (16.0, 64.0):
    print(f"R = {R:>5}: L1 constant {bilinear_l1_constant(S, rough_f, rough_g, R):.4f}")

# Knapp slabs: delta-thin in the normal directions, delta^(1/2) along the common tangent.
# On the whole dual box |E f| stays comparable to the slab volume, about delta^(3/2).
rep = knapp_sweep(S, Box.cube([-1, 0], 1.0), Box.cube([1, 0], 1.0), [2.0 ** -e for e in range(3, 7)])
for delta, val in zip(rep.xs, rep.ys):
    print(f"delta = {delta:.4f}  dual-box value {val:.3e}")
print(f"fitted exponent {rep.fit_exponent:.3f} vs predicted {rep.predicted_exponent:.3f}")
print("bilinear threshold for d=2, k=1:", bilinear_threshold(2, 1))
