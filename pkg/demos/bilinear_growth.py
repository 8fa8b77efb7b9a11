"""Growth of bilinear norms over cubes of increasing size.

Above the threshold exponent, random data gives norms that level off;
below it, Knapp data makes them grow like a power of R.

Run: python3 demos/bilinear_growth.py   (about a minute)
"""
import numpy as np

from restrictlab.experiments import bilinear_growth_sweep, bilinear_threshold, whitney_bilinear_pipeline
from restrictlab.surfaces import Box, named_surface

S = named_surface("paraboloid", d=2)
S1, S2 = Box([-0.75, -0.25], [-0.25, 0.25]), Box([0.25, -0.25], [0.75, 0.25])
Rs = [2.0 ** e for e in range(4, 8)]
print("threshold:", bilinear_threshold(2, 1), "=", float(bilinear_threshold(2, 1)))

for q, data in ((2.0, "random"), (1.2, "knapp")):
    rep = bilinear_growth_sweep(S, S1, S2, q, Rs, data=data)
    print(f"q = {q}, {data} data")
    for R, v in zip(rep.xs, rep.ys):
        print(f"  R = {R:>6.0f}  norm {v:.4e}")
    print(f"  growth exponent {rep.fit_exponent:.3f} (reference {rep.predicted_exponent:.3f})")

# The same estimate after a Whitney decomposition of the product surface z1 z2:
# each level is a rescaled copy, so the level norms follow a predicted slope.
pipe = whitney_bilinear_pipeline(np.eye(2), j_max=3)
print("Whitney levels:", pipe.levels, "ratios:", np.round(pipe.ratios, 3).tolist())
print(f"slope {pipe.fit_slope:.3f} vs predicted {pipe.predicted_slope:.3f}")
