"""Checking the curvature and transversality conditions on model surfaces.

Run: python3 demos/curvature_conditions.py
"""
import numpy as np

from restrictlab.conditions import all_conditions, complex_condition
from restrictlab.experiments import complex_failure_demo
from restrictlab.surfaces import Box, named_surface

S1, S2 = Box.cube([-0.5, 0.0], 0.2), Box.cube([0.5, 0.0], 0.2)

for name, S in [("paraboloid", named_surface("paraboloid", d=2)), ("saddle", named_surface("saddle", d=2))]:
    print(name)
    for rep in all_conditions(S, S1, S2):
        print(f"  {rep.condition:<5} min |det| {rep.min_abs_det:.3e}  {'pass' if rep.passed else 'FAIL'}")

# Complex quadratic surfaces: the transversality quantity |dz^T D dz| vanishes along
# isotropic separations, even though the boxes are far apart.
I = np.eye(2)
print("|dz^T I dz| for dz = (1, i):", complex_condition(I, [0, 0], [1, 1j]))
print("|dz^T I dz| for dz = (1, 0):", complex_condition(I, [0, 0], [1, 0]))

demo = complex_failure_demo()
for case in demo["cases"]:
    print(f"  {case['label']:<32} value {case['value']:.2e}  separation {case['separation']:.2f}")
print("realized-surface determinant at the null pair:", f"{demo['min_abs_det']:.1e}")
print("certified failure:", demo["report"].extra["certified_failure"])
