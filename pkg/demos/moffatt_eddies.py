"""
Stokes flow in a 28.5 degree wedge driven by a lid with u = (1 - x^2, 0).
Corner eddies appear along the bisector, each a few hundred times weaker
than the one above it.  Writes the velocity on a grid to moffatt_field.txt.
"""
import numpy as np

from svscip.mesh import gen_wedge, wedge_apex
from svscip.problems import bisector_eddies, moffatt_problem
from svscip.solve import PenaltyConfig, sample_grid, solve, write_field

mesh = gen_wedge()
apex = wedge_apex(mesh)
print(f"{mesh.n_triangles} triangles, apex at {apex}")

sol = solve(mesh, 10, moffatt_problem(), PenaltyConfig(lam=1e3, max_iters=8))
print(f"status {sol.status}, ||div u|| = {sol.history[-1].div_norm:.2e}")

eddies = bisector_eddies(sol)
for k, (peak, y) in enumerate(zip(eddies.peaks, eddies.sign_changes)):
    print(f"eddy {k + 1}: starts at y = {y:+.4f}, peak |u1| = {peak:.3e}")
print("successive intensity ratios:", np.round(eddies.ratios, 1))

write_field(sample_grid(sol, 81, 81), "moffatt_field.txt")
