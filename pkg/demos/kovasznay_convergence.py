"""
Kovasznay flow on (-0.5, 2) x (-0.5, 1.5), nu = 0.1, on a 4x4 criss-cross
mesh.  Sweeps the degree and prints the divergence history of the
condensed iterated penalty solver together with the final errors.

    -nu lap(u) + (w . grad) u + grad q = 0,   div u = 0,   w = u_exact
"""
from svscip.mesh import gen_crisscross
from svscip.problems import KOVASZNAY_RECT, kovasznay_problem
from svscip.solve import PenaltyConfig, solve

problem = kovasznay_problem(nu=0.1)
mesh = gen_crisscross(4, 4, KOVASZNAY_RECT)
config = PenaltyConfig(lam=1e3, max_iters=8)

print(f"{mesh.n_triangles} triangles, penalty {config.lam:g}")
print(f"{'p':>3} {'boundary dofs':>14} {'iters':>6} {'H1 error':>10} {'pressure error':>15}")
for p in (4, 5, 6, 7, 8, 9, 10):
    sol = solve(mesh, p, problem, config)
    last = sol.history[-1]
    print(f"{p:3d} {sol.meta['system_size']:14d} {len(sol.history):6d} "
          f"{last.rel_H1_err:10.2e} {last.rel_L2_press_err:15.2e}")
    history = "  ".join(f"{r.div_norm:.1e}" for r in sol.history)
    print(f"    ||div u|| per iteration: {history}")

# error falls by two orders of magnitude for every two degrees
