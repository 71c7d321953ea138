"""
How the penalty parameter sets the contraction rate of the iteration.
Each iteration multiplies ||div u|| by roughly a constant that scales like
1/lambda, until round-off is reached.
"""
import numpy as np

from svscip.cli import decay_ratios
from svscip.mesh import gen_crisscross
from svscip.problems import KOVASZNAY_RECT, kovasznay_problem
from svscip.solve import PenaltyConfig, discretize, scip_solve

problem = kovasznay_problem()
mesh = gen_crisscross(4, 4, KOVASZNAY_RECT)
p = 7
disc = discretize(mesh, p, problem)   # element matrices do not depend on lambda

for lam in (1e1, 1e2, 1e3, 1e4):
    sol = scip_solve(mesh, p, problem, PenaltyConfig(lam=lam, max_iters=20), disc=disc)
    rho = np.exp(np.mean(np.log(decay_ratios(sol.history))))
    print(f"lambda={lam:8.0e}  iterations={len(sol.history):2d}  mean ratio={rho:.2e}  "
          f"lambda*ratio={lam * rho:.2f}  H1 error={sol.history[-1].rel_H1_err:.2e}")
