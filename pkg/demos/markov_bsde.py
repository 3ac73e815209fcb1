"""Equilibrium with a stock whose return depends on the common noise.

The return rate ``h(t, w) = 0.1 + 0.05 tanh(w)`` moves with the common
Brownian motion, so no closed form is available. The equilibrium is computed
by Picard iteration on the transformed BSDE and compared with the small-
competition expansion.

Run with ``python demos/markov_bsde.py``.
"""

import numpy as np

from mfpg import AgentType, CoefficientModel, PopulationSpec, TimeGrid, build_scenarios
from mfpg.bsde import SolverConfig, picard_solve, reconstruct_equilibrium, solve_benchmark
from mfpg.expansion import expand, reconstruct_value_expansion

coeffs = CoefficientModel.common_noise_markov(
    lambda t, w: 0.1 + 0.05 * np.tanh(w), 0.2, 0.2,
    {"h": (0.05, 0.15), "sigma": (0.2, 0.2), "sigma0": (0.2, 0.2)})
pop = PopulationSpec.single(AgentType(1.0, 0.5, 1.0, coeffs))
scen = build_scenarios(pop, TimeGrid(1.0, 16), n_common=4096, n_particles=1, seed=3)

# The benchmark is the problem without competition; its solution seeds the
# iteration and defines the measure under which the difference is solved.
bench = solve_benchmark(scen, pop)
sol = picard_solve(scen, pop, bench, SolverConfig(tol=1e-10))
print(f"Picard iterations: {sol.iterations}, final residual {sol.residual:.1e}")
print(f"Y0 with competition {sol.Y0[0]:.6f}, benchmark {bench.Y[0, :, 0].mean():.6f}")

eq = reconstruct_equilibrium(sol, bench)
# the no-competition optimum includes a hedge against moves in the return rate
print(f"strategy at t = 0: {eq.pi_star[0, 0, 0]:.6f}, without competition {bench.merton[0, 0, 0]:.6f}")

# Scale competition down by lambda and compare the solver with the
# expansion in lambda. Errors fall like lambda^(n+1).
co = expand(scen, pop, bench, n=2)
print("\n lambda   order-1 error   order-2 error")
for lam in (0.2, 0.1, 0.05, 0.025):
    s = picard_solve(scen, pop.scaled(lam), bench, SolverConfig(tol=1e-13))
    corr = reconstruct_equilibrium(s, bench).pi_star - bench.merton
    e = [np.abs(corr - reconstruct_value_expansion(co, lam, n)[1]).max() for n in (1, 2)]
    print(f" {lam:6.3f}   {e[0]:.3e}       {e[1]:.3e}")
