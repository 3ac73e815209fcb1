"""Closed-form equilibria for a single investor type and a two-type mixture.

Run with ``python demos/closed_form_tour.py``.
"""

import numpy as np

from mfpg import (AgentType, CoefficientModel, PopulationSpec, TimeGrid, equilibrium_report,
                  him_comparison_strategy, log_utility_strategy, merton_ratio, mfg_strategy, mfg_value,
                  nplayer_strategies)

coeffs = CoefficientModel.constant(h=0.1, sigma=0.2, sigma0=0.2)
investor = AgentType(x=1.0, gamma=0.5, theta=1.0, coeffs=coeffs)
pop = PopulationSpec.single(investor)
grid = TimeGrid(1.0, 16)

# Without competition the investor holds the Merton fraction.
print(f"Merton fraction:             {merton_ratio(investor):.6f}")

# Competing against the population's geometric-mean wealth pulls the
# position towards the index, which here means holding less stock.
print(f"mean-field equilibrium:      {mfg_strategy(pop, investor):.6f}")
Y0, V = mfg_value(pop, investor, grid)
print(f"value at t=0:                Y0 = {Y0:.6f}, V = {V:.6f}")
print(f"log-utility equilibrium:     {log_utility_strategy(investor):.6f}")
print(f"scaled-strategy comparison:  {him_comparison_strategy(pop, investor):.6f}")

print("\ncompetition weight sweep")
for theta in np.linspace(0.0, 1.0, 5):
    a = investor.with_theta(theta)
    print(f"  theta = {theta:.2f}  pi* = {mfg_strategy(PopulationSpec.single(a), a):.6f}")

# A mixed population: a risk-tolerant type and a risk-averse type that
# invests in a different stock.
cautious = AgentType(1.0, -1.0, 0.5, CoefficientModel.constant(0.05, 0.3, 0.1))
mix = PopulationSpec(((0.5, investor), (0.5, cautious)))
rep = equilibrium_report(mix, grid)
print("\ntwo-type mixture at t = 0")
for k in range(2):
    print(f"  type {k}: pi* = {rep.pi_star[k, 0, 0]:.6f}, Z0 = {rep.Z0[k, 0, 0]:+.6f}")

# Finite games with players drawn from the mixture approach the mean-field
# answer as the number of players grows. A single draw is noisy, so the
# error is averaged over 32 draws per size.
rng = np.random.default_rng(1)
target = np.array([mfg_strategy(mix, a) for a in mix.types])
print("\nN-player games against the mean-field limit")
for N in (4, 16, 64, 256):
    errs = []
    for _ in range(32):
        idx = rng.integers(0, 2, N)
        pis = nplayer_strategies([mix.types[i] for i in idx])
        errs.append(np.mean(np.abs(pis - target[idx])))
    print(f"  N = {N:3d}  mean |pi_N - pi_MFG| = {np.mean(errs):.2e}")
