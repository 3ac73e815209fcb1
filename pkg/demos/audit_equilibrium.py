"""Monte Carlo audit of a candidate equilibrium.

A candidate passes when the index it generates matches the index it was
computed against, when its martingale-optimality process has no drift, and
when no unilateral deviation improves expected utility. The Merton strategy
is audited too, as a candidate that should fail.

Run with ``python demos/audit_equilibrium.py``.
"""

from mfpg import AgentType, CoefficientModel, PopulationSpec, TimeGrid, build_scenarios
from mfpg.closed_form import merton_field, mfg_Y_paths, strategy_field
from mfpg.market import conditional_log_index
from mfpg.verification import (AuditReport, best_response_test, fixed_point_residual, martingale_test,
                               time_bump)

investor = AgentType(1.0, 0.5, 1.0, CoefficientModel.constant(0.1, 0.2, 0.2))
pop, grid = PopulationSpec.single(investor), TimeGrid(1.0, 16)
strat = strategy_field(pop, grid)

# Many particles per common path estimate the index; one particle per path
# suffices for the utility-based audits.
fp = build_scenarios(pop, grid, n_common=200, n_particles=1000, seed=2)
big = build_scenarios(pop, grid, n_common=100_000, n_particles=1, seed=1)

cand = conditional_log_index(fp, strat)
report = AuditReport(
    fixed_point=fixed_point_residual(pop, strat, fp, cand),
    negative_control=fixed_point_residual(pop, merton_field(pop, grid), fp, cand),
    martingale=martingale_test(pop, strat, mfg_Y_paths(pop, grid, big.dW0), big),
    gaps=best_response_test(pop, strat, [0.25, -0.25, 0.5, -0.5, ("bump", time_bump(grid, 0.5, 0.2, 0.5))],
                            big, conditional_log_index(big, strat)),
)
print(report.verdict(), end="")
