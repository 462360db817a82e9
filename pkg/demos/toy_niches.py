"""
Best architecture per size class on a toy cell space
=====================================================

A four-vertex cell space is small enough to enumerate, so every run can be
checked against the true per-niche optima.
"""

import numpy as np

from qdnas import OptimizerConfig, bop_elites_star, brute_force_oracle, random_search, toy_cell_problem
from qdnas.metrics import archive_curve, summed_niche_error

problem = toy_cell_problem()
print(f"{len(problem.configurations())} valid cells, {len(problem.unique_configurations())} distinct after pruning")

# two nested niches: small cells (below the median parameter count) and all cells
niches = problem.percentile_niches([50])
for niche in niches:
    print("niche", niche.id, "params in", niche.bounds[0])

# exhaustive answer
oracle = brute_force_oracle(problem, niches)
print("oracle optima:", [round(e.objective, 4) for e in oracle])

# model-based search against random search, same seeds and budget
bo, rs = [], []
for seed in range(5):
    cfg = OptimizerConfig(budget=40, seed=seed)
    bo.append(bop_elites_star(problem, niches, cfg))
    rs.append(random_search(problem, niches, cfg))

for name, runs in (("BOP-Elites*", bo), ("random search", rs)):
    errors = [summed_niche_error(a.elite_objectives()) for a in runs]
    print(f"{name:>14}: summed niche error {np.mean(errors):.4f} +- {np.std(errors):.4f}")

# anytime view of the first replication, in fidelity units
curve = archive_curve(bo[0])
for budget in (10, 20, 30, 40):
    print(f"after {budget:>2} evaluations: {curve.at(budget * problem.reference_fidelity):.4f}")
