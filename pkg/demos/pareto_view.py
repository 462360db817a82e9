"""
The same search seen as a multi-objective problem
==================================================

Treating the parameter count as a second objective gives a Pareto front;
hypervolume measures how much of the trade-off a run has covered.
"""

import numpy as np

from qdnas import OptimizerConfig, bop_elites_star, parego_star, toy_cell_problem
from qdnas.metrics import hypervolume_indicator, objective_vectors, pareto_front, reference_front

problem = toy_cell_problem()
niches = problem.percentile_niches([50])

fronts = {}
for name, fn in (("BOP-Elites*", bop_elites_star), ("ParEGO*", parego_star)):
    for seed in range(3):
        archive = fn(problem, niches, OptimizerConfig(budget=30, seed=seed))
        # log-scaled parameter count, as is usual for size objectives
        P = objective_vectors(archive.evaluations, problem.reference_fidelity, log_features=True)
        fronts[name, seed] = P[pareto_front(P)]

union = reference_front(fronts.values())
nadir = np.vstack(list(fronts.values())).max(axis=0)
print(f"reference front has {len(union)} points, nadir {np.round(nadir, 3)}")

for name in ("BOP-Elites*", "ParEGO*"):
    gaps = [hypervolume_indicator(fronts[name, s], union, nadir) for s in range(3)]
    print(f"{name:>12}: hypervolume gap {np.mean(gaps):.4f}")
