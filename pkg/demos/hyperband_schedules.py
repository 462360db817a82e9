"""
Hyperband brackets and niche-aware promotion
============================================

The schedule is a pure function of the maximum fidelity R and the scaling
factor eta; the optimizers only decide what to sample and whom to promote.
"""

import numpy as np

from qdnas import bop_elites_hb, compute_schedule, qd_hyperband, toy_cell_problem
from qdnas.metrics import archive_curve

for R in (81, 200):
    sched = compute_schedule(R, 3)
    print(f"R={R}: rungs {sched.ladder}")
    for b in sched.brackets:
        print(f"  s={b.s}: " + "  ".join(f"{st.n}@{st.r:g}" for st in b.stages))
    print(f"  one pass costs {sched.cost:g} fidelity units")

# on the toy problem R is 27; one schedule pass costs 423 units
problem = toy_cell_problem()
niches = problem.percentile_niches([50])
budget = 20 * problem.reference_fidelity

rows = []
for seed in range(5):
    plain = archive_curve(qd_hyperband(problem, niches, total_budget=budget, rng=seed))
    model = archive_curve(bop_elites_hb(problem, niches, total_budget=budget, rng=seed))
    rows.append([plain.at(budget / 2), plain.at(budget), model.at(budget / 2), model.at(budget)])

rows = np.array(rows)
print("summed niche error (mean over 5 seeds)")
print(f"  qdHB          half budget {rows[:, 0].mean():8.4f}   full budget {rows[:, 1].mean():8.4f}")
print(f"  BOP-ElitesHB  half budget {rows[:, 2].mean():8.4f}   full budget {rows[:, 3].mean():8.4f}")
