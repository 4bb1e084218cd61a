"""Expected cycle counts of a random partition and the per-stage distributions.

Reproduces the three-stage (7, 35) example: the stage-0 distribution is
U-shaped and every later stage only chooses how to spread its new mass.
"""

import numpy as np

from rmcsc.cyclecalc import CandidateCensus, expected_cycles
from rmcsc.grade import GradeConfig, format_distribution_table, run_pipeline
from rmcsc.protomatrix import DesignPlan, EdgeDistribution

census = CandidateCensus(7, 35)
print("candidates:", census.A4, census.A6, census.A8)

# uniform vs U-shaped stage-0 distributions over 9 components
flat = EdgeDistribution.uniform(9)
u_shape = EdgeDistribution.normalized([0.25, 0.09, 0.07, 0.06, 0.06, 0.06, 0.07, 0.09, 0.25])
for name, u in [("uniform", flat), ("U-shaped", u_shape)]:
    e6 = expected_cycles(3, 0, 1, None, u, census)
    print(f"{name:9s} E[cycle-6] = {e6:,.0f}")

plan = DesignPlan.from_schedule(7, 35, 29, 16, [8, 3, 4])
outcomes = run_pipeline(plan, GradeConfig(w6=1, w8=0))
print(format_distribution_table(outcomes))

# objective trace of stage 0 (what `rmcsc plot-data` writes as CSV)
trace = np.array(outcomes[0].result.trace)
print("stage-0 objective, first/last:", trace[0].round(1), trace[-1].round(1))
