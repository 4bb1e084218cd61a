"""A small rate-memory-compatible design against its truncated baseline.

Runs in under a minute.  At the last stage the baseline is the
unconstrained full-memory design, so it usually wins there; the
compatible design pays for freezing its earlier stages.  The group-1 design follows the same calls with
(7, 23, 23, 12, [6, 2, 3]); see the acceptance suite for its budgets.
"""

from rmcsc.grade import GradeConfig
from rmcsc.mc2 import Mc2Config, design_rmc_codes, format_cycle_table, reduction_percent, stage_cycle_counts
from rmcsc.protomatrix import DesignPlan

plan = DesignPlan.from_schedule(5, 12, 11, 6, [3, 1])
part = Mc2Config(weights={2: 100.0, 3: 10.0}, max_transitions=1500, seed=1)
lift = Mc2Config(max_transitions=3000, lift_lengths=(2, 3), seed=1)
out = design_rmc_codes(plan, GradeConfig(), part, lift, log_progress=print)

rows = []
for d in range(len(plan.stages)):
    rmc = stage_cycle_counts(out.plan, out.rmc[d], (3,))
    sf = stage_cycle_counts(out.plan, out.sf[d], (3,))
    rows += [(f"RMC-SC stage {d}", rmc), (f"SF-SC stage {d}", sf)]
    print(f"stage {d}: cycle-6 reduction {reduction_percent(sf[6], rmc[6])}%")
print(format_cycle_table(rows))
print("hardware savings:", round(out.hardware_savings(), 4))

# earlier stages are frozen inside later ones
keep = out.rmc[0].K >= 0
assert (out.rmc[1].K[keep] == out.rmc[0].K[keep]).all()
