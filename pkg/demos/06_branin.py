"""
IAGO against EGO on Branin
==========================

A shortened version of the benchmark: one seed, ten iterations.  The
``iago benchmark`` command runs the full sweep from a config file.
"""

# %%
from iago.bench import BRANIN, benchmark, report_csv
from iago.optimizer import RunConfig

cfg = RunConfig(lower=BRANIN.lower, upper=BRANIN.upper, n_candidates=400, grid_size=300)
reports = benchmark(BRANIN, seeds=(0,), n_initial=15, checkpoints=(5, 10), config=cfg)
print(report_csv(reports))

# %%
for r in reports:
    print(r.criterion, r.iterations, [round(d, 2) for d in r.distances])
