"""
The IAGO loop on a function with two global minimizers
======================================================
"""

# %%
import numpy as np

from iago.bench import SINE_EXP, initial_design, sine_exp
from iago.optimizer import RunConfig, StoppingRule, run

design = initial_design(SINE_EXP, 3, seed=0)
cfg = RunConfig(lower=SINE_EXP.lower, upper=SINE_EXP.upper, n_candidates=300, seed=0)
hist = run(sine_exp, design, StoppingRule(max_evaluations=6), "entropy", cfg)

# %% one record per iteration
for rec in hist.records:
    x = "-" if rec.suggested is None else f"{rec.suggested[0]:.3f}"
    print(rec.n_evaluations, f"H={rec.entropy:.3f}", "next", x)

# %% most of the final mass sits next to the two minimizers
pmf = hist.pmf()
print("mass within 0.5:", round(pmf.mass_within(SINE_EXP.minimizers, 0.5), 3))
print("evaluated at", np.round(hist.design().points[:, 0], 3))
