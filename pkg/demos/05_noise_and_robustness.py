"""
Noisy evaluations and a robust cost
===================================
"""

# %%
import numpy as np

from iago.bench import SINE_EXP, initial_design, sine_exp
from iago.optimizer import RunConfig, StoppingRule, run
from iago.robust import CostSpec, FactorNoise, cost_system, robust_run

rng = np.random.default_rng(3)


def noisy(x):
    return float(sine_exp(x)) + 0.2 * rng.standard_normal(), 0.04


design = initial_design(SINE_EXP, 3, seed=1, noise_sd=0.2)
cfg = RunConfig(lower=SINE_EXP.lower, upper=SINE_EXP.upper, n_candidates=300, seed=1,
                noise_var=0.04)
hist = run(noisy, design, StoppingRule(max_evaluations=6), "entropy", cfg)

# %% the model no longer interpolates: variance stays positive at the data
system = hist.system()
print("variance at design points", system.predict(system.design.points)[1].round(4))
print("mass within 0.7:", round(hist.pmf().mass_within(SINE_EXP.minimizers, 0.7), 3))

# %% robust version: minimize the 90% quantile of f(x + ε), ε ~ N(0, 0.2²)
cfg = RunConfig(lower=SINE_EXP.lower, upper=SINE_EXP.upper, n_candidates=300, seed=1)
hist = robust_run(sine_exp, initial_design(SINE_EXP, 3, seed=1), FactorNoise((0.2,), 1000),
                  CostSpec("quantile", alpha=0.9), StoppingRule(max_evaluations=6), cfg)
xs = np.linspace(0, 6.5, 2001)
cost = cost_system(hist).predict_mean(xs[:, None])
print("estimated robust minimizer", round(xs[np.argmin(cost)], 3))
