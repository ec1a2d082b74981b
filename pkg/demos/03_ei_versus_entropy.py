"""
Two ways to pick the next point
===============================

Expected improvement goes for the current best region; the conditional
entropy of the minimizer asks where an evaluation teaches the most about
its location.
"""

# %%
import numpy as np

from iago.bench import sine_exp
from iago.covariance import CovarianceSpec
from iago.kriging import Design
from iago.optimizer import RunConfig, ego_suggest, generate_candidates, iago_suggest, prepare_state

x = np.array([0.8, 2.9, 4.8])
design = Design(x[:, None], sine_exp(x))
spec = CovarianceSpec(4.0, (1.2,), nu=2.5)
cfg = RunConfig(lower=(0.0,), upper=(6.5,), paths=1000)
grid = generate_candidates(cfg.lower, cfg.upper, 200)
cand = generate_candidates(cfg.lower, cfg.upper, 130)
state = prepare_state(design, spec, grid, cand, cfg)

# %%
x_ei, ei = ego_suggest(state)
x_h, h = iago_suggest(state)
print("EI picks", x_ei, " entropy picks", x_h)
print("entropy now", round(state.entropy, 3), " expected after", round(h.min(), 3))

# %% evaluate each choice and compare the resulting pmf entropies
after = RunConfig(lower=(0.0,), upper=(6.5,), paths=4000, seed=1)
for name, xn in (("EI", x_ei), ("entropy", x_h)):
    s = prepare_state(design.append(xn, sine_exp(xn)), spec, grid, cand, after)
    print(name, round(s.entropy, 3))
