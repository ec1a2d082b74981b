"""
Kriging a one-dimensional function
==================================

Fit a Matérn covariance by REML, then predict between the observations.
"""

# %%
import numpy as np

from iago.bench import sine_exp
from iago.kriging import Design, FitBounds, assemble_system, fit_covariance

x = np.array([0.3, 1.4, 2.6, 3.9, 5.1, 6.2])
design = Design(x[:, None], sine_exp(x))

# %% the covariance is estimated once, ν stays at 2.5
spec = fit_covariance(design, FitBounds.default_for(design, [0.0], [6.5]))
print(spec)

# %% at observed points the prediction returns the data with zero variance
system = assemble_system(design, spec)
mean, var = system.predict(design.points)
print(np.max(np.abs(mean - design.values)), var.max())

# %% elsewhere the variance opens up between points
xs = np.linspace(0, 6.5, 14)[:, None]
mean, var = system.predict(xs)
for xi, m, s, f in zip(xs[:, 0], mean, np.sqrt(var), sine_exp(xs[:, 0])):
    print(f"{xi:5.2f}  f̂={m:7.3f} ± {2 * s:5.3f}   f={f:7.3f}")
