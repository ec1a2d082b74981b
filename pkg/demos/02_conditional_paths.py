"""
Conditional paths and the minimizer distribution
================================================
"""

# %%
import numpy as np

from iago.bench import sine_exp
from iago.covariance import CovarianceSpec
from iago.criteria import entropy
from iago.kriging import Design, assemble_system
from iago.simulation import LocationSet, condition_paths, minimizer_distribution, sample_unconditional

x = np.array([0.5, 3.0, 6.0])
design = Design(x[:, None], sine_exp(x))
spec = CovarianceSpec(4.0, (1.2,))
system = assemble_system(design, spec)

# %% unconditional draws over design points and a grid, then conditioning
grid = np.linspace(0, 6.5, 200)[:, None]
locs = LocationSet.merge(design=design.points, grid=grid)
paths = condition_paths(sample_unconditional(spec, locs, 2000, seed=0), system)

# every path passes through the data
print(np.abs(paths.restrict("design") - design.values).max())

# %% where do the path minima land?
pmf = minimizer_distribution(paths, seed=0, label="grid")
print("entropy", round(entropy(pmf), 3), "bits of", round(np.log2(len(grid)), 3))
top = np.argsort(pmf.probabilities)[::-1][:5]
print(np.column_stack([grid[top, 0], pmf.probabilities[top]]).round(3))
