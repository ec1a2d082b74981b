"""Robust optimization under random perturbations of the factors.

The cost of a point x is a statistic of f(x + ε) with ε a zero-mean
Gaussian factor perturbation.  It is estimated by Monte Carlo on the
Kriging mean of f, and the search then runs on a second Kriging model
fitted to these pseudo-evaluations at the design points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .covariance import CovarianceSpec
from .kriging import Design, KrigingSystem, TrendBasis, assemble_system
from .optimizer import (
    History,
    RunConfig,
    StoppingRule,
    _Model,
    _optimize,
    fit_spec,
)

__all__ = ["FactorNoise", "CostSpec", "surrogate_cost", "robust_run", "cost_system"]

COST_KINDS = ("mean", "std", "mean-plus-k-std", "quantile")
COST_FIT = ("refit-on-init", "inherit")

# rows of f̂ evaluated per block in surrogate_cost
_BLOCK = 200_000


@dataclass(frozen=True)
class FactorNoise:
    """Zero-mean Gaussian factor noise with per-dimension standard deviations.

    The same ``mc_count`` draws are reused for every query point.
    """

    std: tuple
    mc_count: int = 1000
    seed: int = 0

    def __post_init__(self):
        std = tuple(float(s) for s in np.atleast_1d(self.std))
        if any(s < 0 or not math.isfinite(s) for s in std):
            raise ValueError("factor noise standard deviations must be finite and >= 0")
        if int(self.mc_count) < 1:
            raise ValueError("mc_count must be at least 1")
        object.__setattr__(self, "std", std)
        object.__setattr__(self, "mc_count", int(self.mc_count))

    def samples(self, dim: int) -> np.ndarray:
        std = np.broadcast_to(np.asarray(self.std), (dim,))
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0xFAC7]))
        return rng.standard_normal((self.mc_count, dim)) * std


@dataclass(frozen=True)
class CostSpec:
    kind: str = "quantile"
    k: float = 0.0
    alpha: float = 0.9

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValueError(f"cost kind must be one of {COST_KINDS}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    def reduce(self, values: np.ndarray) -> np.ndarray:
        """Statistic over the last axis of ``values``."""
        n = values.shape[-1]
        if self.kind == "quantile":
            rank = max(math.ceil(self.alpha * n), 1)
            return np.partition(values, rank - 1, axis=-1)[..., rank - 1]
        mean = values.mean(axis=-1)
        if self.kind == "mean":
            return mean
        std = values.std(axis=-1, ddof=1) if n > 1 else np.zeros_like(mean)
        if self.kind == "std":
            return std
        return mean + self.k * std


def surrogate_cost(
    system: KrigingSystem,
    x,
    noise: FactorNoise,
    cost: CostSpec,
    lower=None,
    upper=None,
):
    """Monte Carlo cost of f̂ at ``x`` (one point or an (m, d) array).

    Perturbed points are clipped to [lower, upper] when bounds are given.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if single and system.design.dim != pts.shape[1]:
        pts = pts.reshape(-1, system.design.dim)
    m, d = pts.shape
    eps = noise.samples(d)
    out = np.empty(m)
    per = max(1, _BLOCK // noise.mc_count)
    for start in range(0, m, per):
        block = pts[start:start + per]
        shifted = (block[:, None, :] + eps[None, :, :]).reshape(-1, d)
        if lower is not None:
            shifted = np.clip(shifted, np.asarray(lower, float), np.asarray(upper, float))
        vals = system.predict_mean(shifted).reshape(block.shape[0], noise.mc_count)
        out[start:start + block.shape[0]] = cost.reduce(vals)
    return float(out[0]) if single and m == 1 else out


def _unique_points(points: np.ndarray) -> np.ndarray:
    _, first = np.unique(points, axis=0, return_index=True)
    return points[np.sort(first)]


class _RobustModel(_Model):
    """The criterion sees pseudo-evaluations of the cost, not f itself."""

    def __init__(self, config: RunConfig, noise: FactorNoise, cost: CostSpec,
                 cost_fit: str):
        super().__init__(config)
        self.noise = noise
        self.cost = cost
        self.cost_fit = cost_fit
        self.cost_spec = None

    def _f_system(self, design: Design) -> KrigingSystem:
        return assemble_system(design, self.spec,
                               TrendBasis(design.dim, self.config.trend_degree))

    def pseudo_design(self, design: Design) -> Design:
        pts = _unique_points(design.points)
        vals = surrogate_cost(self._f_system(design), pts, self.noise, self.cost,
                              self.config.lower, self.config.upper)
        return Design(pts, np.atleast_1d(vals))

    def fit(self, design: Design, iteration: int) -> None:
        super().fit(design, iteration)
        if self.cost_fit == "inherit":
            self.cost_spec = self.spec
        elif self.cost_spec is None or self.config.refit == "every-iteration":
            # pseudo-evaluations are noise free even if f's data are not
            cfg = replace(self.config, noise_var=0.0)
            self.cost_spec = fit_spec(self.pseudo_design(design), cfg,
                                      seed=self.config.seed + iteration)

    def surrogate(self, design: Design) -> tuple[Design, CovarianceSpec, dict]:
        pseudo = self.pseudo_design(design)
        extras = {
            "f_model": {"design": design.to_dict(), "spec": self.spec.to_dict()},
            "cost_model": {"design": pseudo.to_dict(), "spec": self.cost_spec.to_dict()},
        }
        return pseudo, self.cost_spec, extras


def robust_run(
    problem,
    initial_design: Design,
    noise: FactorNoise,
    cost: CostSpec,
    rule: StoppingRule,
    config: RunConfig,
    criterion: str = "entropy",
    cost_fit: str = "refit-on-init",
) -> History:
    """Optimize the robust cost of ``problem`` under factor noise.

    Each record's ``design``/``spec`` describe the model of f; its extras
    hold both models.  ``cost_fit`` chooses whether the cost model gets its
    own covariance fit or reuses f's.
    """
    if cost_fit not in COST_FIT:
        raise ValueError(f"cost_fit must be one of {COST_FIT}")
    model = _RobustModel(config, noise, cost, cost_fit)
    return _optimize(problem, initial_design, rule, criterion, config, model)


def cost_system(history: History, i: int = -1, trend_degree: int = 0) -> KrigingSystem:
    """Kriging system of the cost model stored in record ``i``."""
    block = history[i].extras["cost_model"]
    design = Design.from_dict(block["design"])
    return assemble_system(design, CovarianceSpec.from_dict(block["spec"]),
                           TrendBasis(design.dim, trend_degree))
