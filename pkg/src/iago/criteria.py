"""Infill criteria: expected improvement and conditional minimizer entropy.

The conditional entropy of the minimizer at a candidate x_c averages, over
M equiprobable hypothetical outcomes y_1..y_M of f(x_c), the entropy of the
minimizer pmf obtained by conditioning the shared ensemble on the current
data plus f(x_c) = y_i.  Adding one exact observation to a conditioned path
t is the rank-one update

    t'(x) = t(x) + w(x) (y - t(x_c)),    w(x) = c(x, x_c) / c(x_c, x_c),

with c the Kriging (posterior) covariance, which is algebraically the same
as re-solving the extended Kriging system on S ∪ {x_c}.  A noisy
hypothetical evaluation with variance s adds s to the denominator and a
simulated measurement error to t(x_c).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numba
import numpy as np
from scipy import special

from .simulation import MinimizerPmf

__all__ = [
    "expected_improvement",
    "quantization_levels",
    "entropy",
    "EntropyContext",
    "conditional_minimizer_entropy",
]

DEFAULT_LEVELS = 10
DEGENERATE_VARIANCE = 1e-12


def expected_improvement(mean, variance, f_min):
    """EI = σ̂ [uΦ(u) + φ(u)] with u = (f_min - mean)/σ̂; max(f_min - mean, 0)
    where σ̂ = 0."""
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise ValueError("variance must be nonnegative")
    sd = np.sqrt(variance)
    gap = f_min - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(sd > 0, gap / np.where(sd > 0, sd, 1.0), 0.0)
    ei = sd * (u * special.ndtr(u) + np.exp(-0.5 * u * u) / np.sqrt(2 * np.pi))
    ei = np.where(sd > 0, np.maximum(ei, 0.0), np.maximum(gap, 0.0))
    return ei if ei.ndim else float(ei)


def quantization_levels(mean: float, variance: float, m: int = DEFAULT_LEVELS) -> np.ndarray:
    """Representatives of M equiprobable Gaussian cells.

    y_i = mean + σ̂ Φ⁻¹((i - 1/2)/M), i = 1..M.
    """
    if m < 2:
        raise ValueError("need at least two levels")
    if not variance > 0:
        raise ValueError(
            "quantization needs a positive variance; the outcome is already known"
        )
    return mean + np.sqrt(variance) * _unit_levels(m)


def _unit_levels(m: int) -> np.ndarray:
    return special.ndtri((np.arange(1, m + 1) - 0.5) / m)


def entropy(pmf) -> float:
    """Shannon entropy in bits, with 0 log 0 = 0."""
    p = pmf.probabilities if isinstance(pmf, MinimizerPmf) else np.asarray(pmf, float)
    p = p[p > 0]
    return float(max(0.0, -np.sum(p * np.log2(p))))


@numba.njit(cache=True)
def _entropy_of_counts(counts, r):
    h = 0.0
    for g in range(counts.shape[0]):
        c = counts[g]
        if c > 0.0:
            p = c / r
            h -= p * np.log2(p)
    return h


@numba.njit(parallel=True, cache=True)
def _conditional_entropies(
    sorted_vals, order, cand_paths, weights, wmax, offsets, noise_sd, eps, out
):
    """Average minimizer entropy per candidate over hypothetical outcomes.

    sorted_vals/order: grid paths sorted ascending per path, (r, N).
    cand_paths: (r, C) path values at candidates.
    weights: (C, N) update weights; wmax: (C,) max |weight| per candidate.
    offsets: (C, M) hypothetical outcome values.
    noise_sd, eps: per-candidate measurement sd and per-path std normals.

    Grid points are scanned in increasing path value; the scan stops once
    no remaining point can beat the running minimum, since every updated
    value is at least t(x) - wmax·|y - t(x_c)|.  Exact ties split the mass.
    """
    r, n = sorted_vals.shape
    n_cand, m = offsets.shape
    for c in numba.prange(n_cand):
        w = weights[c]
        bound = wmax[c]
        counts = np.zeros((m, n))
        tied = np.empty(n, dtype=np.int64)
        for i in range(r):
            vals = sorted_vals[i]
            idx = order[i]
            base = cand_paths[i, c] + noise_sd[c] * eps[i]
            for l in range(m):
                d = offsets[c, l] - base
                slack = bound * abs(d)
                best = np.inf
                n_tied = 0
                for k in range(n):
                    v0 = vals[k]
                    if v0 - slack > best:
                        break
                    g = idx[k]
                    v = v0 + w[g] * d
                    if v < best:
                        best = v
                        tied[0] = g
                        n_tied = 1
                    elif v == best:
                        tied[n_tied] = g
                        n_tied += 1
                share = 1.0 / n_tied
                for j in range(n_tied):
                    counts[l, tied[j]] += share
        h = 0.0
        for l in range(m):
            h += _entropy_of_counts(counts[l], r)
        out[c] = h / m


@dataclass(frozen=True, eq=False)
class EntropyContext:
    """Everything the conditional-entropy scan reads, for one iteration.

    grid_paths: conditioned paths on the grid, (r, N).
    cand_paths: conditioned paths at the candidates, (r, C).
    cross_cov: posterior covariance between grid and candidates, (N, C).
    means, variances: Kriging mean and variance at the candidates.
    noise_var: measurement-noise variance of a new evaluation.
    eps: per-path standard normals for simulated measurement errors.
    """

    grid_paths: np.ndarray
    cand_paths: np.ndarray
    cross_cov: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    noise_var: float
    eps: np.ndarray
    process_variance: float
    levels: int = DEFAULT_LEVELS

    @cached_property
    def _sorted_grid(self):
        order = np.argsort(self.grid_paths, axis=1, kind="stable")
        vals = np.take_along_axis(self.grid_paths, order, axis=1)
        return np.ascontiguousarray(vals), np.ascontiguousarray(order.astype(np.int64))

    @cached_property
    def _current(self) -> float:
        mins = self.grid_paths.min(axis=1, keepdims=True)
        tied = self.grid_paths == mins
        share = tied / tied.sum(axis=1, keepdims=True)
        return entropy(share.sum(axis=0) / self.grid_paths.shape[0])

    def current_entropy(self) -> float:
        """Entropy of the current pmf, exact ties split evenly."""
        return self._current

    def degenerate(self) -> np.ndarray:
        return self.variances < DEGENERATE_VARIANCE * self.process_variance

    def entropies(self, which=None) -> np.ndarray:
        """Conditional minimizer entropy for candidates ``which`` (default all)."""
        which = np.arange(self.means.size) if which is None else np.atleast_1d(which)
        out = np.full(which.size, self.current_entropy())
        live = ~self.degenerate()[which]
        if not np.any(live):
            return out
        cols = which[live]
        var = self.variances[cols]
        total = var + self.noise_var
        weights = np.ascontiguousarray((self.cross_cov[:, cols] / total).T)
        offsets = self.means[cols, None] + np.sqrt(total)[:, None] * _unit_levels(self.levels)
        sorted_vals, order = self._sorted_grid
        res = np.empty(cols.size)
        _conditional_entropies(
            sorted_vals,
            order,
            np.ascontiguousarray(self.cand_paths[:, cols]),
            weights,
            np.abs(weights).max(axis=1),
            offsets,
            np.full(cols.size, np.sqrt(self.noise_var)),
            self.eps,
            res,
        )
        out[live] = res
        return out


def conditional_minimizer_entropy(candidate, state) -> float:
    """Conditional minimizer entropy of one candidate point for ``state``.

    ``state`` is an :class:`iago.optimizer.OptimizerState`; the candidate
    must be one of its candidate locations.
    """
    idx = state.candidate_index(candidate)
    return float(state.context.entropies(np.array([idx]))[0])
