"""Gaussian sample paths on finite location sets and conditioning by Kriging.

Unconditional paths are drawn with a Cholesky factor of the location
covariance.  Conditioning follows Matheron's construction: every path z is
turned into t = z + λᵀ(f_S - z_S), which interpolates exact data and has
the conditional finite-dimensional distributions of the process.

Random numbers come from a counter-based Philox stream.  Path i always
consumes the same block of counters, so any subset of paths can be
regenerated on its own and serial and parallel runs agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .covariance import (
    CovarianceSpec,
    cholesky_with_escalation,
    covariance_matrix,
)
from .kriging import Design, KrigingSystem, assemble_system

__all__ = [
    "LocationSet",
    "PathEnsemble",
    "MinimizerPmf",
    "standard_normals",
    "sample_unconditional",
    "condition_paths",
    "condition_paths_noisy",
    "minimizer_distribution",
]

# sampler jitter grows up to this multiple of σ²
MAX_SAMPLER_JITTER = 1e-6


@dataclass(frozen=True, eq=False)
class LocationSet:
    """A finite set of pairwise distinct locations.

    ``groups`` maps a label (e.g. "design", "grid", "candidates") to the
    indices of that group's points inside ``points``.
    """

    points: np.ndarray
    groups: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.shape[0] < 1:
            raise ValueError("a location set needs at least one point")
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def __len__(self):
        return self.size

    def indices(self, label: str) -> np.ndarray:
        return self.groups[label]

    @classmethod
    def merge(cls, **named) -> "LocationSet":
        """Union of named point sets with duplicates removed.

        Points keep first-occurrence order across the keyword arguments.
        """
        blocks, labels = [], []
        for label, pts in named.items():
            pts = np.asarray(pts, dtype=float)
            if pts.ndim == 1:
                pts = pts.reshape(-1, 1)
            blocks.append(pts)
            labels.append((label, pts.shape[0]))
        allpts = np.vstack(blocks)
        _, first, inverse = np.unique(
            allpts, axis=0, return_index=True, return_inverse=True
        )
        inverse = inverse.reshape(-1)
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        points = allpts[np.sort(first)]
        idx = rank[inverse]
        groups, start = {}, 0
        for label, count in labels:
            groups[label] = idx[start:start + count]
            start += count
        return cls(points, groups)

    def locate(self, pts) -> np.ndarray:
        """Indices of ``pts`` in this set; raises KeyError if one is absent."""
        pts = np.asarray(pts, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, self.points.shape[1])
        lookup = {tuple(p): i for i, p in enumerate(self.points)}
        out = []
        for p in pts:
            key = tuple(p)
            if key not in lookup:
                raise KeyError(f"location {p} is not in the location set")
            out.append(lookup[key])
        return np.asarray(out, dtype=int)


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """r sample paths over a location set, as an (r, N) array."""

    values: np.ndarray
    locations: LocationSet
    spec: CovarianceSpec
    seed: int
    conditioned: bool = False

    @property
    def r(self) -> int:
        return self.values.shape[0]

    def restrict(self, label: str) -> np.ndarray:
        return self.values[:, self.locations.indices(label)]


@dataclass(frozen=True, eq=False)
class MinimizerPmf:
    """Empirical distribution of the global minimizer over a set of points."""

    points: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be nonnegative and sum to one")
        object.__setattr__(self, "probabilities", p)

    def mass_within(self, centers, radius: float) -> float:
        """Total probability of atoms within ``radius`` of any center."""
        centers = np.atleast_2d(np.asarray(centers, float))
        if centers.shape[1] != self.points.shape[1]:
            centers = centers.reshape(-1, self.points.shape[1])
        d = np.linalg.norm(self.points[:, None, :] - centers[None, :, :], axis=2)
        return float(self.probabilities[np.any(d <= radius, axis=1)].sum())


def _philox_key(seed: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(2, np.uint64)


def standard_normals(seed: int, n_paths: int, n_values: int, start: int = 0) -> np.ndarray:
    """Standard normal draws for paths ``start .. start + n_paths - 1``.

    Each path owns a fixed block of ⌈n_values/4⌉ Philox counters; uniforms
    on the open unit interval are mapped through the normal quantile.
    """
    block = -(-n_values // 4)
    bitgen = np.random.Philox(key=_philox_key(seed), counter=[start * block, 0, 0, 0])
    raw = bitgen.random_raw(n_paths * block * 4).reshape(n_paths, block * 4)
    raw = raw[:, :n_values]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    return special.ndtri(u)


def sample_unconditional(
    spec: CovarianceSpec, locations: LocationSet, r: int, seed: int
) -> PathEnsemble:
    """r zero-mean Gaussian paths with covariance ``spec`` over ``locations``."""
    if r < 1:
        raise ValueError("need at least one path")
    k = covariance_matrix(spec, locations.points, check=False)
    chol, _ = cholesky_with_escalation(
        k, spec.variance, spec.jitter, limit=MAX_SAMPLER_JITTER
    )
    z = standard_normals(seed, r, locations.size) @ chol.T
    return PathEnsemble(z, locations, spec, seed, conditioned=False)


def _check_compatible(ensemble: PathEnsemble, system: KrigingSystem):
    if ensemble.conditioned:
        raise ValueError("ensemble is already conditioned")
    s1, s2 = ensemble.spec, system.spec
    if (s1.variance, s1.ranges, s1.nu) != (s2.variance, s2.ranges, s2.nu):
        raise ValueError("ensemble and Kriging system use different covariances")


def _condition(z, z_design, values, system: KrigingSystem, points) -> np.ndarray:
    lam, _, _ = system.weights(points)
    return z + (values - z_design) @ lam


def condition_paths(ensemble: PathEnsemble, system: KrigingSystem) -> PathEnsemble:
    """Condition unconditional paths on the system's design by Kriging.

    The design points must belong to the ensemble's location set.
    """
    _check_compatible(ensemble, system)
    locs = ensemble.locations
    idx = locs.locate(system.design.points)
    z = ensemble.values
    t = _condition(z, z[:, idx], system.design.centered_values[None, :], system,
                   locs.points)
    return PathEnsemble(t, locs, ensemble.spec, ensemble.seed, conditioned=True)


def noisy_anchor_sampler(system: KrigingSystem):
    """Return (unique design points, posterior mean, posterior Cholesky factor)
    of F at the design locations given noisy observations."""
    # unique design locations in first-occurrence order
    _, first = np.unique(system.design.points, axis=0, return_index=True)
    pts = system.design.points[np.sort(first)]
    mean = system.predict_mean(pts)
    cov = system.posterior_covariance(pts)
    cov = 0.5 * (cov + cov.T)
    chol, _ = cholesky_with_escalation(
        cov, system.spec.variance, 0.0, limit=MAX_SAMPLER_JITTER
    )
    return pts, mean, chol


def condition_paths_noisy(
    ensemble: PathEnsemble, system: KrigingSystem, seed: int
) -> PathEnsemble:
    """Condition paths on noisy evaluations.

    Each path first receives anchor values of F at the design points, drawn
    from their posterior given the noisy data; the path is then conditioned
    on its anchors as if they were exact evaluations.
    """
    _check_compatible(ensemble, system)
    locs = ensemble.locations
    pts, mean, chol = noisy_anchor_sampler(system)
    anchors = mean[None, :] + standard_normals(seed, ensemble.r, pts.shape[0]) @ chol.T
    exact = assemble_system(
        Design(pts, mean), system.spec, system.trend
    )
    idx = locs.locate(pts)
    z = ensemble.values
    t = _condition(z, z[:, idx], anchors, exact, locs.points)
    return PathEnsemble(t, locs, ensemble.spec, ensemble.seed, conditioned=True)


def condition(ensemble: PathEnsemble, system: KrigingSystem, seed: int) -> PathEnsemble:
    """Dispatch to exact or noisy conditioning depending on the design."""
    if system.design.is_noisy:
        return condition_paths_noisy(ensemble, system, seed)
    return condition_paths(ensemble, system)


def minimizer_distribution(
    ensemble: PathEnsemble, seed: int, label: str | None = None
) -> MinimizerPmf:
    """Empirical pmf of the per-path argmin over the locations (or a group).

    Exhaustive scan per path; ties are broken uniformly at random with a
    generator seeded by ``seed``, independent of the path stream.
    """
    if label is None:
        values = ensemble.values
        points = ensemble.locations.points
    else:
        values = ensemble.restrict(label)
        points = ensemble.locations.points[ensemble.locations.indices(label)]
    r, n = values.shape
    mins = values.min(axis=1, keepdims=True)
    tied = values == mins
    n_tied = tied.sum(axis=1)
    winners = np.argmax(tied, axis=1)
    multi = np.nonzero(n_tied > 1)[0]
    if multi.size:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x71E]))
        for i in multi:
            winners[i] = rng.choice(np.flatnonzero(tied[i]))
    counts = np.bincount(winners, minlength=n)
    return MinimizerPmf(points, counts / r)
