"""Sequential optimization loops: IAGO (minimizer entropy) and EGO (EI).

One iteration prepares an :class:`OptimizerState` (Kriging system, paths
sampled jointly over design ∪ grid ∪ candidates and conditioned on the
data, minimizer pmf over the grid), picks the next point with the chosen
criterion, evaluates it and appends it to the design.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numba
import numpy as np
from scipy import optimize
from scipy.stats import qmc

from .covariance import CovarianceSpec
from .criteria import (
    DEFAULT_LEVELS,
    EntropyContext,
    entropy,
    expected_improvement,
)
from .kriging import (
    Design,
    FitBounds,
    KrigingSystem,
    TrendBasis,
    assemble_system,
    fit_covariance,
)
from .simulation import (
    LocationSet,
    MinimizerPmf,
    PathEnsemble,
    condition,
    minimizer_distribution,
    sample_unconditional,
    standard_normals,
)

__all__ = [
    "generate_candidates",
    "grid_shape",
    "resample_grid",
    "StoppingRule",
    "RunConfig",
    "OptimizerState",
    "prepare_state",
    "iago_suggest",
    "ego_suggest",
    "stopping_probability",
    "IterationRecord",
    "History",
    "RunAborted",
    "run",
    "suggest",
]

CRITERIA = ("entropy", "ei")
REFIT_POLICIES = ("never-after-init", "every-iteration")


# -- candidate sets ---------------------------------------------------------

def grid_shape(lower, upper, count: int) -> tuple[int, ...]:
    """Per-dimension grid counts whose product is closest to ``count``,
    proportional to the box edge lengths."""
    edges = np.asarray(upper, float) - np.asarray(lower, float)
    d = edges.size
    if d == 1:
        return (int(count),)
    ideal = edges * (count / np.prod(edges)) ** (1.0 / d)
    choices = [
        sorted({max(1, math.floor(v)), max(1, math.ceil(v)),
                max(1, math.floor(v) - 1), math.ceil(v) + 1})
        for v in ideal
    ]
    best, best_key = None, None
    for combo in np.array(np.meshgrid(*choices, indexing="ij")).reshape(d, -1).T:
        prod = int(np.prod(combo))
        key = (abs(prod - count), float(np.sum((combo - ideal) ** 2)))
        if best_key is None or key < best_key:
            best, best_key = tuple(int(c) for c in combo), key
    return best


def generate_candidates(
    lower, upper, count: int, strategy: str = "regular-grid", seed: int = 0
) -> np.ndarray:
    """Space-filling point set in the box [lower, upper].

    ``regular-grid`` is endpoint inclusive; ``latin-hypercube`` puts exactly
    one point in each of ``count`` strata per axis.
    """
    lower = np.atleast_1d(np.asarray(lower, float))
    upper = np.atleast_1d(np.asarray(upper, float))
    if count < 1:
        raise ValueError("count must be positive")
    if np.any(upper <= lower):
        raise ValueError("degenerate box")
    if strategy == "regular-grid":
        shape = grid_shape(lower, upper, count)
        axes = [
            np.linspace(lo, hi, n) if n > 1 else np.array([(lo + hi) / 2])
            for lo, hi, n in zip(lower, upper, shape)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.reshape(-1) for m in mesh])
    if strategy == "latin-hypercube":
        sample = qmc.LatinHypercube(d=lower.size, seed=seed).random(count)
        return qmc.scale(sample, lower, upper)
    raise ValueError(f"unknown strategy {strategy!r}")


def resample_grid(
    pmf: MinimizerPmf,
    lower,
    upper,
    count: int,
    seed: int,
    explore: float = 0.2,
    bandwidth=None,
) -> np.ndarray:
    """Draw a new grid from the minimizer pmf.

    Each point is, with probability 1 - ``explore``, a pmf atom perturbed by
    a Gaussian kernel and clipped to the box, otherwise uniform in the box.
    ``bandwidth`` defaults to the spacing of a regular grid of ``count``
    points.
    """
    lower = np.atleast_1d(np.asarray(lower, float))
    upper = np.atleast_1d(np.asarray(upper, float))
    d = lower.size
    if bandwidth is None:
        shape = np.asarray(grid_shape(lower, upper, count))
        bandwidth = (upper - lower) / np.maximum(shape - 1, 1)
    bandwidth = np.broadcast_to(np.asarray(bandwidth, float), (d,))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6E1D]))
    atoms = rng.choice(pmf.points.shape[0], size=count, p=pmf.probabilities)
    jitter = rng.standard_normal((count, d)) * bandwidth
    local = np.clip(pmf.points[atoms] + jitter, lower, upper)
    uniform = lower + rng.random((count, d)) * (upper - lower)
    pick_uniform = rng.random(count) < explore
    return np.where(pick_uniform[:, None], uniform, local)


# -- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class StoppingRule:
    """Stop when P(F* < f_min + δ | data) < ``p_stop`` or after
    ``max_evaluations`` new evaluations."""

    delta: float = 0.0
    p_stop: float = 0.0
    max_evaluations: int = 10

    def __post_init__(self):
        if not 0.0 <= self.p_stop <= 1.0:
            raise ValueError("p_stop must lie in [0, 1]")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.max_evaluations < 0:
            raise ValueError("max_evaluations must be nonnegative")


@dataclass(frozen=True)
class RunConfig:
    """Settings shared by the IAGO and EGO loops."""

    lower: tuple
    upper: tuple
    grid_size: int = 400
    grid_strategy: str = "regular-grid"
    n_candidates: int = 1000
    candidate_strategy: str = "regular-grid"
    paths: int = 1000
    report_paths: int = 10000
    levels: int = DEFAULT_LEVELS
    seed: int = 0
    refit: str = "never-after-init"
    fit_mode: str = "REML"
    nu: float = 2.5
    fit_nu: bool = False
    bounds: FitBounds | None = None
    spec: CovarianceSpec | None = None
    jitter: float | None = None
    trend_degree: int = 0
    resample_grid: bool = False
    explore: float = 0.2
    noise_var: float = 0.0
    ego_threshold: float = 1e-3
    ego_refine: bool = True
    workers: int | None = None
    history_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in np.atleast_1d(self.lower)))
        object.__setattr__(self, "upper", tuple(float(v) for v in np.atleast_1d(self.upper)))
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper bounds differ in dimension")
        if self.refit not in REFIT_POLICIES:
            raise ValueError(f"refit must be one of {REFIT_POLICIES}")

    @property
    def dim(self) -> int:
        return len(self.lower)


def fit_spec(design: Design, config: RunConfig, seed: int = 0) -> CovarianceSpec:
    """Covariance for ``design``: the a priori spec if configured, else a fit."""
    if config.spec is not None:
        return config.spec
    bounds = config.bounds or FitBounds.default_for(design, config.lower, config.upper)
    fixed = {} if config.fit_nu else {"nu": config.nu}
    return fit_covariance(
        design, bounds, mode=config.fit_mode, fixed=fixed,
        trend=TrendBasis(design.dim, config.trend_degree), seed=seed,
        jitter=config.jitter,
    )


# -- state ----------------------------------------------------------------------

def _stream_seeds(seed: int, iteration: int) -> dict:
    ints = np.random.SeedSequence([seed, iteration]).generate_state(4, np.uint32)
    return dict(zip(("paths", "anchors", "ties", "noise"), (int(v) for v in ints)))


@dataclass(eq=False)
class OptimizerState:
    """Snapshot of one iteration: model, conditioned ensemble and pmf."""

    design: Design
    spec: CovarianceSpec
    system: KrigingSystem
    grid: np.ndarray
    candidates: np.ndarray
    ensemble: PathEnsemble
    pmf: MinimizerPmf
    iteration: int
    seeds: dict
    levels: int = DEFAULT_LEVELS
    noise_var: float = 0.0
    lower: tuple = ()
    upper: tuple = ()

    @property
    def entropy(self) -> float:
        return entropy(self.pmf)

    @cached_property
    def grid_prediction(self):
        return self.system.predict(self.grid)

    @cached_property
    def candidate_prediction(self):
        return self.system.predict(self.candidates)

    @cached_property
    def context(self) -> EntropyContext:
        means, variances = self.candidate_prediction
        return EntropyContext(
            grid_paths=np.ascontiguousarray(self.ensemble.restrict("grid")),
            cand_paths=np.ascontiguousarray(self.ensemble.restrict("candidates")),
            cross_cov=self.system.posterior_covariance(self.grid, self.candidates),
            means=means,
            variances=variances,
            noise_var=self.noise_var,
            eps=standard_normals(self.seeds["noise"], self.ensemble.r, 1)[:, 0].copy(),
            process_variance=self.spec.variance,
            levels=self.levels,
        )

    def candidate_index(self, x) -> int:
        x = np.atleast_1d(np.asarray(x, float))
        hits = np.flatnonzero(np.all(self.candidates == x, axis=1))
        if hits.size == 0:
            raise KeyError(f"{x} is not a candidate point")
        return int(hits[0])


def prepare_state(
    design: Design,
    spec: CovarianceSpec,
    grid: np.ndarray,
    candidates: np.ndarray,
    config: RunConfig,
    iteration: int = 0,
) -> OptimizerState:
    """Steps shared by both criteria: Kriging, joint sampling, conditioning, pmf."""
    trend = TrendBasis(design.dim, config.trend_degree)
    system = assemble_system(design, spec, trend)
    seeds = _stream_seeds(config.seed, iteration)
    locs = LocationSet.merge(design=design.points, grid=grid, candidates=candidates)
    z = sample_unconditional(spec, locs, config.paths, seeds["paths"])
    paths = condition(z, system, seeds["anchors"])
    pmf = minimizer_distribution(paths, seeds["ties"], label="grid")
    return OptimizerState(
        design=design, spec=spec, system=system, grid=np.asarray(grid, float),
        candidates=np.asarray(candidates, float), ensemble=paths, pmf=pmf,
        iteration=iteration, seeds=seeds, levels=config.levels,
        noise_var=config.noise_var, lower=config.lower, upper=config.upper,
    )


def _tie_rule(primary: np.ndarray, means: np.ndarray, *leading) -> int:
    idx = np.arange(primary.size)
    return int(np.lexsort((idx, means, primary) + leading)[0])


def iago_suggest(state: OptimizerState) -> tuple[np.ndarray, np.ndarray]:
    """Candidate minimizing the conditional minimizer entropy.

    Returns (x_new, per-candidate entropies).  Ties go to the lowest Kriging
    mean, then the lowest index; candidates with zero posterior variance
    rank after all informative ones.
    """
    scores = state.context.entropies()
    means = state.context.means
    degenerate = state.context.degenerate().astype(int)
    best = _tie_rule(scores, means, degenerate)
    return state.candidates[best].copy(), scores


def ego_suggest(state: OptimizerState, refine: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """EI maximizer over the candidates, refined by a bounded simplex search.

    f_min is the smallest Kriging mean at the design points.
    """
    system = state.system
    f_min = float(np.min(system.predict(state.design.points)[0]))
    means, variances = state.candidate_prediction
    ei = expected_improvement(means, variances, f_min)
    best = _tie_rule(-ei, means)
    x0 = state.candidates[best].copy()
    if not refine or ei[best] <= 0:
        return x0, ei
    lower, upper = np.asarray(state.lower), np.asarray(state.upper)

    def neg_ei(x):
        x = np.clip(x, lower, upper)
        m, v = system.predict(x[None, :])
        return -float(expected_improvement(m[0], v[0], f_min))

    res = optimize.minimize(
        neg_ei, x0, method="Nelder-Mead", bounds=list(zip(lower, upper)),
        options={"xatol": 1e-8 * float(np.max(upper - lower)), "fatol": 1e-14,
                 "maxiter": 400 * x0.size},
    )
    x = np.clip(res.x, lower, upper)
    if -res.fun > ei[best] and not np.any(np.all(state.design.points == x, axis=1)):
        return x, ei
    return x0, ei


def stopping_probability(state: OptimizerState, delta: float) -> float:
    """Fraction of conditioned paths whose grid minimum lies below
    min_G f̂ + δ; reuses the existing ensemble."""
    grid_paths = state.ensemble.restrict("grid")
    f_min = float(np.min(state.grid_prediction[0]))
    return float(np.mean(grid_paths.min(axis=1) < f_min + delta))


# -- history --------------------------------------------------------------------

@dataclass
class IterationRecord:
    """What happened at one iteration; serialized as one JSON line."""

    iteration: int
    n_evaluations: int
    criterion: str
    design: dict
    spec: dict
    grid: list
    pmf: list
    entropy: float
    stop_probability: float
    suggested: list | None = None
    value: float | None = None
    noise_var: float | None = None
    scores: list | None = None
    nearest_design_distance: float | None = None
    extras: dict = field(default_factory=dict)
    error: str | None = None
    report_pmf: list | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, allow_nan=True)

    @classmethod
    def from_json(cls, line: str) -> "IterationRecord":
        return cls(**json.loads(line))


@dataclass
class History:
    records: list = field(default_factory=list)
    wall_time: float = 0.0

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i) -> IterationRecord:
        return self.records[i]

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]

    def design(self, i: int = -1) -> Design:
        return Design.from_dict(self.records[i].design)

    def spec(self, i: int = -1) -> CovarianceSpec:
        return CovarianceSpec.from_dict(self.records[i].spec)

    def system(self, i: int = -1, trend_degree: int = 0) -> KrigingSystem:
        design = self.design(i)
        return assemble_system(design, self.spec(i), TrendBasis(design.dim, trend_degree))

    def pmf(self, i: int = -1) -> MinimizerPmf:
        rec = self.records[i]
        return MinimizerPmf(np.asarray(rec.grid, float), np.asarray(rec.pmf, float))

    def report_pmf(self) -> MinimizerPmf:
        """Final pmf from the larger reporting ensemble, when one was drawn."""
        rec = self.final
        if rec.report_pmf is None:
            return self.pmf()
        return MinimizerPmf(np.asarray(rec.grid, float), np.asarray(rec.report_pmf, float))

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def load(cls, path) -> "History":
        lines = Path(path).read_text().splitlines()
        return cls([IterationRecord.from_json(l) for l in lines if l.strip()])


class RunAborted(RuntimeError):
    """The evaluator failed; ``history`` holds the iterations completed so far."""

    def __init__(self, message: str, history: History):
        super().__init__(message)
        self.history = history


# -- loop -------------------------------------------------------------------------

class _Model:
    """Which data the criterion sees.  The plain model uses the design as is."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.spec = None

    def fit(self, design: Design, iteration: int) -> None:
        self.spec = fit_spec(design, self.config, seed=self.config.seed + iteration)

    def surrogate(self, design: Design) -> tuple[Design, CovarianceSpec, dict]:
        return design, self.spec, {}


def _candidates(config: RunConfig, iteration: int) -> np.ndarray:
    seed = int(np.random.SeedSequence([config.seed, iteration, 1]).generate_state(1)[0])
    return generate_candidates(config.lower, config.upper, config.n_candidates,
                               config.candidate_strategy, seed=seed)


def _pick(state: OptimizerState, criterion: str, config: RunConfig):
    """(x_new, scores, stalled); stalled means EI fell below the threshold."""
    if criterion == "entropy":
        x_new, scores = iago_suggest(state)
        return x_new, scores, False
    x_new, scores = ego_suggest(state, config.ego_refine)
    spread = float(np.ptp(state.design.values))
    return x_new, scores, bool(np.max(scores) < config.ego_threshold * spread)


def _report_pmf(state: OptimizerState, r: int, seed: int) -> MinimizerPmf:
    # grid and design only: the candidates play no part in the final pmf
    seeds = np.random.SeedSequence([seed, state.iteration, 2]).generate_state(3, np.uint32)
    locs = LocationSet.merge(design=state.design.points, grid=state.grid)
    z = sample_unconditional(state.spec, locs, r, int(seeds[0]))
    paths = condition(z, state.system, int(seeds[1]))
    return minimizer_distribution(paths, int(seeds[2]), label="grid")


def _normalize_evaluation(out) -> tuple[float, float | None]:
    if isinstance(out, tuple):
        y, nv = out
        return float(y), None if nv is None else float(nv)
    return float(out), None


def _configure_workers(workers):
    if workers is not None:
        numba.set_num_threads(max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS)))


def _optimize(
    problem: Callable,
    design: Design,
    rule: StoppingRule,
    criterion: str,
    config: RunConfig,
    model: _Model,
) -> History:
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}")
    _configure_workers(config.workers)
    start = time.perf_counter()
    history = History()
    sink = open(config.history_path, "w") if config.history_path else None

    def emit(rec: IterationRecord):
        history.records.append(rec)
        if sink is not None:
            sink.write(rec.to_json() + "\n")
            sink.flush()

    try:
        model.fit(design, 0)
        grid = generate_candidates(config.lower, config.upper, config.grid_size,
                                   config.grid_strategy, seed=config.seed)
        evaluations = 0
        iteration = 0
        while True:
            candidates = _candidates(config, iteration)
            sdesign, sspec, extras = model.surrogate(design)
            state = prepare_state(sdesign, sspec, grid, candidates, config, iteration)
            p_stop = stopping_probability(state, rule.delta)
            done = evaluations >= rule.max_evaluations or p_stop < rule.p_stop
            x_new, scores = None, None
            if not done:
                x_new, scores, stalled = _pick(state, criterion, config)
                done = stalled
            rec = IterationRecord(
                iteration=iteration,
                n_evaluations=design.n,
                criterion=criterion,
                design=design.to_dict(),
                spec=model.spec.to_dict(),
                grid=state.grid.tolist(),
                pmf=state.pmf.probabilities.tolist(),
                entropy=state.entropy,
                stop_probability=p_stop,
                scores=None if scores is None else scores.tolist(),
                extras=extras,
            )
            if done:
                if config.report_paths:
                    rec.report_pmf = _report_pmf(
                        state, config.report_paths, config.seed).probabilities.tolist()
                emit(rec)
                break
            rec.suggested = x_new.tolist()
            rec.nearest_design_distance = float(
                np.min(np.linalg.norm(design.points - x_new, axis=1))
            )
            try:
                y, nv = _normalize_evaluation(problem(x_new))
            except Exception as exc:
                rec.error = f"{type(exc).__name__}: {exc}"
                emit(rec)
                raise RunAborted(f"evaluation failed at {x_new}", history) from exc
            rec.value, rec.noise_var = y, nv
            emit(rec)
            design = design.append(x_new, y, nv)
            evaluations += 1
            iteration += 1
            if config.refit == "every-iteration":
                model.fit(design, iteration)
            if config.resample_grid:
                grid = resample_grid(
                    state.pmf, config.lower, config.upper, config.grid_size,
                    seed=config.seed + iteration, explore=config.explore,
                )
    finally:
        if sink is not None:
            sink.close()
    history.wall_time = time.perf_counter() - start
    return history


def run(
    problem: Callable,
    initial_design: Design,
    rule: StoppingRule,
    criterion: str = "entropy",
    config: RunConfig | None = None,
) -> History:
    """Run IAGO (``criterion="entropy"``) or EGO (``criterion="ei"``).

    ``problem`` maps a point to its value, or to (value, noise variance).
    The last history record describes the final model and has no suggestion.
    """
    if config is None:
        raise ValueError("a RunConfig is required")
    return _optimize(problem, initial_design, rule, criterion, config, _Model(config))


def suggest(
    design: Design,
    config: RunConfig,
    criterion: str = "entropy",
    iteration: int | None = None,
    model: _Model | None = None,
) -> tuple[np.ndarray, OptimizerState]:
    """One ask step outside the loop: the next point for ``design``.

    The covariance is fitted (or taken from ``config.spec``) on ``design``.
    ``iteration`` selects the random streams and defaults to the number of
    points, so successive ask/tell rounds draw fresh paths.
    """
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}")
    _configure_workers(config.workers)
    it = design.n if iteration is None else iteration
    model = model or _Model(config)
    model.fit(design, it)
    grid = generate_candidates(config.lower, config.upper, config.grid_size,
                               config.grid_strategy, seed=config.seed)
    sdesign, sspec, _ = model.surrogate(design)
    state = prepare_state(sdesign, sspec, grid, _candidates(config, it), config, it)
    x_new, _, _ = _pick(state, criterion, config)
    return x_new, state
