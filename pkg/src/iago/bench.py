"""Test functions, minimizer extraction and the IAGO-vs-EGO benchmark."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .kriging import Design
from .optimizer import (
    History,
    RunAborted,
    RunConfig,
    StoppingRule,
    generate_candidates,
    run,
)

__all__ = [
    "branin",
    "sine_exp",
    "TestFunction",
    "BRANIN",
    "SINE_EXP",
    "FUNCTIONS",
    "initial_design",
    "estimate_minimizers",
    "BenchReport",
    "evaluate_checkpoint",
    "benchmark",
    "report_csv",
]


def branin(x) -> np.ndarray | float:
    """Branin function on [-5, 10] × [0, 15]; accepts (2,) or (m, 2)."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    a = x2 - 5.1 / (4 * math.pi ** 2) * x1 ** 2 + 5 / math.pi * x1 - 6
    f = a ** 2 + 10 * (1 - 1 / (8 * math.pi)) * np.cos(x1) + 10
    return float(f) if np.ndim(f) == 0 else f


def sine_exp(x) -> np.ndarray | float:
    """f(x) = 4[1 - sin(x + 8 exp(x - 7))]."""
    x = np.asarray(x, dtype=float)
    if x.ndim >= 1 and x.shape[-1] == 1:
        x = x[..., 0]
    f = 4 * (1 - np.sin(x + 8 * np.exp(x - 7)))
    return float(f) if np.ndim(f) == 0 else f


@dataclass(frozen=True)
class TestFunction:
    name: str
    lower: tuple
    upper: tuple
    evaluator: Callable
    minimizers: tuple
    minimum: float

    __test__ = False  # not a pytest class

    def __call__(self, x):
        return self.evaluator(x)

    @property
    def dim(self) -> int:
        return len(self.lower)


def _sine_exp_minimizers(lower=0.0, upper=6.5):
    # sin(x + 8e^{x-7}) = 1 ⇔ x + 8e^{x-7} = π/2 + 2πk; the left side is increasing
    from scipy.optimize import brentq

    g = lambda x: x + 8 * math.exp(x - 7)
    out = []
    k = 0
    while True:
        target = math.pi / 2 + 2 * math.pi * k
        if target > g(upper):
            break
        if target >= g(lower):
            out.append((brentq(lambda x: g(x) - target, lower, upper, xtol=1e-14),))
        k += 1
    return tuple(out)


_PI = math.pi
BRANIN = TestFunction(
    name="branin",
    lower=(-5.0, 0.0),
    upper=(10.0, 15.0),
    evaluator=branin,
    minimizers=((-_PI, 12.275), (_PI, 2.275), (3 * _PI, 2.475)),
    minimum=5 / (4 * _PI),
)

SINE_EXP = TestFunction(
    name="sine_exp",
    lower=(0.0,),
    upper=(6.5,),
    evaluator=sine_exp,
    minimizers=_sine_exp_minimizers(),
    minimum=0.0,
)

FUNCTIONS = {"branin": BRANIN, "sine_exp": SINE_EXP}


def initial_design(fn: TestFunction, n: int, seed: int, strategy: str = "latin-hypercube",
                   noise_sd: float = 0.0) -> Design:
    """Initial design on ``fn``'s domain, evaluated (with optional noise)."""
    pts = generate_candidates(fn.lower, fn.upper, n, strategy, seed=seed)
    vals = fn(pts)
    if noise_sd > 0:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE0]))
        vals = vals + noise_sd * rng.standard_normal(vals.shape)
        return Design(pts, vals, np.full(n, noise_sd ** 2))
    return Design(pts, vals)


def _local_minima(values: np.ndarray) -> np.ndarray:
    """Flat indices of grid points strictly below all their grid neighbours
    (including diagonals)."""
    padded = np.pad(values, 1, mode="constant", constant_values=np.inf)
    is_min = np.ones(values.shape, dtype=bool)
    for offset in np.ndindex(*([3] * values.ndim)):
        if all(o == 1 for o in offset):
            continue
        sl = tuple(slice(o, o + s) for o, s in zip(offset, values.shape))
        is_min &= values < padded[sl]
    return np.flatnonzero(is_min)


def estimate_minimizers(
    model, count: int, lower, upper, resolution: int | None = None,
    merge_tol: float = 1e-3,
) -> tuple[np.ndarray, bool]:
    """The ``count`` lowest local minima of a Kriging mean on a dense grid.

    ``model`` is a :class:`KrigingSystem` or a :class:`History` (final
    model).  Returns (points sorted by predicted value, complete flag); the
    flag is false when fewer than ``count`` local minima exist.  A minimum
    whose barrier to a lower one is under ``merge_tol`` times the spread of
    the mean counts as part of that lower basin.
    """
    if isinstance(model, History):
        model = model.system()
    lower = np.atleast_1d(np.asarray(lower, float))
    upper = np.atleast_1d(np.asarray(upper, float))
    d = lower.size
    if resolution is None:
        resolution = 2001 if d == 1 else 151
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.reshape(-1) for m in mesh])
    mean = model.predict_mean(pts).reshape(mesh[0].shape)
    flat = mean.reshape(-1)
    idx = _local_minima(mean)
    idx = idx[np.argsort(flat[idx], kind="stable")]
    idx = _merge_shallow(model, pts, flat, idx, merge_tol * (flat.max() - flat.min()))
    chosen = pts[idx[:count]]
    return chosen, len(idx) >= count


def _merge_shallow(model, pts, flat, idx, tol, steps: int = 65) -> np.ndarray:
    """Drop minima separated from a lower kept one by a barrier below ``tol``."""
    t = np.linspace(0.0, 1.0, steps)[:, None]
    kept: list[int] = []
    for i in idx:
        shallow = False
        for j in kept:
            seg = pts[j] + t * (pts[i] - pts[j])
            if model.predict_mean(seg).max() - flat[i] < tol:
                shallow = True
                break
        if not shallow:
            kept.append(int(i))
    return np.asarray(kept, dtype=int)


def match_minimizers(estimates: np.ndarray, truth) -> np.ndarray:
    """Index of the estimate assigned to each true minimizer.

    One-to-one nearest matching (minimal total distance) when there are
    enough estimates; otherwise leftover minimizers take their nearest one.
    """
    truth = np.asarray(truth, float)
    dist = np.linalg.norm(truth[:, None, :] - estimates[None, :, :], axis=2)
    assign = np.argmin(dist, axis=1)
    if estimates.shape[0] >= truth.shape[0]:
        rows, cols = linear_sum_assignment(dist)
        assign[rows] = cols
    return assign


@dataclass
class BenchReport:
    """Benchmark result for one (function, criterion, seed, checkpoint)."""

    function: str
    criterion: str
    seed: int
    iterations: int
    distances: list
    values: list
    estimates: list
    complete: bool
    wall_time: float = 0.0
    error: str | None = None


def evaluate_checkpoint(
    fn: TestFunction, history: History, iterations: int, criterion: str, seed: int,
    record_index: int | None = None, trend_degree: int = 0,
) -> BenchReport:
    """Score the Kriging model after ``iterations`` new evaluations."""
    index = -1 if record_index is None else record_index
    system = history.system(index, trend_degree)
    k = len(fn.minimizers)
    est, complete = estimate_minimizers(system, k, fn.lower, fn.upper)
    if est.shape[0] == 0:
        return BenchReport(fn.name, criterion, seed, iterations, [math.inf] * k,
                           [math.inf] * k, [], False, error="no local minimum found")
    assign = match_minimizers(est, fn.minimizers)
    truth = np.asarray(fn.minimizers, float)
    matched = est[assign]
    distances = np.linalg.norm(matched - truth, axis=1)
    values = np.atleast_1d(fn(matched))
    return BenchReport(
        fn.name, criterion, seed, iterations, distances.tolist(), values.tolist(),
        matched.tolist(), complete,
    )


def _record_for(history: History, n_initial: int, iterations: int) -> int | None:
    for i, rec in enumerate(history.records):
        if rec.n_evaluations == n_initial + iterations:
            return i
    return None


def benchmark(
    function: str | TestFunction,
    criteria=("entropy", "ei"),
    seeds=(0, 1, 2, 3, 4),
    n_initial: int = 15,
    checkpoints=(15, 35),
    config: RunConfig | None = None,
    emit_curves: str | Path | None = None,
) -> list[BenchReport]:
    """Run every (criterion, seed) cell from a shared initial design.

    A failing cell yields reports carrying the error; the sweep continues.
    """
    fn = FUNCTIONS[function] if isinstance(function, str) else function
    if config is None:
        config = RunConfig(lower=fn.lower, upper=fn.upper)
    max_iter = max(checkpoints)
    reports = []
    for seed in seeds:
        design = initial_design(fn, n_initial, seed)
        for criterion in criteria:
            cfg = replace(config, seed=seed, history_path=None)
            started = time.perf_counter()
            try:
                hist = run(fn, design, StoppingRule(max_evaluations=max_iter),
                           criterion, cfg)
                error = None
            except RunAborted as exc:
                hist, error = exc.history, str(exc)
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                hist, error = None, f"{type(exc).__name__}: {exc}"
            elapsed = time.perf_counter() - started
            if emit_curves is not None and hist is not None:
                _write_curves(Path(emit_curves), fn.name, criterion, seed, hist)
            for cp in checkpoints:
                idx = None if hist is None else _record_for(hist, n_initial, cp)
                if idx is None and hist is not None and error is None:
                    # stopped by its own rule: the model no longer changes
                    idx = len(hist) - 1
                if idx is None:
                    k = len(fn.minimizers)
                    reports.append(BenchReport(
                        fn.name, criterion, seed, cp, [math.nan] * k, [math.nan] * k,
                        [], False, elapsed, error or "checkpoint not reached"))
                    continue
                rep = evaluate_checkpoint(fn, hist, cp, criterion, seed, idx,
                                          cfg.trend_degree)
                rep.wall_time = elapsed
                rep.error = error
                reports.append(rep)
    return reports


def _write_curves(outdir: Path, name: str, criterion: str, seed: int, hist: History):
    outdir.mkdir(parents=True, exist_ok=True)
    stem = f"{name}_{criterion}_seed{seed}"
    with open(outdir / f"{stem}_entropy.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "n_evaluations", "entropy", "stop_probability",
                    "nearest_design_distance"])
        for rec in hist.records:
            w.writerow([rec.iteration, rec.n_evaluations, repr(rec.entropy),
                        repr(rec.stop_probability), rec.nearest_design_distance])
    with open(outdir / f"{stem}_pmf.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        d = len(hist.records[0].grid[0])
        w.writerow(["iteration"] + [f"x{j + 1}" for j in range(d)] + ["p"])
        for rec in hist.records:
            for pt, p in zip(rec.grid, rec.pmf):
                w.writerow([rec.iteration] + [repr(v) for v in pt] + [repr(p)])
    final = hist.report_pmf()
    with open(outdir / f"{stem}_final_pmf.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j + 1}" for j in range(final.points.shape[1])] + ["p"])
        for pt, p in zip(final.points, final.probabilities):
            w.writerow([repr(float(v)) for v in pt] + [repr(float(p))])


def report_csv(reports: list[BenchReport]) -> str:
    """Table-2-style CSV: one row per (function, criterion, seed, checkpoint)
    with distance and true value for each minimizer.  Wall time is left out
    so identical runs give identical bytes."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    k = max((len(r.distances) for r in reports), default=0)
    header = ["function", "criterion", "seed", "iterations"]
    for j in range(k):
        header += [f"distance_{j + 1}", f"value_{j + 1}"]
    header += ["complete", "error"]
    w.writerow(header)
    for r in reports:
        row = [r.function, r.criterion, r.seed, r.iterations]
        for dist, val in zip(r.distances, r.values):
            row += [repr(float(dist)), repr(float(val))]
        row += [int(r.complete), r.error or ""]
        w.writerow(row)
    return buf.getvalue()
