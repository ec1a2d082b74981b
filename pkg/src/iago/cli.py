"""Command line entry point: ``iago {run,suggest,tell,benchmark,simulate,criterion}``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench
from .config import Settings, load_config, spec_to_toml
from .datafiles import append_to_design, read_design, read_points, write_points, write_table
from .criteria import expected_improvement
from .kriging import Design
from .optimizer import (
    RunAborted,
    _Model,
    generate_candidates,
    prepare_state,
    run,
    suggest,
)
from .robust import _RobustModel, robust_run

__all__ = ["main"]


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _model(settings: Settings):
    if settings.cost is not None:
        return _RobustModel(settings.run, settings.noise, settings.cost, settings.cost_fit)
    return _Model(settings.run)


def _noise_defaults(settings: Settings) -> Settings:
    # a noisy test function also makes hypothetical evaluations noisy
    if settings.noise_sd > 0 and settings.run.noise_var == 0:
        settings.run = replace(settings.run, noise_var=settings.noise_sd ** 2)
    return settings


def _evaluator(settings: Settings):
    fn = settings.function
    if settings.noise_sd <= 0:
        return fn
    rng = np.random.default_rng(np.random.SeedSequence([settings.run.seed, 0xE1]))
    var = settings.noise_sd ** 2

    def noisy(x):
        return float(fn(x)) + settings.noise_sd * float(rng.standard_normal()), var

    return noisy


def _initial_design(settings: Settings) -> Design:
    if settings.design is not None:
        return read_design(settings.design)
    if settings.function is None:
        raise SystemExit("config needs a design file or a test function")
    n = settings.n_initial or 5 * settings.function.dim
    return bench.initial_design(settings.function, n, settings.run.seed,
                                settings.initial_strategy, settings.noise_sd)


def cmd_run(args) -> int:
    settings = _noise_defaults(load_config(args.config))
    if settings.function is None:
        raise SystemExit("run needs `function` in the config")
    history_path = args.history or settings.history or "history.jsonl"
    cfg = replace(settings.run, history_path=str(history_path))
    design = _initial_design(settings)
    problem = _evaluator(settings)
    try:
        if settings.cost is not None:
            hist = robust_run(problem, design, settings.noise, settings.cost, settings.rule,
                              cfg, settings.criterion, settings.cost_fit)
        else:
            hist = run(problem, design, settings.rule, settings.criterion, cfg)
    except RunAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 1
    final = hist.final
    pmf = hist.pmf()
    mode = pmf.points[int(np.argmax(pmf.probabilities))]
    print(f"evaluations {final.n_evaluations}  entropy {final.entropy:.4f} bits  "
          f"pmf mode {','.join(repr(float(v)) for v in mode)}")
    print(f"history written to {history_path}")
    return 0


def cmd_suggest(args) -> int:
    settings = _noise_defaults(load_config(args.config))
    design = read_design(args.design)
    x, state = suggest(design, settings.run, args.criterion or settings.criterion,
                       model=_model(settings))
    print(",".join(repr(float(v)) for v in x))
    if args.spec_out:
        Path(args.spec_out).write_text(spec_to_toml(state.spec))
    return 0


def cmd_tell(args) -> int:
    design = append_to_design(args.design, _floats(args.x), float(args.y), args.noise_var)
    print(f"{design.n} evaluations in {args.design}")
    return 0


def cmd_benchmark(args) -> int:
    settings = load_config(args.config)
    b = settings.bench
    fn = settings.function or bench.BRANIN
    reports = bench.benchmark(
        fn,
        criteria=tuple(b.get("criteria", ("entropy", "ei"))),
        seeds=tuple(b.get("seeds", (0, 1, 2, 3, 4))),
        n_initial=int(b.get("n_initial", settings.n_initial or 15)),
        checkpoints=tuple(b.get("checkpoints", (15, 35))),
        config=settings.run,
        emit_curves=args.emit_curves,
    )
    Path(args.out).write_text(bench.report_csv(reports))
    failed = [r for r in reports if r.error]
    print(f"{len(reports)} report rows written to {args.out}"
          + (f" ({len(failed)} with errors)" if failed else ""))
    return 0


def _state(settings: Settings, design: Design, candidates=None, grid=None):
    model = _model(settings)
    model.fit(design, 0)
    cfg = settings.run
    if grid is None:
        grid = generate_candidates(cfg.lower, cfg.upper, cfg.grid_size,
                                   cfg.grid_strategy, seed=cfg.seed)
    if candidates is None:
        candidates = generate_candidates(cfg.lower, cfg.upper, cfg.n_candidates,
                                         cfg.candidate_strategy, seed=cfg.seed)
    sdesign, sspec, _ = model.surrogate(design)
    return prepare_state(sdesign, sspec, grid, candidates, cfg, 0)


def cmd_simulate(args) -> int:
    settings = load_config(args.config)
    if args.paths:
        settings.run = replace(settings.run, paths=int(args.paths))
    design = read_design(args.design)
    points = read_points(args.points) if args.points else None
    # candidates are not needed here; one grid point stands in
    grid = points if points is not None else generate_candidates(
        settings.run.lower, settings.run.upper, settings.run.grid_size,
        settings.run.grid_strategy, seed=settings.run.seed)
    state = _state(settings, design, grid[:1], grid)
    values = state.ensemble.restrict("grid")
    write_table(values, args.out, prefix="p")
    loc = args.locations or str(Path(args.out).with_suffix("")) + "_locations.csv"
    mean, var = state.grid_prediction
    write_points(state.grid, loc, {"mean": mean, "variance": var,
                                   "pmf": state.pmf.probabilities})
    print(f"{values.shape[0]} paths over {values.shape[1]} locations -> {args.out}, {loc}")
    return 0


def cmd_criterion(args) -> int:
    settings = _noise_defaults(load_config(args.config))
    design = read_design(args.design)
    candidates = read_points(args.candidates) if args.candidates else None
    state = _state(settings, design, candidates)
    which = args.criterion or settings.criterion
    mean, var = state.candidate_prediction
    if which == "entropy":
        scores = state.context.entropies()
    else:
        f_min = float(np.min(state.system.predict(state.design.points)[0]))
        scores = expected_improvement(mean, var, f_min)
    write_points(state.candidates, args.out, {which: scores, "mean": mean, "variance": var})
    print(f"{scores.size} {which} scores -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iago", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run IAGO or EGO on a test function")
    r.add_argument("--config", required=True)
    r.add_argument("--history", help="JSON-lines output (default from config)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("suggest", help="print the next evaluation point")
    s.add_argument("--design", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--criterion", choices=("entropy", "ei"))
    s.add_argument("--spec-out", help="write the covariance used as TOML")
    s.set_defaults(func=cmd_suggest)

    t = sub.add_parser("tell", help="append an evaluation to a design file")
    t.add_argument("--design", required=True)
    t.add_argument("--x", required=True, help="comma-separated coordinates")
    t.add_argument("--y", required=True, type=float)
    t.add_argument("--noise-var", type=float, default=None)
    t.set_defaults(func=cmd_tell)

    b = sub.add_parser("benchmark", help="IAGO vs EGO sweep")
    b.add_argument("--config", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--emit-curves", help="directory for entropy/pmf CSVs")
    b.set_defaults(func=cmd_benchmark)

    m = sub.add_parser("simulate", help="conditioned sample paths as CSV")
    m.add_argument("--design", required=True)
    m.add_argument("--config", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--points", help="locations CSV (default: the config grid)")
    m.add_argument("--locations", help="where to write the location table")
    m.add_argument("--paths", type=int)
    m.set_defaults(func=cmd_simulate)

    c = sub.add_parser("criterion", help="per-candidate entropy or EI scores")
    c.add_argument("--design", required=True)
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--candidates", help="candidate CSV (default from config)")
    c.add_argument("--criterion", choices=("entropy", "ei"))
    c.set_defaults(func=cmd_criterion)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
