"""TOML configuration files for the command line tools.

Top-level keys mirror :class:`RunConfig` plus the covariance block
(``kernel``, ``nu``, ``rho``, ``sigma2``, ``jitter``), ``seed``,
``criterion``, the test ``function`` and its initial design.  Tables
``[stop]``, ``[robust]`` and ``[benchmark]`` hold the stopping rule, the
robust cost and the benchmark sweep.  A covariance given by both ``rho``
and ``sigma2`` is used as is; otherwise it is fitted.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

import tomli_w

from .bench import FUNCTIONS, TestFunction
from .covariance import CovarianceSpec
from .optimizer import CRITERIA, RunConfig, StoppingRule
from .robust import CostSpec, FactorNoise

__all__ = ["Settings", "load_config", "parse_config", "spec_to_toml"]

_RUN_KEYS = {f.name for f in fields(RunConfig)} - {"lower", "upper", "spec", "bounds",
                                                   "history_path", "seed"}
_COV_KEYS = {"kernel", "nu", "rho", "sigma2", "jitter"}
_TOP_KEYS = _RUN_KEYS | _COV_KEYS | {
    "function", "lower", "upper", "seed", "criterion", "design", "n_initial",
    "initial_strategy", "history", "noise_sd", "stop", "robust", "benchmark",
}


@dataclass
class Settings:
    """A parsed configuration file."""

    run: RunConfig
    rule: StoppingRule
    criterion: str = "entropy"
    function: TestFunction | None = None
    design: str | None = None
    n_initial: int | None = None
    initial_strategy: str = "latin-hypercube"
    noise_sd: float = 0.0
    history: str | None = None
    noise: FactorNoise | None = None
    cost: CostSpec | None = None
    cost_fit: str = "refit-on-init"
    bench: dict = field(default_factory=dict)


def _spec(raw: dict, dim: int) -> CovarianceSpec | None:
    kernel = raw.get("kernel", "matern")
    if kernel != "matern":
        raise ValueError(f"unsupported kernel {kernel!r}")
    if "rho" not in raw and "sigma2" not in raw:
        return None
    if "rho" not in raw or "sigma2" not in raw:
        raise ValueError("a fixed covariance needs both rho and sigma2")
    rho = raw["rho"] if isinstance(raw["rho"], list) else [raw["rho"]] * dim
    return CovarianceSpec(float(raw["sigma2"]), tuple(float(r) for r in rho),
                          float(raw.get("nu", 2.5)), raw.get("jitter"))


def parse_config(raw: dict, base: Path | None = None) -> Settings:
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
    fn = None
    if "function" in raw:
        if raw["function"] not in FUNCTIONS:
            raise ValueError(f"unknown function {raw['function']!r}; "
                             f"choose from {sorted(FUNCTIONS)}")
        fn = FUNCTIONS[raw["function"]]
    lower = raw.get("lower", fn.lower if fn else None)
    upper = raw.get("upper", fn.upper if fn else None)
    if lower is None or upper is None:
        raise ValueError("the domain needs lower and upper bounds (or a function)")
    dim = len(lower)
    kwargs = {k: raw[k] for k in _RUN_KEYS if k in raw}
    run = RunConfig(
        lower=tuple(lower), upper=tuple(upper), seed=int(raw.get("seed", 0)),
        spec=_spec(raw, dim), history_path=None, **kwargs,
    )
    stop = raw.get("stop", {})
    rule = StoppingRule(
        delta=float(stop.get("delta", 0.0)),
        p_stop=float(stop.get("p_stop", 0.0)),
        max_evaluations=int(stop.get("max_evals", 10)),
    )
    criterion = raw.get("criterion", "entropy")
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}")
    noise = cost = None
    cost_fit = "refit-on-init"
    if "robust" in raw:
        rb = raw["robust"]
        std = rb.get("factor_std", [0.0] * dim)
        std = std if isinstance(std, list) else [std] * dim
        noise = FactorNoise(tuple(std), int(rb.get("mc_count", 1000)),
                            int(rb.get("seed", run.seed)))
        cost = CostSpec(rb.get("kind", "quantile"), float(rb.get("k", 0.0)),
                        float(rb.get("alpha", 0.9)))
        cost_fit = rb.get("cost_fit", cost_fit)
    design = raw.get("design")
    if design is not None and base is not None:
        design = str((base / design).resolve()) if not Path(design).is_absolute() else design
    history = raw.get("history")
    if history is not None and base is not None and not Path(history).is_absolute():
        history = str(base / history)
    return Settings(
        run=run, rule=rule, criterion=criterion, function=fn, design=design,
        n_initial=raw.get("n_initial"),
        initial_strategy=raw.get("initial_strategy", "latin-hypercube"),
        noise_sd=float(raw.get("noise_sd", 0.0)), history=history, noise=noise,
        cost=cost, cost_fit=cost_fit, bench=dict(raw.get("benchmark", {})),
    )


def load_config(path) -> Settings:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return parse_config(raw, base=path.parent)


def spec_to_toml(spec: CovarianceSpec) -> str:
    """Covariance block reusable in a configuration file."""
    return tomli_w.dumps({
        "kernel": "matern",
        "nu": spec.nu,
        "rho": list(spec.ranges),
        "sigma2": spec.variance,
        "jitter": spec.jitter,
    })
