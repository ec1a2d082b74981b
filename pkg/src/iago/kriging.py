"""Universal Kriging with exact or noisy observations.

The predictor at ``x`` solves the augmented system

    [[K + Σ_ε, P], [Pᵀ, 0]] [λ; μ] = [k(x); p(x)]

for the Kriging weights λ and Lagrange multipliers μ.  The mean is λᵀf_S
and the prediction-error variance is k(x,x) - λᵀk(x) - p(x)ᵀμ.  The system
is solved by block elimination on a Cholesky factor of K + Σ_ε and of the
Schur complement PᵀK⁻¹P.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize
from scipy.stats import qmc

from .covariance import (
    CovarianceSpec,
    NotPositiveDefiniteError,
    cholesky,
    covariance_matrix,
    cross_covariance,
)

__all__ = [
    "Design",
    "TrendBasis",
    "KrigingSystem",
    "Prediction",
    "SingularSystemError",
    "assemble_system",
    "negative_log_likelihood",
    "fit_covariance",
    "FitBounds",
]

VARIANCE_CLAMP = 1e-10


class SingularSystemError(np.linalg.LinAlgError):
    """The augmented Kriging system cannot be factorized."""


def _points(x, dim=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if dim in (None, 1) else x.reshape(1, -1)
    if dim is not None and x.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {x.shape[1]}")
    return x


@dataclass(frozen=True)
class Design:
    """Evaluation points, observed values and optional noise variances.

    ``noise_means`` are known additive noise means; they are subtracted from
    ``values`` wherever the observations enter a model.
    """

    points: np.ndarray
    values: np.ndarray
    noise_vars: np.ndarray | None = None
    noise_means: np.ndarray | None = None

    def __post_init__(self):
        pts = _points(self.points)
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if pts.shape[0] < 1:
            raise ValueError("a design needs at least one point")
        if pts.shape[0] != vals.shape[0]:
            raise ValueError(
                f"{pts.shape[0]} points but {vals.shape[0]} values"
            )
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)
        for name in ("noise_vars", "noise_means"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.broadcast_to(
                np.asarray(arr, dtype=float), vals.shape
            ).copy()
            object.__setattr__(self, name, arr)
        if self.noise_vars is not None and np.any(self.noise_vars < 0):
            raise ValueError("noise variances must be nonnegative")
        if not self.is_noisy:
            _, counts = np.unique(pts, axis=0, return_counts=True)
            if np.any(counts > 1):
                raise ValueError("exact designs need pairwise distinct points")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def is_noisy(self) -> bool:
        return self.noise_vars is not None and bool(np.any(self.noise_vars > 0))

    @property
    def centered_values(self) -> np.ndarray:
        if self.noise_means is None:
            return self.values
        return self.values - self.noise_means

    @property
    def noise_diagonal(self) -> np.ndarray:
        if self.noise_vars is None:
            return np.zeros(self.n)
        return self.noise_vars

    def append(self, x, y: float, noise_var: float | None = None,
               noise_mean: float | None = None) -> "Design":
        x = _points(x, self.dim)
        nv = None
        if self.noise_vars is not None or noise_var is not None:
            nv = np.append(self.noise_diagonal, 0.0 if noise_var is None else noise_var)
        nm = None
        if self.noise_means is not None or noise_mean is not None:
            old = np.zeros(self.n) if self.noise_means is None else self.noise_means
            nm = np.append(old, 0.0 if noise_mean is None else noise_mean)
        return Design(
            np.vstack([self.points, x]), np.append(self.values, y), nv, nm
        )

    def to_dict(self) -> dict:
        out = {"points": self.points.tolist(), "values": self.values.tolist()}
        if self.noise_vars is not None:
            out["noise_vars"] = self.noise_vars.tolist()
        if self.noise_means is not None:
            out["noise_means"] = self.noise_means.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Design":
        return cls(
            np.asarray(data["points"], dtype=float),
            data["values"],
            data.get("noise_vars"),
            data.get("noise_means"),
        )


@dataclass(frozen=True)
class TrendBasis:
    """Monomials of total degree ≤ ``degree`` in the factors."""

    dim: int
    degree: int = 0

    def __post_init__(self):
        if self.degree not in (0, 1, 2):
            raise ValueError("trend degree must be 0, 1 or 2")

    @property
    def exponents(self) -> list[tuple[int, ...]]:
        terms = []
        for deg in range(self.degree + 1):
            for combo in itertools.combinations_with_replacement(range(self.dim), deg):
                e = [0] * self.dim
                for c in combo:
                    e[c] += 1
                terms.append(tuple(e))
        return terms

    @property
    def size(self) -> int:
        return len(self.exponents)

    def evaluate(self, x) -> np.ndarray:
        x = _points(x, self.dim)
        cols = [np.prod(x ** np.asarray(e), axis=1) for e in self.exponents]
        return np.column_stack(cols)


@dataclass(frozen=True)
class Prediction:
    """Kriging mean, variance, weights (n, m) and multipliers (l, m)."""

    mean: np.ndarray
    variance: np.ndarray
    weights: np.ndarray
    multipliers: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


@dataclass(frozen=True, eq=False)
class KrigingSystem:
    """Factorized augmented Kriging system, reusable across predictions."""

    design: Design
    spec: CovarianceSpec
    trend: TrendBasis
    matrix: np.ndarray = field(repr=False)
    basis: np.ndarray = field(repr=False)
    chol: np.ndarray = field(repr=False)
    schur_chol: np.ndarray = field(repr=False)
    _mean_weights: np.ndarray = field(repr=False)
    _beta: np.ndarray = field(repr=False)

    @property
    def augmented(self) -> np.ndarray:
        """The (n+l) × (n+l) augmented matrix [[K+Σ_ε, P], [Pᵀ, 0]]."""
        n, l = self.basis.shape
        a = np.zeros((n + l, n + l))
        a[:n, :n] = self.matrix
        a[:n, n:] = self.basis
        a[n:, :n] = self.basis.T
        return a

    def _kinv(self, b):
        return linalg.cho_solve((self.chol, True), b)

    def weights(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (λ, μ, k(x)) for the points ``x``; λ is (n, m), μ is (l, m)."""
        x = _points(x, self.spec.dim)
        kx = cross_covariance(self.spec, self.design.points, x)
        px = self.trend.evaluate(x).T
        kinv_k = self._kinv(kx)
        rhs = self.basis.T @ kinv_k - px
        mu = linalg.cho_solve((self.schur_chol, True), rhs)
        lam = kinv_k - self._kinv(self.basis @ mu)
        return lam, mu, kx

    def predict(self, x, full: bool = False):
        """Kriging prediction at ``x``.

        Returns a :class:`Prediction` when ``full`` is true, otherwise the
        pair (mean, variance) of arrays.
        """
        x = _points(x, self.spec.dim)
        lam, mu, kx = self.weights(x)
        mean = lam.T @ self.design.centered_values
        px = self.trend.evaluate(x).T
        kxx = self.spec.variance + self.spec.jitter
        var = kxx - np.sum(lam * kx, axis=0) - np.sum(px * mu, axis=0)
        var = self._clamp(var)
        if full:
            return Prediction(mean, var, lam, mu)
        return mean, var

    def predict_mean(self, x) -> np.ndarray:
        x = _points(x, self.spec.dim)
        kx = cross_covariance(self.spec, self.design.points, x)
        return self.trend.evaluate(x) @ self._beta + kx.T @ self._mean_weights

    def _clamp(self, var):
        tol = VARIANCE_CLAMP * self.spec.variance
        return np.where(var < tol, np.maximum(var, 0.0), var)

    def posterior_covariance(self, a, b=None) -> np.ndarray:
        """Covariance of the prediction errors between point sets a and b."""
        a = _points(a, self.spec.dim)
        b = a if b is None else _points(b, self.spec.dim)
        lam_a, mu_a, _ = self.weights(a)
        kb = cross_covariance(self.spec, self.design.points, b)
        pb = self.trend.evaluate(b).T
        c = cross_covariance(self.spec, a, b) - lam_a.T @ kb - mu_a.T @ pb
        return c

    def with_values(self, values) -> "KrigingSystem":
        """Same factorization with new observed values (e.g. simulated anchors)."""
        design = replace(self.design, values=np.asarray(values, float), noise_means=None)
        mw, beta = _mean_coefficients(self.chol, self.schur_chol, self.basis,
                                      design.centered_values)
        return replace(self, design=design, _mean_weights=mw, _beta=beta)


def _mean_coefficients(chol, schur_chol, basis, values):
    kinv_f = linalg.cho_solve((chol, True), values)
    beta = linalg.cho_solve((schur_chol, True), basis.T @ kinv_f)
    w = linalg.cho_solve((chol, True), values - basis @ beta)
    return w, beta


def assemble_system(
    design: Design,
    spec: CovarianceSpec,
    trend: TrendBasis | None = None,
) -> KrigingSystem:
    """Assemble and factorize the augmented Kriging system for ``design``."""
    if trend is None:
        trend = TrendBasis(design.dim, 0)
    if design.dim != spec.dim or trend.dim != spec.dim:
        raise ValueError("design, covariance and trend dimensions differ")
    p = trend.evaluate(design.points)
    l = p.shape[1]
    if design.n < l:
        raise SingularSystemError(
            f"rank condition violated: {design.n} points for {l} trend functions"
        )
    if np.linalg.matrix_rank(p) < l:
        raise SingularSystemError("trend basis matrix P is rank deficient")
    k = covariance_matrix(spec, design.points, check=False)
    k = k + np.diag(design.noise_diagonal)
    try:
        chol = cholesky(k)
    except NotPositiveDefiniteError as exc:
        raise SingularSystemError(
            "covariance block K + Σ_ε is not positive definite"
        ) from exc
    kinv_p = linalg.cho_solve((chol, True), p)
    schur = p.T @ kinv_p
    try:
        schur_chol = np.linalg.cholesky(0.5 * (schur + schur.T))
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("Schur complement PᵀK⁻¹P is singular") from exc
    mw, beta = _mean_coefficients(chol, schur_chol, p, design.centered_values)
    return KrigingSystem(design, spec, trend, k, p, chol, schur_chol, mw, beta)


# -- likelihood ---------------------------------------------------------------

LIKELIHOOD_MODES = ("zero-mean", "restricted")


def negative_log_likelihood(
    spec: CovarianceSpec,
    design: Design,
    trend_mode: str = "restricted",
    trend: TrendBasis | None = None,
) -> float:
    """Negative log-likelihood of the observations under ``spec``.

    ``zero-mean`` is the plain Gaussian likelihood of f_S.  ``restricted``
    is the likelihood of the contrasts Wᵀf_S, where W is an orthonormal
    basis of the null space of Pᵀ.

    Raises :class:`NotPositiveDefiniteError` if the covariance is singular.
    """
    if trend_mode not in LIKELIHOOD_MODES:
        raise ValueError(f"trend_mode must be one of {LIKELIHOOD_MODES}")
    f = design.centered_values
    k = covariance_matrix(spec, design.points, check=False)
    k = k + np.diag(design.noise_diagonal)
    if trend_mode == "restricted":
        if trend is None:
            trend = TrendBasis(design.dim, 0)
        p = trend.evaluate(design.points)
        w = linalg.null_space(p.T)
        if w.shape[1] == 0:
            raise ValueError("no contrasts left: need more points than trend terms")
        k = w.T @ k @ w
        f = w.T @ f
    chol = cholesky(0.5 * (k + k.T))
    alpha = linalg.solve_triangular(chol, f, lower=True)
    m = f.shape[0]
    return float(
        0.5 * m * math.log(2 * math.pi)
        + np.sum(np.log(np.diag(chol)))
        + 0.5 * alpha @ alpha
    )


# -- fitting ------------------------------------------------------------------

@dataclass(frozen=True)
class FitBounds:
    """Search box for covariance parameters.

    ``ranges`` is either one (lo, hi) pair shared by all dimensions or a
    list of pairs, one per dimension.
    """

    variance: tuple[float, float]
    ranges: tuple | list
    nu: tuple[float, float] = (0.5, 5.0)

    def range_bounds(self, dim: int) -> list[tuple[float, float]]:
        r = self.ranges
        if len(r) == 2 and np.isscalar(r[0]):
            return [tuple(map(float, r))] * dim
        if len(r) != dim:
            raise ValueError("need one range bound per dimension")
        return [tuple(map(float, b)) for b in r]

    @classmethod
    def default_for(cls, design: Design, lower, upper) -> "FitBounds":
        """Data-driven defaults: variance around the sample spread, ranges
        between 1% and 200% of the box edge."""
        v = float(np.var(design.centered_values))
        v = v if v > 0 else 1.0
        edges = np.asarray(upper, float) - np.asarray(lower, float)
        return cls(
            variance=(1e-2 * v, 1e3 * v),
            ranges=[(0.01 * e, 2.0 * e) for e in edges],
        )


def fit_covariance(
    design: Design,
    bounds: FitBounds,
    mode: str = "REML",
    fixed: dict | None = None,
    nu: float = 2.5,
    trend: TrendBasis | None = None,
    n_starts: int = 8,
    seed: int = 0,
    jitter: float | None = None,
) -> CovarianceSpec:
    """Estimate covariance parameters by ML or REML.

    Multi-start Nelder-Mead over log-parameters within ``bounds``.  Keys of
    ``fixed`` ("variance", "ranges", "nu") are held at the given values.
    The default holds ν at ``nu``; pass ``fixed={}`` to search ``bounds.nu``.
    """
    mode = mode.upper()
    if mode not in ("ML", "REML"):
        raise ValueError("mode must be 'ML' or 'REML'")
    if design.n < 2:
        raise ValueError("fitting needs at least two observations")
    trend_mode = "restricted" if mode == "REML" else "zero-mean"
    if fixed is None:
        fixed = {"nu": nu}
    d = design.dim
    names: list[str] = ["variance"] + [f"range{j}" for j in range(d)] + ["nu"]
    lo = [bounds.variance[0]] + [b[0] for b in bounds.range_bounds(d)] + [bounds.nu[0]]
    hi = [bounds.variance[1]] + [b[1] for b in bounds.range_bounds(d)] + [bounds.nu[1]]
    lo, hi = np.log(np.asarray(lo, float)), np.log(np.asarray(hi, float))
    if np.any(hi < lo):
        raise ValueError("empty bounds")
    base = np.full(len(names), np.nan)
    if "variance" in fixed:
        base[0] = math.log(fixed["variance"])
    if "ranges" in fixed:
        base[1:1 + d] = np.log(np.broadcast_to(np.asarray(fixed["ranges"], float), (d,)))
    if "nu" in fixed:
        base[-1] = math.log(fixed["nu"])
    # zero-width bounds behave as fixed parameters
    pinned = np.isnan(base) & (hi - lo <= 0)
    base[pinned] = lo[pinned]
    free = np.isnan(base)

    def unpack(theta):
        full = base.copy()
        full[free] = theta
        e = np.exp(full)
        return CovarianceSpec(
            variance=e[0], ranges=tuple(e[1:1 + d]), nu=e[-1],
            jitter=None if jitter is None else jitter,
        )

    def objective(theta):
        try:
            return negative_log_likelihood(unpack(theta), design, trend_mode, trend)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError):
            return np.inf

    if not np.any(free):
        return unpack(np.empty(0))

    flo, fhi = lo[free], hi[free]
    starts = qmc.scale(
        qmc.LatinHypercube(d=int(free.sum()), seed=seed).random(n_starts), flo, fhi
    ) if np.all(fhi > flo) else np.tile(flo, (n_starts, 1))
    best_x, best_f = None, np.inf
    for x0 in starts:
        f0 = objective(x0)
        if not np.isfinite(f0):
            continue
        res = optimize.minimize(
            objective, x0, method="Nelder-Mead",
            bounds=list(zip(flo, fhi)),
            options={"xatol": 1e-6, "fatol": 1e-9, "maxiter": 2000},
        )
        if res.fun < best_f:
            best_x, best_f = res.x, res.fun
    if best_x is None:
        raise RuntimeError("covariance fit failed: every start was infeasible")
    return unpack(np.clip(best_x, flo, fhi))
