"""Stationary Matérn covariances with per-dimension ranges.

The kernel is parametrized as

    k(h) = σ² / (2^(ν-1) Γ(ν)) · (2√ν h/ρ)^ν · K_ν(2√ν h/ρ)

where K_ν is the modified Bessel function of the second kind.  Anisotropy
is handled by folding the ranges into the lag,
h = sqrt(Σ_d ((x_d - y_d)/ρ_d)²), and evaluating the kernel at unit range.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import numpy as np
from scipy import special

__all__ = [
    "CovarianceSpec",
    "NotPositiveDefiniteError",
    "matern",
    "scaled_distance",
    "covariance",
    "cross_covariance",
    "covariance_matrix",
    "cholesky",
    "cholesky_with_escalation",
]

DEFAULT_RELATIVE_JITTER = 1e-10


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a covariance matrix fails its Cholesky factorization."""


@dataclass(frozen=True)
class CovarianceSpec:
    """Matérn covariance parameters.

    Parameters
    ----------
    variance : float
        Process variance σ², so that k(0) = σ².
    ranges : sequence of float
        One correlation range ρ_d per input dimension.
    nu : float
        Regularity ν.
    jitter : float, optional
        Absolute diagonal inflation.  Defaults to 1e-10·σ².
    """

    variance: float
    ranges: tuple[float, ...]
    nu: float = 2.5
    jitter: float | None = field(default=None)

    def __post_init__(self):
        ranges = tuple(float(r) for r in np.atleast_1d(self.ranges))
        object.__setattr__(self, "ranges", ranges)
        object.__setattr__(self, "variance", float(self.variance))
        object.__setattr__(self, "nu", float(self.nu))
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")
        if len(ranges) == 0 or not all(r > 0 for r in ranges):
            raise ValueError(f"ranges must be positive, got {ranges}")
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if self.jitter is None:
            object.__setattr__(
                self, "jitter", DEFAULT_RELATIVE_JITTER * self.variance
            )
        else:
            object.__setattr__(self, "jitter", float(self.jitter))
        if self.jitter < 0:
            raise ValueError(f"jitter must be nonnegative, got {self.jitter}")

    @property
    def dim(self) -> int:
        return len(self.ranges)

    def with_jitter(self, jitter: float) -> "CovarianceSpec":
        return replace(self, jitter=jitter)

    def to_dict(self) -> dict:
        return {
            "kernel": "matern",
            "sigma2": self.variance,
            "rho": list(self.ranges),
            "nu": self.nu,
            "jitter": self.jitter,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CovarianceSpec":
        kernel = data.get("kernel", "matern")
        if kernel != "matern":
            raise ValueError(f"unsupported kernel {kernel!r}")
        return cls(
            variance=data["sigma2"],
            ranges=tuple(data["rho"]),
            nu=data.get("nu", 2.5),
            jitter=data.get("jitter"),
        )


def _half_integer_order(nu: float) -> int | None:
    for p in (0, 1, 2):
        if nu == p + 0.5:
            return p
    return None


def matern(h, nu: float, rho: float = 1.0, variance: float = 1.0):
    """Matérn covariance at lag(s) ``h``.

    Closed forms are used for ν ∈ {1/2, 3/2, 5/2}; other regularities go
    through ``scipy.special.kve``.  The value at h = 0 is exactly σ².
    """
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu}")
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if not variance > 0:
        raise ValueError(f"variance must be positive, got {variance}")
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("lags must be nonnegative")
    z = 2.0 * np.sqrt(nu) * h / rho
    p = _half_integer_order(nu)
    if p == 0:
        k = np.exp(-z)
    elif p == 1:
        k = (1.0 + z) * np.exp(-z)
    elif p == 2:
        k = (1.0 + z + z * z / 3.0) * np.exp(-z)
    else:
        k = np.ones_like(z)
        kv = np.full_like(z, np.inf)
        kv[z > 0] = special.kve(nu, z[z > 0])
        # K_ν overflows only at lags so small that the value is 1 to machine precision
        pos = np.isfinite(kv)
        zp = z[pos]
        # log form avoids overflow of z^ν and underflow of K_ν
        logk = (
            (1.0 - nu) * np.log(2.0)
            - special.gammaln(nu)
            + nu * np.log(zp)
            + np.log(kv[pos])
            - zp
        )
        k[pos] = np.minimum(np.exp(logk), 1.0)
    k = variance * k
    return k if k.ndim else float(k)


def _as_points(x, dim: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if dim == 1 or dim is None else x.reshape(1, -1)
    if dim is not None and x.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {x.shape[1]}")
    return x


def scaled_distance(spec: CovarianceSpec, x, y) -> np.ndarray:
    """Pairwise range-scaled distances between two point sets."""
    x = _as_points(x, spec.dim) / np.asarray(spec.ranges)
    y = _as_points(y, spec.dim) / np.asarray(spec.ranges)
    d2 = np.zeros((x.shape[0], y.shape[0]))
    for j in range(spec.dim):
        d2 += (x[:, j, None] - y[None, :, j]) ** 2
    return np.sqrt(d2)


def covariance(spec: CovarianceSpec, x, y) -> float:
    """Covariance between two single points (no jitter)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != (spec.dim,) or y.shape != (spec.dim,):
        raise ValueError(
            f"points must have dimension {spec.dim}, got {x.shape} and {y.shape}"
        )
    h = float(np.sqrt(np.sum(((x - y) / np.asarray(spec.ranges)) ** 2)))
    return matern(h, spec.nu, 1.0, spec.variance)


def cross_covariance(spec: CovarianceSpec, x, y) -> np.ndarray:
    """Covariance block between point sets ``x`` (m, d) and ``y`` (p, d).

    Coincident points receive the jitter, so the jitter acts as a tiny
    nugget of the model and Kriging stays exactly interpolating.
    """
    h = scaled_distance(spec, x, y)
    k = matern(h, spec.nu, 1.0, spec.variance)
    if spec.jitter > 0:
        k = np.where(h == 0.0, k + spec.jitter, k)
    return k


def covariance_matrix(spec: CovarianceSpec, points, check: bool = True) -> np.ndarray:
    """Covariance matrix of ``points`` including jitter on the diagonal.

    With ``check=True`` a Cholesky factorization is attempted and
    :class:`NotPositiveDefiniteError` is raised if it fails.
    """
    points = _as_points(points, spec.dim)
    if points.shape[0] == 0:
        raise ValueError("need at least one point")
    h = scaled_distance(spec, points, points)
    k = matern(h, spec.nu, 1.0, spec.variance)
    k = 0.5 * (k + k.T)
    k[np.diag_indices_from(k)] = spec.variance + spec.jitter
    if check:
        cholesky(k)
    return k


def cholesky(k: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, raising :class:`NotPositiveDefiniteError`."""
    try:
        return np.linalg.cholesky(k)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            "covariance matrix is not positive definite "
            "(duplicated points or degenerate parameters?)"
        ) from exc


def cholesky_with_escalation(
    k: np.ndarray,
    variance: float,
    start: float,
    limit: float = 1e-6,
    factor: float = 10.0,
) -> tuple[np.ndarray, float]:
    """Cholesky factor of ``k``, adding diagonal jitter until it succeeds.

    ``start`` is the jitter already present in ``k``.  Extra jitter grows by
    ``factor`` up to ``limit``·variance.  Returns (L, total jitter).
    """
    extra = 0.0
    jitter = max(start, DEFAULT_RELATIVE_JITTER * variance)
    while True:
        try:
            kk = k if extra == 0.0 else k + extra * np.eye(k.shape[0])
            return np.linalg.cholesky(kk), start + extra
        except np.linalg.LinAlgError:
            jitter *= factor
            if jitter > limit * variance * (1 + 1e-12):
                raise NotPositiveDefiniteError(
                    f"Cholesky failed even with jitter {limit}·σ²"
                ) from None
            extra = jitter - start
