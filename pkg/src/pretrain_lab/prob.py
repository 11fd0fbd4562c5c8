"""Gaussian sampling, Monte-Carlo divergence estimators and log-log slope fits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from pretrain_lab.errors import NumericalError, ParameterError
from pretrain_lab.rng import as_generator

SYM_TOL = 1e-12
EIG_TOL = 1e-10
ROUNDOFF = 1e-12


@dataclass(frozen=True)
class MvnParams:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ParameterError(f"covariance shape {cov.shape} does not match mean length {mean.size}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > SYM_TOL:
            raise ParameterError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def factor(self) -> np.ndarray:
        """Symmetric square root ``S`` with ``S @ S.T == covariance``.

        Eigenvalues in ``[-EIG_TOL, 0)`` are clamped to zero so rank-deficient
        covariances are accepted.
        """
        w, v = np.linalg.eigh(self.covariance)
        if w.size and w.min() < -EIG_TOL:
            raise ParameterError(f"covariance has eigenvalue {w.min():.3g} < -{EIG_TOL}")
        return v * np.sqrt(np.clip(w, 0.0, None))


def sample_mvn(params: MvnParams, count: int, rng) -> np.ndarray:
    """Draw ``count`` rows from ``N(mean, covariance)``."""
    gen = as_generator(rng)
    root = params.factor()
    z = gen.standard_normal((count, params.dim))
    return params.mean + z @ root.T


def gaussian_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log-density of a non-degenerate Gaussian evaluated row-wise."""
    x = np.atleast_2d(x)
    chol = np.linalg.cholesky(cov)
    sol = np.linalg.solve(chol, (x - mean).T)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (np.sum(sol * sol, axis=0) + logdet + x.shape[1] * np.log(2 * np.pi))


@dataclass
class DensityEvaluator:
    """Named log-density together with the parameters that define it.

    ``logpdf`` maps an ``(N, dim)`` array to ``N`` log-densities and
    ``sampler(count, rng)`` (optional) draws from the same law.
    """

    name: str
    logpdf: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)
    sampler: Callable | None = None

    def sample(self, count, rng):
        if self.sampler is None:
            raise ParameterError(f"density {self.name!r} has no sampler")
        return self.sampler(count, rng)


def gaussian_density(mean, cov, name="gaussian") -> DensityEvaluator:
    params = MvnParams(mean, cov)
    return DensityEvaluator(
        name=name,
        logpdf=lambda x: gaussian_logpdf(x, params.mean, params.covariance),
        params={"mean": params.mean, "covariance": params.covariance},
        sampler=lambda count, rng: sample_mvn(params, count, rng),
    )


@dataclass(frozen=True)
class DivergenceEstimate:
    """Monte-Carlo divergence estimate.

    For Hellinger estimates ``squared``/``squared_std_error`` carry H^2, the
    quantity the estimator is unbiased for.
    """

    value: float
    std_error: float
    sample_count: int
    squared: float | None = None
    squared_std_error: float | None = None


def _log_ratios(p, q, sampler_p, count, rng):
    x = sampler_p(count, rng) if sampler_p is not None else p.sample(count, rng)
    log_ratio = q.logpdf(x) - p.logpdf(x)
    bad = ~np.isfinite(log_ratio) & ~(log_ratio == -np.inf)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise NumericalError(f"density ratio q/p is not finite at sample {i}", point=x[i])
    return log_ratio


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    n = values.size
    mean = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return mean, se


def estimate_tv(p: DensityEvaluator, q: DensityEvaluator, sampler_p=None, count=100_000, rng=0) -> DivergenceEstimate:
    """Estimate d_TV(p, q) as E_p[(1 - q/p)_+] from draws of p.

    A ratio of ``+inf`` (q > 0 where p = 0 at a sampled point) cannot occur
    for samples drawn from p and is reported as a numerical error, as is NaN.
    Log-ratios within ``ROUNDOFF`` of zero are treated as zero, so equal
    densities evaluated through different parametrizations give exactly 0.
    """
    log_ratio = _log_ratios(p, q, sampler_p, count, rng)
    log_ratio = np.where(np.abs(log_ratio) < ROUNDOFF, 0.0, log_ratio)
    vals = np.clip(1.0 - np.exp(np.minimum(log_ratio, 0.0)), 0.0, 1.0)
    mean, se = _mean_se(vals)
    return DivergenceEstimate(min(max(mean, 0.0), 1.0), se, int(count))


def hellinger_from_root_ratios(root_ratio: np.ndarray) -> DivergenceEstimate:
    """Hellinger distance from samples of sqrt(q/p) under p (delta-method error)."""
    mean, se = _mean_se(root_ratio)
    h2 = 1.0 - mean
    h = float(np.sqrt(min(max(h2, 0.0), 1.0)))
    if h > 0:
        h_se = se / (2.0 * h)
    else:
        h_se = float(np.sqrt(se))
    return DivergenceEstimate(h, h_se, int(root_ratio.size), squared=h2, squared_std_error=se)


def estimate_hellinger(p: DensityEvaluator, q: DensityEvaluator, sampler_p=None, count=100_000, rng=0) -> DivergenceEstimate:
    """Estimate H(p, q) = sqrt(1 - E_p[sqrt(q/p)]), clamping a negative radicand to 0."""
    log_ratio = _log_ratios(p, q, sampler_p, count, rng)
    log_ratio = np.where(np.abs(log_ratio) < ROUNDOFF, 0.0, log_ratio)
    return hellinger_from_root_ratios(np.exp(0.5 * log_ratio))


def gaussian_tv_closed(mu1, mu2) -> float:
    """Exact TV between N(mu1, I) and N(mu2, I): 2*Phi(|mu1 - mu2| / 2) - 1."""
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=float))
    if mu1.shape != mu2.shape:
        raise ParameterError(f"dimension mismatch: {mu1.shape} vs {mu2.shape}")
    delta = float(np.linalg.norm(mu1 - mu2))
    return float(special.erf(delta / (2.0 * np.sqrt(2.0))))


def gaussian_tv_shift(delta) -> np.ndarray:
    """Vectorised 2*Phi(delta/2) - 1 for an array of mean-shift norms."""
    return special.erf(np.asarray(delta, dtype=float) / (2.0 * np.sqrt(2.0)))


def fit_loglog_slope(points) -> tuple[float, float]:
    """OLS slope of log(y) on log(x) and its standard error."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise ValueError("need at least 3 (x, y) points")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("all coordinates must be positive and finite")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    xc = lx - lx.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise ValueError("x values must not all be equal")
    slope = float(xc @ (ly - ly.mean()) / sxx)
    resid = ly - ly.mean() - slope * xc
    dof = lx.size - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    return slope, float(np.sqrt(s2 / sxx))
