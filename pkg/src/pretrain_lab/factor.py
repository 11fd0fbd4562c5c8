"""Factor model x = B z + mu with linear-regression downstream y = beta^T z + nu.

Pretraining fits the loading matrix by eigen-truncation of the second-moment
matrix; the downstream step regresses y on the pretrained features
C x with C = B^T (B B^T + I)^{-1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from pretrain_lab.erm import ErmResult, OptConfig, truncated_ls
from pretrain_lab.errors import ParameterError, PreconditionError
from pretrain_lab.prob import estimate_tv, gaussian_density, gaussian_tv_shift
from pretrain_lab.rng import as_generator

DEFAULT_C1 = 500.0


@dataclass(frozen=True)
class FactorModel:
    B: np.ndarray
    D: float = np.inf

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        d, r = B.shape
        if d <= 1 or not 1 <= r < d:
            raise ParameterError(f"need d > 1 and 1 <= r < d, got d={d}, r={r}")
        if np.linalg.norm(B, 2) > self.D * (1 + 1e-12):
            raise ParameterError(f"spectral norm {np.linalg.norm(B, 2):.4g} exceeds bound D={self.D}")
        object.__setattr__(self, "B", B)

    @property
    def d(self) -> int:
        return self.B.shape[0]

    @property
    def r(self) -> int:
        return self.B.shape[1]

    def covariance(self) -> np.ndarray:
        return self.B @ self.B.T + np.eye(self.d)


@dataclass(frozen=True)
class RegressionBeta:
    beta: np.ndarray
    D: float = np.inf
    noise_std: float = 1.0

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if np.linalg.norm(beta) > self.D * (1 + 1e-12):
            raise ParameterError(f"||beta|| = {np.linalg.norm(beta):.4g} exceeds bound D={self.D}")
        if not self.noise_std > 0:
            raise ParameterError("noise_std must be positive")
        object.__setattr__(self, "beta", beta)


@dataclass
class FactorFitReport:
    B_hat: np.ndarray
    beta_hat: np.ndarray
    clamped_eigencount: int
    erm_method: str
    erm_flagged: bool = False


# -- sampling -------------------------------------------------------------

def sample_factor_unlabeled(model: FactorModel, m: int, rng) -> np.ndarray:
    gen = as_generator(rng)
    z = gen.standard_normal((m, model.r))
    mu = gen.standard_normal((m, model.d))
    return z @ model.B.T + mu


def sample_factor_labeled(model: FactorModel, beta: RegressionBeta, n: int, rng) -> np.ndarray:
    """Rows ``(x, y)`` sharing one latent z per row."""
    gen = as_generator(rng)
    z = gen.standard_normal((n, model.r))
    mu = gen.standard_normal((n, model.d))
    nu = beta.noise_std * gen.standard_normal(n)
    x = z @ model.B.T + mu
    y = z @ beta.beta + nu
    return np.column_stack([x, y])


# -- pretraining ----------------------------------------------------------

def _fix_signs(B: np.ndarray) -> np.ndarray:
    B = B.copy()
    for j in range(B.shape[1]):
        nz = np.flatnonzero(np.abs(B[:, j]) > 0)
        if nz.size and B[nz[0], j] < 0:
            B[:, j] = -B[:, j]
    return B


def mle_factor_from_covariance(sigma: np.ndarray, r: int) -> tuple[np.ndarray, int]:
    """Rank-r eigen-truncation of ``sigma - I``.

    Returns ``(B_hat, clamped)`` where ``clamped`` counts top-r eigenvalues
    below 1 (their columns are zero).
    """
    sigma = np.asarray(sigma, dtype=float)
    d = sigma.shape[0]
    if sigma.shape != (d, d):
        raise ParameterError("second-moment matrix must be square")
    if not 1 <= r < d:
        raise ParameterError(f"need 1 <= r < d, got r={r}, d={d}")
    w, v = np.linalg.eigh(0.5 * (sigma + sigma.T))
    order = np.argsort(w)[::-1][:r]
    top = w[order]
    clamped = int(np.sum(top < 1.0))
    B = v[:, order] * np.sqrt(np.clip(top - 1.0, 0.0, None))
    return _fix_signs(B), clamped


def second_moment(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ParameterError("unlabeled data must be a non-empty (m, d) array")
    return x.T @ x / x.shape[0]


def mle_factor(unlabeled: np.ndarray, r: int) -> np.ndarray:
    """Maximum-likelihood loading matrix (d x r), identifiable up to rotation."""
    return mle_factor_from_covariance(second_moment(unlabeled), r)[0]


def factor_nll(B: np.ndarray, sigma: np.ndarray) -> float:
    """log det(B B^T + I) + tr(sigma (B B^T + I)^{-1}); minimised by the MLE."""
    M = B @ B.T + np.eye(B.shape[0])
    _, logdet = np.linalg.slogdet(M)
    return float(logdet + np.trace(np.linalg.solve(M, sigma)))


# -- downstream -----------------------------------------------------------

def feature_map(B: np.ndarray) -> np.ndarray:
    """C = B^T (B B^T + I)^{-1}, computed as (I + B^T B)^{-1} B^T."""
    r = B.shape[1]
    return np.linalg.solve(np.eye(r) + B.T @ B, B.T)


def predictor_factor(B, beta, x) -> np.ndarray:
    """Bayes predictor beta^T B^T (B B^T + I)^{-1} x under (B, beta)."""
    w = feature_map(np.atleast_2d(B)).T @ np.atleast_1d(beta)
    return np.asarray(x, dtype=float) @ w


def _split(labeled):
    labeled = np.asarray(labeled, dtype=float)
    return labeled[:, :-1], labeled[:, -1]


def erm_beta_truncated(B_hat, labeled, L, D, opt_config: OptConfig | None = None, rng=None) -> ErmResult:
    x, y = _split(labeled)
    return truncated_ls(x @ feature_map(B_hat).T, y, L, D, opt_config, rng)


def erm_beta_ols(B_hat, labeled) -> ErmResult:
    """Least squares on the pretrained features; pseudo-inverse when singular."""
    x, y = _split(labeled)
    u = x @ feature_map(B_hat).T
    gram = u.T @ u
    r = gram.shape[0]
    rank = np.linalg.matrix_rank(gram)
    if rank < r:
        beta = np.linalg.pinv(gram) @ (u.T @ y)
        flagged, msg = True, f"feature Gram matrix has rank {rank} < {r}; used pseudo-inverse"
    else:
        beta = np.linalg.solve(gram, u.T @ y)
        flagged, msg = False, ""
    obj = float(np.mean((y - u @ beta) ** 2))
    return ErmResult(beta, obj, flagged, msg)


def factor_truncation_level(D: float, n: int) -> float:
    """(D^2 + 1)^3 log n, the truncation level for the factor-model ERM."""
    return (D * D + 1.0) ** 3 * math.log(n)


# -- risk -----------------------------------------------------------------

def excess_risk_linear(B_star, beta_star, w) -> float:
    """Squared-loss excess risk of the linear predictor x -> w^T x."""
    B_star = np.atleast_2d(B_star)
    v = feature_map(B_star).T @ np.atleast_1d(beta_star) - np.asarray(w, dtype=float)
    sigma = B_star @ B_star.T + np.eye(B_star.shape[0])
    return max(float(v @ sigma @ v), 0.0)


def excess_risk_factor_closed(B_star, beta_star, B_hat, beta_hat) -> float:
    w_hat = feature_map(np.atleast_2d(B_hat)).T @ np.atleast_1d(beta_hat)
    return excess_risk_linear(B_star, beta_star, w_hat)


def supervised_baseline_factor(labeled) -> np.ndarray:
    """Raw least squares of y on x; minimum-norm solution when n < d."""
    x, y = _split(labeled)
    return np.linalg.lstsq(x, y, rcond=None)[0]


def pipeline_factor(model: FactorModel, beta: RegressionBeta, m: int, n: int, rng, method="fast_rate_ols",
                    L=None, opt_config=None, labeled=None):
    """MLE on m unlabeled rows, then ERM on n labeled rows.

    Returns ``(report, excess_risk)``; pass ``labeled`` to reuse data shared
    with a baseline.
    """
    gen = as_generator(rng)
    if m < 1:
        raise ParameterError("pretraining needs m >= 1 unlabeled rows")
    x_unl = sample_factor_unlabeled(model, m, gen)
    if labeled is None:
        labeled = sample_factor_labeled(model, beta, n, gen)
    B_hat, clamped = mle_factor_from_covariance(second_moment(x_unl), model.r)
    if method == "fast_rate_ols":
        fit = erm_beta_ols(B_hat, labeled)
    elif method == "truncated_projected":
        D = beta.D if np.isfinite(beta.D) else max(np.linalg.norm(beta.beta), 1.0)
        L = L if L is not None else factor_truncation_level(D, labeled.shape[0])
        fit = erm_beta_truncated(B_hat, labeled, L, D, opt_config, gen)
    else:
        raise ParameterError(f"unknown erm_method {method!r}")
    report = FactorFitReport(B_hat, fit.beta, clamped, method, fit.flagged)
    return report, excess_risk_factor_closed(model.B, beta.beta, B_hat, fit.beta)


# -- alignment and informativeness ----------------------------------------

def align_rotation_factor(B, B_star) -> np.ndarray:
    """Orthogonal O minimising ||B O - B_star||_F (SVD of B^T B_star)."""
    u, _, vt = np.linalg.svd(np.atleast_2d(B).T @ np.atleast_2d(B_star))
    return u @ vt


def factor_kappa(B_star, c1: float = DEFAULT_C1) -> float:
    s = np.linalg.svd(np.atleast_2d(B_star), compute_uv=False)
    if s.min() <= 0:
        raise PreconditionError("B_star must have full column rank")
    return c1 * (s.max() + 1.0) ** 4 / s.min() ** 3


def joint_xz_covariance(B) -> np.ndarray:
    d, r = B.shape
    return np.block([[B @ B.T + np.eye(d), B], [B.T, np.eye(r)]])


def joint_tv_xz_closed_mc(B, B_star, count, rng):
    """E_z[d_TV(N(B z, I), N(B_star z, I))], z ~ N(0, I), by Monte-Carlo over z."""
    gen = as_generator(rng)
    z = gen.standard_normal((count, B.shape[1]))
    vals = gaussian_tv_shift(np.linalg.norm(z @ (B - B_star).T, axis=1))
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(count))


@dataclass
class InformativeReport:
    lhs: float
    rhs: float
    kappa_used: float
    holds: bool
    lhs_std_error: float = 0.0
    rhs_std_error: float = 0.0

    @property
    def ratio(self) -> float:
        """lhs / (rhs / kappa): the constant the data actually needs."""
        base = self.rhs / self.kappa_used if self.kappa_used else 0.0
        return self.lhs / base if base > 0 else (0.0 if self.lhs == 0 else math.inf)


def verify_informative_factor(B, B_star, mc_count: int, rng, c1: float = DEFAULT_C1) -> InformativeReport:
    """Check d_TV(P_{B O}(x,z), P_{B*}(x,z)) <= kappa * d_TV(P_B(x), P_{B*}(x)) by Monte-Carlo."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    B_star = np.atleast_2d(np.asarray(B_star, dtype=float))
    kappa = factor_kappa(B_star, c1)
    gen = as_generator(rng)
    O = align_rotation_factor(B, B_star)
    d, r = B.shape
    zeros = np.zeros(d + r)
    p_joint = gaussian_density(zeros, joint_xz_covariance(B_star), "factor-joint*")
    q_joint = gaussian_density(zeros, joint_xz_covariance(B @ O), "factor-joint")
    lhs = estimate_tv(p_joint, q_joint, None, mc_count, gen)
    p_x = gaussian_density(np.zeros(d), B_star @ B_star.T + np.eye(d), "factor-x*")
    q_x = gaussian_density(np.zeros(d), B @ B.T + np.eye(d), "factor-x")
    marg = estimate_tv(p_x, q_x, None, mc_count, gen)
    rhs = kappa * marg.value
    rhs_se = kappa * marg.std_error
    slack = 4.0 * math.hypot(lhs.std_error, rhs_se)
    return InformativeReport(lhs.value, rhs, kappa, lhs.value <= rhs + slack, lhs.std_error, rhs_se)
