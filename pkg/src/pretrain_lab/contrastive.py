"""Pairwise-logistic contrastive model with a linear representation f(x) = theta x.

Unlabeled data are triples (x, x', t) with P(t = 1 | x, x') =
sigmoid(f(x)^T f(x')); the downstream label is y = beta^T (f(x) + mu) + nu.
Inputs are uniform on the sphere of radius ``input_radius``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from pretrain_lab.erm import ErmResult, OptConfig, truncated_ls
from pretrain_lab.errors import NumericalError, ParameterError, PreconditionError
from pretrain_lab.losses import truncation_level
from pretrain_lab.prob import DivergenceEstimate, gaussian_tv_shift, hellinger_from_root_ratios
from pretrain_lab.rng import as_generator

# (1/2) sqrt((2 + e + 1/e) / (2 sqrt(2) - 2))
DEFAULT_C3 = 0.5 * math.sqrt((2.0 + math.e + math.exp(-1.0)) / (2.0 * math.sqrt(2.0) - 2.0))


@dataclass(frozen=True)
class ContrastiveModel:
    theta: np.ndarray
    input_radius: float = 1.0

    def __post_init__(self):
        theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        if np.linalg.norm(theta, 2) > 1.0 + 1e-12:
            raise ParameterError(f"spectral norm of theta is {np.linalg.norm(theta, 2):.6g} > 1")
        if not self.input_radius > 0:
            raise ParameterError("input_radius must be positive")
        object.__setattr__(self, "theta", theta)

    @property
    def r(self) -> int:
        return self.theta.shape[0]

    @property
    def d(self) -> int:
        return self.theta.shape[1]

    def features(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.theta.T


@dataclass(frozen=True)
class PairSample:
    x: np.ndarray
    x_prime: np.ndarray
    t: int


@dataclass
class PairBatch:
    """Columnar storage for m pair samples; iterates as PairSample records."""

    x: np.ndarray
    x_prime: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        if not np.all(np.isin(self.t, (-1, 1))):
            raise ParameterError("pair labels t must be -1 or +1")

    def __len__(self):
        return self.t.shape[0]

    def __iter__(self):
        for a, b, t in zip(self.x, self.x_prime, self.t):
            yield PairSample(a, b, int(t))

    def subset(self, idx) -> "PairBatch":
        return PairBatch(self.x[idx], self.x_prime[idx], self.t[idx])


def sample_sphere(count: int, d: int, rng, radius: float = 1.0) -> np.ndarray:
    g = as_generator(rng).standard_normal((count, d))
    return radius * g / np.linalg.norm(g, axis=1, keepdims=True)


def sample_pairs(model: ContrastiveModel, m: int, rng) -> PairBatch:
    gen = as_generator(rng)
    x = sample_sphere(m, model.d, gen, model.input_radius)
    xp = sample_sphere(m, model.d, gen, model.input_radius)
    s = np.sum(model.features(x) * model.features(xp), axis=1)
    t = np.where(gen.uniform(size=m) < expit(s), 1, -1)
    return PairBatch(x, xp, t)


def sample_contrastive_labeled(model: ContrastiveModel, beta, n: int, rng) -> np.ndarray:
    """Rows ``(x, y)`` with y = beta^T (theta x + mu) + nu, mu ~ N(0, I_r), nu ~ N(0, 1)."""
    gen = as_generator(rng)
    beta = np.atleast_1d(np.asarray(getattr(beta, "beta", beta), dtype=float))
    x = sample_sphere(n, model.d, gen, model.input_radius)
    z = model.features(x) + gen.standard_normal((n, model.r))
    y = z @ beta + gen.standard_normal(n)
    return np.column_stack([x, y])


# -- likelihood -----------------------------------------------------------

def pair_loglik(theta, pairs: PairBatch) -> float:
    """Mean log-likelihood of the pair labels under theta."""
    theta = np.atleast_2d(theta)
    s = np.sum((pairs.x @ theta.T) * (pairs.x_prime @ theta.T), axis=1)
    return float(np.mean(log_expit(pairs.t * s)))


def pair_loglik_grad(theta, pairs: PairBatch) -> np.ndarray:
    """Gradient of :func:`pair_loglik`: theta (G + G^T) / m with G = sum_i c_i x_i x'_i^T."""
    theta = np.atleast_2d(theta)
    s = np.sum((pairs.x @ theta.T) * (pairs.x_prime @ theta.T), axis=1)
    c = pairs.t * expit(-pairs.t * s)
    G = pairs.x.T @ (c[:, None] * pairs.x_prime)
    return theta @ (G + G.T) / len(pairs)


def finite_difference_grad(theta, pairs: PairBatch, h: float = 1e-6) -> np.ndarray:
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    out = np.zeros_like(theta)
    for idx in np.ndindex(theta.shape):
        up, dn = theta.copy(), theta.copy()
        up[idx] += h
        dn[idx] -= h
        out[idx] = (pair_loglik(up, pairs) - pair_loglik(dn, pairs)) / (2 * h)
    return out


def gradient_relative_error(theta, pairs: PairBatch) -> float:
    g = pair_loglik_grad(theta, pairs)
    fd = finite_difference_grad(theta, pairs)
    scale = max(np.linalg.norm(g), np.linalg.norm(fd), 1e-8)
    return float(np.linalg.norm(g - fd) / scale)


def project_spectral(theta) -> np.ndarray:
    """Euclidean projection onto {||theta||_2 <= 1}: clip singular values at 1."""
    u, s, vt = np.linalg.svd(theta, full_matrices=False)
    if s.size == 0 or s[0] <= 1.0:
        return theta
    return (u * np.minimum(s, 1.0)) @ vt


def moment_init(pairs: PairBatch, r: int) -> np.ndarray:
    """Rank-r start from E[t x x'^T] ~ E[x x^T] A E[x x^T] / 2 with A = theta^T theta."""
    d = pairs.x.shape[1]
    sq_radius = float(np.mean(np.sum(pairs.x ** 2, axis=1)))
    T = pairs.x.T @ (pairs.t[:, None] * pairs.x_prime) / len(pairs)
    A = (T + T.T) * (d / sq_radius) ** 2
    w, v = np.linalg.eigh(A)
    order = np.argsort(w)[::-1][:r]
    theta = (v[:, order] * np.sqrt(np.clip(w[order], 0.0, None))).T
    return project_spectral(theta)


@dataclass(frozen=True)
class AscentConfig:
    iterations: int = 2000
    restarts: int = 5
    tol: float = 1e-12
    grad_check_pairs: int = 512
    grad_check_tol: float = 1e-5


@dataclass
class ContrastiveFit:
    theta: np.ndarray
    loglik: float
    iterations: int
    flagged: bool
    path: list


def _ascend(theta, pairs: PairBatch, cfg: AscentConfig, record_path=False):
    f = pair_loglik(theta, pairs)
    step = 1.0
    path = [theta.copy()] if record_path else []
    converged = False
    it = 0
    for it in range(1, cfg.iterations + 1):
        g = pair_loglik_grad(theta, pairs)
        while True:
            cand = project_spectral(theta + step * g)
            fc = pair_loglik(cand, pairs)
            # Armijo condition for the projected step
            if fc >= f + 1e-4 * np.sum(g * (cand - theta)) or step < 1e-12:
                break
            step *= 0.5
        gain = fc - f
        theta, f = cand, fc
        if record_path:
            path.append(theta.copy())
        step *= 2.0
        if abs(gain) <= cfg.tol * (1.0 + abs(f)):
            converged = True
            break
    return theta, f, it, converged, path


def mle_contrastive(pairs: PairBatch, r: int, d: int, opt_config: AscentConfig | None = None, rng=0,
                    init=None, record_path=False) -> ContrastiveFit:
    """Projected gradient ascent on the pair log-likelihood over ||theta||_2 <= 1.

    The first start is the moment estimate (or ``init``), the rest are
    random; the best final log-likelihood wins. The analytic gradient is
    checked against central differences at the first start.
    """
    cfg = opt_config or AscentConfig()
    if len(pairs) < 1:
        raise ParameterError("need at least one pair")
    if pairs.x.shape[1] != d:
        raise ParameterError(f"pairs have dimension {pairs.x.shape[1]}, expected d={d}")
    gen = as_generator(rng)
    starts = [project_spectral(np.atleast_2d(np.asarray(init, dtype=float))) if init is not None
              else moment_init(pairs, r)]
    for _ in range(cfg.restarts - 1):
        starts.append(project_spectral(gen.standard_normal((r, d)) / math.sqrt(d)))

    check = pairs.subset(np.arange(min(len(pairs), cfg.grad_check_pairs)))
    err = gradient_relative_error(starts[0], check)
    if err > cfg.grad_check_tol:
        raise NumericalError(f"analytic gradient disagrees with finite differences (rel. error {err:.3g})")

    best = None
    for k, start in enumerate(starts):
        theta, f, it, conv, path = _ascend(start, pairs, cfg, record_path and k == 0)
        if best is None or f > best.loglik:
            best = ContrastiveFit(theta, f, it, not conv, path)
    return best


# -- downstream -----------------------------------------------------------

def predictor_contrastive(theta, beta, x) -> np.ndarray:
    """Bayes predictor beta^T theta x."""
    return np.asarray(x, dtype=float) @ (np.atleast_2d(theta).T @ np.atleast_1d(beta))


def erm_beta_contrastive(theta_hat, labeled, L, D, opt_config: OptConfig | None = None, rng=None) -> ErmResult:
    labeled = np.asarray(labeled, dtype=float)
    x, y = labeled[:, :-1], labeled[:, -1]
    return truncated_ls(x @ np.atleast_2d(theta_hat).T, y, L, D, opt_config, rng)


def input_second_moment(d: int, radius: float = 1.0) -> np.ndarray:
    """E[x x^T] = radius^2 / d * I for x uniform on the sphere."""
    return np.eye(d) * radius * radius / d


def excess_risk_contrastive_closed(theta_star, beta_star, theta_hat, beta_hat, radius: float = 1.0) -> float:
    """E_x[(beta_hat^T theta_hat x - beta*^T theta* x)^2], exact for spherical inputs."""
    w = np.atleast_2d(theta_hat).T @ np.atleast_1d(beta_hat) - np.atleast_2d(theta_star).T @ np.atleast_1d(beta_star)
    return float(w @ w) * radius * radius / w.size


# -- alignment, Hellinger, informativeness --------------------------------

def align_orthogonal_contrastive(theta_hat, theta_star, mc_count: int, rng, radius: float = 1.0) -> np.ndarray:
    """O = V1 U1^T from the SVD U1 S V1^T of a Monte-Carlo estimate of E[f_hat(x) f*(x)^T]."""
    theta_hat = np.atleast_2d(theta_hat)
    theta_star = np.atleast_2d(theta_star)
    x = sample_sphere(mc_count, theta_hat.shape[1], rng, radius)
    M = (x @ theta_hat.T).T @ (x @ theta_star.T) / mc_count
    u, s, vt = np.linalg.svd(M)
    if s.size and s[-1] <= 1e-12 * max(s[0], 1e-300):
        warnings.warn("cross second-moment matrix is rank deficient; alignment is not unique", RuntimeWarning)
    return vt.T @ u.T


def hellinger_pairs(theta, theta_star, mc_count: int, rng, radius: float = 1.0) -> DivergenceEstimate:
    """Hellinger distance between the (x, x', t) laws under theta and theta*.

    The (x, x') marginal is shared, so only the conditional of t matters; the
    sum over t in {-1, +1} is done exactly for each Monte-Carlo pair.
    """
    theta = np.atleast_2d(theta)
    theta_star = np.atleast_2d(theta_star)
    gen = as_generator(rng)
    d = theta_star.shape[1]
    x = sample_sphere(mc_count, d, gen, radius)
    xp = sample_sphere(mc_count, d, gen, radius)
    s = np.sum((x @ theta.T) * (xp @ theta.T), axis=1)
    s_star = np.sum((x @ theta_star.T) * (xp @ theta_star.T), axis=1)
    affinity = np.sqrt(expit(s) * expit(s_star)) + np.sqrt(expit(-s) * expit(-s_star))
    return hellinger_from_root_ratios(affinity)


def hellinger_pairs_exact_1d(theta: float, theta_star: float, radius: float = 1.0) -> float:
    """Exact Hellinger distance for d = r = 1 (the sphere is the two points +-radius)."""
    aff = 0.0
    for x in (-radius, radius):
        for xp in (-radius, radius):
            s, s_star = theta * theta * x * xp, theta_star * theta_star * x * xp
            aff += 0.25 * (math.sqrt(expit(s) * expit(s_star)) + math.sqrt(expit(-s) * expit(-s_star)))
    return math.sqrt(max(0.0, 1.0 - aff))


def contrastive_kappa(theta_star, c3: float = DEFAULT_C3, radius: float = 1.0) -> float:
    theta_star = np.atleast_2d(theta_star)
    S = theta_star @ input_second_moment(theta_star.shape[1], radius) @ theta_star.T
    smin = float(np.linalg.eigvalsh(S)[0])
    if smin <= 1e-14:
        raise PreconditionError("E[f*(x) f*(x)^T] is singular")
    return c3 / math.sqrt(smin)


@dataclass
class WeakInformativeReport:
    lhs: float
    rhs: float
    kappa_used: float
    holds: bool
    hellinger: float
    lhs_std_error: float = 0.0
    rhs_std_error: float = 0.0

    @property
    def ratio(self) -> float:
        return self.lhs / self.hellinger if self.hellinger > 0 else (0.0 if self.lhs == 0 else math.inf)


def verify_weakly_informative_contrastive(theta, theta_star, beta_star, mc_count: int, rng,
                                          c3: float = DEFAULT_C3, radius: float = 1.0) -> WeakInformativeReport:
    """Check d_TV(P_{theta, O^T beta*}(x, y), P_{theta*, beta*}(x, y)) <= kappa * H(pairs).

    Both laws share the x-marginal and y | x is Gaussian with the same
    variance ||beta*||^2 + 1, so the TV is a Monte-Carlo average over x of a
    closed-form conditional TV.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    theta_star = np.atleast_2d(np.asarray(theta_star, dtype=float))
    beta_star = np.atleast_1d(np.asarray(getattr(beta_star, "beta", beta_star), dtype=float))
    kappa = contrastive_kappa(theta_star, c3, radius)
    gen = as_generator(rng)
    O = align_orthogonal_contrastive(theta, theta_star, mc_count, gen, radius)
    x = sample_sphere(mc_count, theta.shape[1], gen, radius)
    gap = x @ (theta.T @ (O.T @ beta_star) - theta_star.T @ beta_star)
    sd = math.sqrt(beta_star @ beta_star + 1.0)
    vals = gaussian_tv_shift(np.abs(gap) / sd)
    lhs = float(vals.mean())
    lhs_se = float(vals.std(ddof=1) / math.sqrt(mc_count))
    h = hellinger_pairs(theta, theta_star, mc_count, gen, radius)
    rhs, rhs_se = kappa * h.value, kappa * h.std_error
    holds = lhs <= rhs + 4.0 * math.hypot(lhs_se, rhs_se)
    return WeakInformativeReport(lhs, rhs, kappa, bool(holds), h.value, lhs_se, rhs_se)


# -- pipeline -------------------------------------------------------------

@dataclass
class ContrastivePipelineResult:
    theta_hat: np.ndarray
    beta_hat: np.ndarray
    excess_risk: float
    hellinger: DivergenceEstimate | None
    flagged: bool


def pretrain_contrastive(model: ContrastiveModel, m: int, rng, opt_config: AscentConfig | None = None) -> ContrastiveFit:
    if m < 1:
        raise ParameterError("pretraining needs m >= 1 pairs")
    gen = as_generator(rng)
    pairs = sample_pairs(model, m, gen)
    return mle_contrastive(pairs, model.r, model.d, opt_config, gen)


def downstream_contrastive(model: ContrastiveModel, beta_star, D: float, theta_hat, labeled, L=None,
                           opt_config: OptConfig | None = None, rng=None):
    n = labeled.shape[0]
    L = L if L is not None else truncation_level(D, max(n, 2))
    fit = erm_beta_contrastive(theta_hat, labeled, L, D, opt_config, rng)
    risk = excess_risk_contrastive_closed(model.theta, beta_star, theta_hat, fit.beta, model.input_radius)
    return fit, risk


def pipeline_contrastive(model: ContrastiveModel, beta_star, m: int, n: int, rng, D: float | None = None,
                         L=None, ascent: AscentConfig | None = None, opt_config: OptConfig | None = None,
                         hellinger_count: int = 0) -> ContrastivePipelineResult:
    gen = as_generator(rng)
    beta_star = np.atleast_1d(np.asarray(getattr(beta_star, "beta", beta_star), dtype=float))
    D = D if D is not None else max(float(np.linalg.norm(beta_star)), 1.0)
    pre = pretrain_contrastive(model, m, gen, ascent)
    labeled = sample_contrastive_labeled(model, beta_star, n, gen)
    fit, risk = downstream_contrastive(model, beta_star, D, pre.theta, labeled, L, opt_config, gen)
    h = hellinger_pairs(pre.theta, model.theta, hellinger_count, gen, model.input_radius) if hellinger_count else None
    return ContrastivePipelineResult(pre.theta, fit.beta, risk, h, pre.flagged or fit.flagged)


def supervised_baseline_contrastive(labeled) -> np.ndarray:
    """Least squares of y on raw x (minimum-norm when n < d)."""
    labeled = np.asarray(labeled, dtype=float)
    return np.linalg.lstsq(labeled[:, :-1], labeled[:, -1], rcond=None)[0]


def excess_risk_linear_contrastive(theta_star, beta_star, w, radius: float = 1.0) -> float:
    v = np.asarray(w, dtype=float) - np.atleast_2d(theta_star).T @ np.atleast_1d(beta_star)
    return float(v @ v) * radius * radius / v.size
