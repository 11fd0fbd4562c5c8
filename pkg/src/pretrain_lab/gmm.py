"""Equal-weight isotropic Gaussian mixture with per-cluster noisy binary labels.

Pretraining fits the centers by EM (means only, identity covariances, equal
weights); the downstream step picks one of the 2^K cluster labelings by
empirical 0-1 risk.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from pretrain_lab.errors import ParameterError, PreconditionError
from pretrain_lab.losses import LossSpec, RiskEstimate, excess_risk_mc
from pretrain_lab.prob import DensityEvaluator, estimate_tv, gaussian_tv_closed
from pretrain_lab.rng import as_generator

SEPARATION_FACTOR = 100.0
INFORMATIVE_CONSTANT = 500.0
EXHAUSTIVE_MAX_K = 12
EXACT_MATCH_MAX_K = 8


def _log_k(K: int) -> float:
    return math.log(K) if K > 1 else 0.0


@dataclass(frozen=True)
class GmmModel:
    centers: np.ndarray
    D: float = np.inf

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if c.shape[0] < 1:
            raise ParameterError("need at least one center")
        K, d = c.shape
        if K > 1 and np.isfinite(self.D):
            bound = self.D * math.sqrt(d * _log_k(K))
            worst = np.linalg.norm(c, axis=1).max()
            if worst > bound * (1 + 1e-12):
                raise ParameterError(f"center norm {worst:.4g} exceeds D*sqrt(d log K) = {bound:.4g}")
        object.__setattr__(self, "centers", c)

    @property
    def K(self) -> int:
        return self.centers.shape[0]

    @property
    def d(self) -> int:
        return self.centers.shape[1]


@dataclass(frozen=True)
class LabelerPsi:
    bits: tuple
    eps: float = 0.0

    def __post_init__(self):
        bits = tuple(int(b) for b in np.atleast_1d(self.bits))
        if any(b not in (0, 1) for b in bits):
            raise ParameterError("labeler bits must be 0 or 1")
        if not 0.0 <= self.eps < 0.5:
            raise ParameterError("label noise eps must lie in [0, 1/2)")
        object.__setattr__(self, "bits", bits)

    def prob_one(self) -> np.ndarray:
        """P(y = 1 | z = i) for each cluster."""
        b = np.asarray(self.bits, dtype=float)
        return b * (1.0 - self.eps) + (1.0 - b) * self.eps


# -- sampling -------------------------------------------------------------

def _sample(model: GmmModel, count: int, gen):
    z = gen.integers(0, model.K, size=count)
    x = model.centers[z] + gen.standard_normal((count, model.d))
    return x, z


def sample_gmm_unlabeled(model: GmmModel, m: int, rng) -> np.ndarray:
    return _sample(model, m, as_generator(rng))[0]


def sample_gmm_labeled(model: GmmModel, psi: LabelerPsi, n: int, rng) -> np.ndarray:
    """Rows ``(x, y)``: y = b_z, flipped with probability eps."""
    gen = as_generator(rng)
    x, z = _sample(model, n, gen)
    flip = gen.uniform(size=n) < psi.eps
    y = np.asarray(psi.bits, dtype=float)[z]
    y = np.where(flip, 1.0 - y, y)
    return np.column_stack([x, y])


def check_separation(model_or_centers) -> bool:
    c = model_or_centers.centers if isinstance(model_or_centers, GmmModel) else np.atleast_2d(model_or_centers)
    K, d = c.shape
    if K < 2:
        return True
    threshold = SEPARATION_FACTOR * math.sqrt(d * _log_k(K))
    dists = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=-1)
    return bool(dists[np.triu_indices(K, 1)].min() >= threshold)


# -- posterior and likelihood ---------------------------------------------

def _component_logits(x, centers):
    # -||x - u||^2 / 2 up to a per-row constant
    return x @ centers.T - 0.5 * np.sum(centers * centers, axis=1)


def posterior(centers, x) -> np.ndarray:
    """Posterior weights over clusters, one row per point; rows sum to 1."""
    logits = _component_logits(np.atleast_2d(x), np.atleast_2d(centers))
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def mixture_logpdf(x, centers) -> np.ndarray:
    x = np.atleast_2d(x)
    centers = np.atleast_2d(centers)
    K, d = centers.shape
    sq = np.sum(x * x, axis=1)[:, None] - 2 * x @ centers.T + np.sum(centers * centers, axis=1)
    return logsumexp(-0.5 * sq, axis=1) - math.log(K) - 0.5 * d * math.log(2 * math.pi)


def mixture_density(centers, name="gmm") -> DensityEvaluator:
    model = GmmModel(centers)
    return DensityEvaluator(name, lambda x: mixture_logpdf(x, model.centers), {"centers": model.centers},
                            lambda count, rng: sample_gmm_unlabeled(model, count, rng))


# -- EM -------------------------------------------------------------------

@dataclass
class EmRun:
    centers: np.ndarray
    loglik: float
    history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    reseeds: int = 0
    reseed_iterations: list = field(default_factory=list)


@dataclass
class GmmFit:
    centers: np.ndarray
    loglik: float
    runs: list


def _kmeanspp(x, K, gen):
    m = x.shape[0]
    centers = [x[gen.integers(m)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        idx = gen.choice(m, p=d2 / total) if total > 0 else gen.integers(m)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def em_gmm(x, init, max_iter=500, tol=1e-8) -> EmRun:
    """EM on the centers only, starting from ``init``."""
    centers = np.array(init, dtype=float)
    K = centers.shape[0]
    run = EmRun(centers, -math.inf)
    prev = -math.inf
    reseeded = False
    for it in range(1, max_iter + 1):
        ll_rows = mixture_logpdf(x, centers)
        ll = float(ll_rows.sum())
        run.history.append(ll)
        if it > 1 and not reseeded and ll - prev < tol:
            run.converged = True
            run.iterations = it - 1
            break
        prev = ll
        w = posterior(centers, x)
        mass = w.sum(axis=0)
        new = (w.T @ x) / np.maximum(mass, 1e-300)[:, None]
        empty = np.flatnonzero(mass < 1e-12)
        reseeded = bool(empty.size)
        if reseeded:
            worst = np.argsort(ll_rows)[: empty.size]
            new[empty] = x[worst]
            run.reseeds += empty.size
            run.reseed_iterations.append(it)
        centers = new
        run.iterations = it
    run.centers = centers
    run.loglik = float(mixture_logpdf(x, centers).sum())
    return run


def mle_gmm(unlabeled, K: int, restarts: int = 8, rng=0, max_iter: int = 500, tol: float = 1e-8) -> GmmFit:
    """Best-of-``restarts`` EM with k-means++ initialisation."""
    x = np.asarray(unlabeled, dtype=float)
    if x.ndim != 2 or x.shape[0] < max(K, 1):
        raise ParameterError(f"need at least K={K} unlabeled rows")
    if restarts < 1:
        raise ParameterError("restarts must be >= 1")
    gen = as_generator(rng)
    runs = [em_gmm(x, _kmeanspp(x, K, gen), max_iter, tol) for _ in range(restarts)]
    best = max(runs, key=lambda r: r.loglik)
    return GmmFit(best.centers, best.loglik, runs)


# -- downstream -----------------------------------------------------------

def _vote_sign(weights, bits):
    s = 2.0 * np.asarray(bits, dtype=float) - 1.0
    return weights @ s


def bayes_predict_gmm(centers, psi: LabelerPsi, x) -> np.ndarray:
    """1 iff sum_i w_i(x) P(y=1|z=i) >= 1/2.

    The vote minus 1/2 equals (1/2 - eps) * sum_i w_i (2 b_i - 1), so the sign
    is computed from the latter, exactly.
    """
    scalar = np.ndim(x) == 1 and np.atleast_2d(centers).shape[1] == np.size(x)
    w = posterior(centers, np.atleast_2d(x))
    if psi.eps == 0.5:
        out = np.ones(w.shape[0])
    else:
        out = (_vote_sign(w, psi.bits) >= 0).astype(float)
    return float(out[0]) if scalar else out


def all_bit_patterns(K: int) -> np.ndarray:
    """All 2^K patterns in lexicographic order (first cluster most significant)."""
    return np.array(list(itertools.product((0, 1), repeat=K)), dtype=float)


@dataclass
class PsiFit:
    psi: LabelerPsi
    empirical_risk: float
    mode: str
    flagged: bool = False


def erm_psi(centers, labeled, eps: float = 0.0, mode: str = "auto") -> PsiFit:
    """Empirical 0-1 risk minimisation over the 2^K cluster labelings.

    ``mode`` is "exhaustive", "heuristic" (per-cluster majority of MAP
    assignments) or "auto" (exhaustive when K <= 12).
    """
    centers = np.atleast_2d(centers)
    labeled = np.atleast_2d(np.asarray(labeled, dtype=float))
    x, y = labeled[:, :-1], labeled[:, -1]
    K = centers.shape[0]
    if mode == "auto":
        mode = "exhaustive" if K <= EXHAUSTIVE_MAX_K else "heuristic"
    w = posterior(centers, x)
    if mode == "exhaustive":
        patterns = all_bit_patterns(K)
        preds = (w @ (2.0 * patterns.T - 1.0)) >= 0
        errors = np.sum(preds != (y[:, None] == 1.0), axis=0)
        best = int(np.argmin(errors))
        bits, risk, flagged = patterns[best], errors[best] / len(y), False
    elif mode == "heuristic":
        assign = np.argmax(w, axis=1)
        bits = np.zeros(K)
        for i in range(K):
            ys = y[assign == i]
            # majority, ties and empty clusters -> 0
            bits[i] = 1.0 if ys.size and ys.mean() > 0.5 else 0.0
        risk = float(np.mean(((_vote_sign(w, bits) >= 0).astype(float)) != y))
        flagged = K <= EXHAUSTIVE_MAX_K
    else:
        raise ParameterError(f"unknown erm_psi mode {mode!r}")
    return PsiFit(LabelerPsi(tuple(int(b) for b in bits), eps), float(risk), mode, flagged)


def match_permutation(centers, true_centers) -> tuple[tuple, bool]:
    """Permutation pi minimising sum_i ||centers[pi[i]] - true_centers[i]||^2.

    Exhaustive (lexicographically smallest on ties) for K <= 8, Hungarian
    assignment beyond; the second return value flags the non-exhaustive path.
    """
    c = np.atleast_2d(centers)
    t = np.atleast_2d(true_centers)
    if c.shape != t.shape:
        raise ParameterError("centers and true_centers must have the same shape")
    K = c.shape[0]
    cost = np.sum((t[:, None, :] - c[None, :, :]) ** 2, axis=-1)  # cost[i, j]: true i <- fitted j
    if K <= EXACT_MATCH_MAX_K:
        best, best_cost = None, math.inf
        rows = np.arange(K)
        for perm in itertools.permutations(range(K)):
            total = cost[rows, perm].sum()
            if total < best_cost:
                best, best_cost = perm, total
        return tuple(int(p) for p in best), False
    _, cols = linear_sum_assignment(cost)
    return tuple(int(p) for p in cols), True


# -- informativeness ------------------------------------------------------

@dataclass
class GmmInformativeReport:
    lhs: float
    rhs: float
    holds: bool
    marginal_tv: float
    marginal_tv_std_error: float
    permutation: tuple
    constant: float = INFORMATIVE_CONSTANT

    @property
    def ratio(self) -> float:
        return self.lhs / self.marginal_tv if self.marginal_tv > 0 else (0.0 if self.lhs == 0 else math.inf)


def joint_tv_closed(centers, true_centers, permutation) -> float:
    """(1/K) sum_i d_TV(N(u_pi(i), I), N(u*_i, I)) -- the joint (x, z) TV under pi."""
    c = np.atleast_2d(centers)
    t = np.atleast_2d(true_centers)
    return float(np.mean([gaussian_tv_closed(c[p], t[i]) for i, p in enumerate(permutation)]))


def verify_informative_gmm(centers, true_centers, mc_count: int, rng, constant: float = INFORMATIVE_CONSTANT,
                           check_preconditions: bool = True) -> GmmInformativeReport:
    """Check joint (x, z) TV <= constant * marginal TV for a fitted set of centers."""
    c = np.atleast_2d(np.asarray(centers, dtype=float))
    t = np.atleast_2d(np.asarray(true_centers, dtype=float))
    K = t.shape[0]
    if check_preconditions and not check_separation(t):
        raise PreconditionError("true centers violate the separation condition")
    perm, _ = match_permutation(c, t)
    lhs = joint_tv_closed(c, t, perm)
    marg = estimate_tv(mixture_density(t, "gmm*"), mixture_density(c), None, mc_count, rng)
    if check_preconditions and marg.value - 4 * marg.std_error > 1.0 / (4 * K):
        raise PreconditionError(f"marginal TV {marg.value:.4g} exceeds 1/(4K) = {1 / (4 * K):.4g}")
    rhs = constant * marg.value
    holds = lhs <= rhs + 4.0 * constant * marg.std_error
    return GmmInformativeReport(lhs, rhs, bool(holds), marg.value, marg.std_error, perm, constant)


# -- pipeline -------------------------------------------------------------

@dataclass
class GmmPipelineResult:
    psi_hat: LabelerPsi
    centers_hat: np.ndarray
    excess_risk: RiskEstimate
    fit: GmmFit | None = None


def gmm_test_sampler(model: GmmModel, psi: LabelerPsi):
    def draw(count, rng):
        data = sample_gmm_labeled(model, psi, count, rng)
        return data[:, :-1], data[:, -1]
    return draw


def pipeline_gmm(model: GmmModel, psi_star: LabelerPsi, m: int, n: int, restarts: int = 8, rng=0,
                 test_count: int = 100_000, labeled=None) -> GmmPipelineResult:
    if m < 1:
        raise ParameterError("pretraining needs m >= 1 unlabeled rows")
    gen = as_generator(rng)
    x_unl = sample_gmm_unlabeled(model, m, gen)
    if labeled is None:
        labeled = sample_gmm_labeled(model, psi_star, n, gen)
    fit = mle_gmm(x_unl, model.K, restarts, gen)
    psi_fit = erm_psi(fit.centers, labeled, psi_star.eps)
    risk = excess_risk_mc(
        lambda x: bayes_predict_gmm(fit.centers, psi_fit.psi, x),
        lambda x: bayes_predict_gmm(model.centers, psi_star, x),
        LossSpec("zero_one"),
        gmm_test_sampler(model, psi_star),
        test_count,
        gen,
    )
    return GmmPipelineResult(psi_fit.psi, fit.centers, risk, fit)
