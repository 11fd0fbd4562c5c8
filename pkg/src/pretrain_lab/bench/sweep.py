"""Sweep execution: one job per (m, trial), all n values inside the job.

Every draw comes from a child of ``RngStream(master_seed, trial)`` tagged by
its role and cell size, so rows depend only on the config and never on the
number of workers or the order jobs finish in.
"""

from __future__ import annotations

import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from pretrain_lab import contrastive as ctr
from pretrain_lab import counterexample as cex
from pretrain_lab import factor as fac
from pretrain_lab import gmm as gm
from pretrain_lab.erm import OptConfig
from pretrain_lab.losses import LossSpec, excess_risk_mc
from pretrain_lab.prob import estimate_tv, gaussian_density
from pretrain_lab.rng import RngStream

METHOD_ORDER = {"pipeline": 0, "baseline": 1, "two_phase_mle": 0}


@dataclass(frozen=True)
class SweepResult:
    experiment_id: str
    instantiation: str
    method: str
    m: int
    n: int
    d: int | None
    r_or_k: int | None
    trial: int
    seed: int
    excess_risk: float
    excess_risk_se: float
    aux_tv: float | None
    aux_align_residual: float | None
    failed: bool

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# -- ground truth ---------------------------------------------------------

def _orthonormal(rows, cols, gen):
    q, _ = np.linalg.qr(gen.standard_normal((rows, cols)))
    return q


def build_factor_truth(truth: dict):
    gen = np.random.default_rng(truth.get("seed", 0))
    D = float(truth.get("D", 2.0))
    if "B" in truth:
        B = np.asarray(truth["B"], dtype=float)
    else:
        d, r = int(truth.get("d", 50)), int(truth.get("r", 3))
        svals = np.asarray(truth.get("singular_values", [D] * r), dtype=float)
        B = _orthonormal(d, r, gen) * svals
    r = B.shape[1]
    if "beta" in truth:
        beta = np.asarray(truth["beta"], dtype=float)
    else:
        beta = gen.standard_normal(r)
        beta *= float(truth.get("beta_norm", D)) / np.linalg.norm(beta)
    return fac.FactorModel(B, D), fac.RegressionBeta(beta, D, float(truth.get("noise_std", 1.0)))


def build_gmm_truth(truth: dict):
    gen = np.random.default_rng(truth.get("seed", 0))
    if "centers" in truth:
        centers = np.asarray(truth["centers"], dtype=float)
    else:
        K, d = int(truth.get("K", 4)), int(truth.get("d", 30))
        spacing = gm.SEPARATION_FACTOR * math.sqrt(d * math.log(K)) * float(truth.get("separation_multiplier", 1.05))
        centers = _orthonormal(d, K, gen).T * (spacing / math.sqrt(2.0))
    K = centers.shape[0]
    bits = truth.get("bits") or [i % 2 for i in range(K)]
    model = gm.GmmModel(centers, float(truth.get("D", np.inf)))
    return model, gm.LabelerPsi(tuple(bits), float(truth.get("eps", 0.1)))


def build_contrastive_truth(truth: dict):
    gen = np.random.default_rng(truth.get("seed", 0))
    if "theta" in truth:
        theta = np.asarray(truth["theta"], dtype=float)
    else:
        r, d = int(truth.get("r", 4)), int(truth.get("d", 20))
        svals = np.asarray(truth.get("singular_values", [1.0] * r), dtype=float)
        theta = (_orthonormal(d, r, gen) * svals).T
    r = theta.shape[0]
    D = float(truth.get("D", 1.0))
    if "beta" in truth:
        beta = np.asarray(truth["beta"], dtype=float)
    else:
        beta = gen.standard_normal(r)
        beta *= float(truth.get("beta_norm", D)) / np.linalg.norm(beta)
    return ctr.ContrastiveModel(theta, float(truth.get("input_radius", 1.0))), beta, D


# -- jobs -----------------------------------------------------------------

def _row(cfg, method, m, n, d, rk, trial, risk=math.nan, se=0.0, aux_tv=None, aux_res=None, failed=False):
    return SweepResult(cfg.experiment_id, cfg.instantiation, method, int(m), int(n),
                       None if d is None else int(d), None if rk is None else int(rk), int(trial),
                       int(cfg.master_seed), float(risk), float(se),
                       None if aux_tv is None else float(aux_tv),
                       None if aux_res is None else float(aux_res), bool(failed))


def _guarded(fn, cfg, method, m, n, d, rk, trial):
    try:
        return fn()
    except Exception:  # recorded per row; the sweep continues
        traceback.print_exc()
        return _row(cfg, method, m, n, d, rk, trial, failed=True)


def _factor_job(cfg, m, trial):
    model, beta = build_factor_truth(cfg.truth)
    base = RngStream(cfg.master_seed, trial)
    d, r = model.d, model.r
    x_unl = fac.sample_factor_unlabeled(model, m, base.child(f"unlabeled/m={m}"))
    B_hat, _ = fac.mle_factor_from_covariance(fac.second_moment(x_unl), r)
    O = fac.align_rotation_factor(B_hat, model.B)
    align = float(np.linalg.norm(B_hat @ O - model.B))
    aux_tv = None
    if cfg.aux_mc_count:
        aux_tv = estimate_tv(gaussian_density(np.zeros(d), model.covariance()),
                             gaussian_density(np.zeros(d), B_hat @ B_hat.T + np.eye(d)),
                             None, cfg.aux_mc_count, base.child(f"aux/m={m}")).value
    opt = OptConfig(**cfg.optimizer.get("erm", {}))
    rows = []
    for n in cfg.n_values:
        labeled = fac.sample_factor_labeled(model, beta, n, base.child(f"labeled/n={n}"))

        def pipeline():
            if cfg.erm_method == "fast_rate_ols":
                fit = fac.erm_beta_ols(B_hat, labeled)
            else:
                L = cfg.truth.get("L") or fac.factor_truncation_level(beta.D, n)
                fit = fac.erm_beta_truncated(B_hat, labeled, L, beta.D, opt, base.child(f"erm/m={m}/n={n}"))
            risk = fac.excess_risk_factor_closed(model.B, beta.beta, B_hat, fit.beta)
            return _row(cfg, "pipeline", m, n, d, r, trial, risk, 0.0, aux_tv, align, False)

        rows.append(_guarded(pipeline, cfg, "pipeline", m, n, d, r, trial))
        if cfg.baseline:
            def baseline():
                w = fac.supervised_baseline_factor(labeled)
                return _row(cfg, "baseline", m, n, d, r, trial, fac.excess_risk_linear(model.B, beta.beta, w))
            rows.append(_guarded(baseline, cfg, "baseline", m, n, d, r, trial))
    return rows


def _gmm_job(cfg, m, trial):
    model, psi = build_gmm_truth(cfg.truth)
    base = RngStream(cfg.master_seed, trial)
    d, K = model.d, model.K
    restarts = int(cfg.optimizer.get("restarts", 8))
    x_unl = gm.sample_gmm_unlabeled(model, m, base.child(f"unlabeled/m={m}"))
    fit = gm.mle_gmm(x_unl, K, restarts, base.child(f"em/m={m}"))
    perm, _ = gm.match_permutation(fit.centers, model.centers)
    align = float(np.linalg.norm(fit.centers[list(perm)] - model.centers))
    aux_tv = None
    if cfg.aux_mc_count:
        aux_tv = estimate_tv(gm.mixture_density(model.centers), gm.mixture_density(fit.centers), None,
                             cfg.aux_mc_count, base.child(f"aux/m={m}")).value
    loss = LossSpec("zero_one")
    bayes = lambda x: gm.bayes_predict_gmm(model.centers, psi, x)  # noqa: E731
    sampler = gm.gmm_test_sampler(model, psi)
    rows = []
    for n in cfg.n_values:
        labeled = gm.sample_gmm_labeled(model, psi, n, base.child(f"labeled/n={n}"))
        test_tag = f"test/m={m}/n={n}"

        def pipeline():
            psi_hat = gm.erm_psi(fit.centers, labeled, psi.eps).psi
            est = excess_risk_mc(lambda x: gm.bayes_predict_gmm(fit.centers, psi_hat, x), bayes, loss, sampler,
                                 cfg.mc_count, base.child(test_tag))
            return _row(cfg, "pipeline", m, n, d, K, trial, est.value, est.std_error, aux_tv, align)

        rows.append(_guarded(pipeline, cfg, "pipeline", m, n, d, K, trial))
        if cfg.baseline:
            def baseline():
                # same two-phase procedure, but pretraining sees only the labeled inputs
                sup = gm.mle_gmm(labeled[:, :-1], K, restarts, base.child(f"em-baseline/n={n}"))
                psi_b = gm.erm_psi(sup.centers, labeled, psi.eps).psi
                est = excess_risk_mc(lambda x: gm.bayes_predict_gmm(sup.centers, psi_b, x), bayes, loss, sampler,
                                     cfg.mc_count, base.child(test_tag))
                return _row(cfg, "baseline", m, n, d, K, trial, est.value, est.std_error)
            rows.append(_guarded(baseline, cfg, "baseline", m, n, d, K, trial))
    return rows


def _contrastive_job(cfg, m, trial):
    model, beta, D = build_contrastive_truth(cfg.truth)
    base = RngStream(cfg.master_seed, trial)
    d, r = model.d, model.r
    ascent = ctr.AscentConfig(**cfg.optimizer.get("ascent", {}))
    opt = OptConfig(**cfg.optimizer.get("erm", {}))
    pairs = ctr.sample_pairs(model, m, base.child(f"unlabeled/m={m}"))
    pre = ctr.mle_contrastive(pairs, r, d, ascent, base.child(f"mle/m={m}"))
    theta_hat = pre.theta
    u, _, vt = np.linalg.svd(theta_hat @ model.theta.T)
    O = vt.T @ u.T
    align = float(np.linalg.norm(O @ theta_hat - model.theta)) * model.input_radius / math.sqrt(d)
    aux_tv = None
    if cfg.aux_mc_count:
        aux_tv = ctr.hellinger_pairs(theta_hat, model.theta, cfg.aux_mc_count, base.child(f"aux/m={m}"),
                                     model.input_radius).value
    rows = []
    for n in cfg.n_values:
        labeled = ctr.sample_contrastive_labeled(model, beta, n, base.child(f"labeled/n={n}"))

        def pipeline():
            L = cfg.truth.get("L")
            _, risk = ctr.downstream_contrastive(model, beta, D, theta_hat, labeled, L, opt,
                                                 base.child(f"erm/m={m}/n={n}"))
            return _row(cfg, "pipeline", m, n, d, r, trial, risk, 0.0, aux_tv, align)

        rows.append(_guarded(pipeline, cfg, "pipeline", m, n, d, r, trial))
        if cfg.baseline:
            def baseline():
                w = ctr.supervised_baseline_contrastive(labeled)
                risk = ctr.excess_risk_linear_contrastive(model.theta, beta, w, model.input_radius)
                return _row(cfg, "baseline", m, n, d, r, trial, risk)
            rows.append(_guarded(baseline, cfg, "baseline", m, n, d, r, trial))
    return rows


def _counterexample_job(cfg, m, trial):
    base = RngStream(cfg.master_seed, trial)
    rows = []
    for n in cfg.n_values:
        def run():
            _, _, tv = cex.failure_trial(m, n, base.child(f"counter/m={m}/n={n}"))
            return _row(cfg, "two_phase_mle", m, n, None, None, trial, tv, 0.0, tv, None)
        rows.append(_guarded(run, cfg, "two_phase_mle", m, n, None, None, trial))
    return rows


JOBS = {
    "factor": _factor_job,
    "gmm": _gmm_job,
    "contrastive": _contrastive_job,
    "counterexample": _counterexample_job,
}


def _run_job(args):
    cfg, m, trial = args
    return JOBS[cfg.instantiation](cfg, m, trial)


def sort_key(cfg, row: SweepResult):
    return (cfg.m_values.index(row.m), cfg.n_values.index(row.n), row.trial, METHOD_ORDER.get(row.method, 9))


def run_sweep(cfg, jobs: int = 1) -> list[SweepResult]:
    """Run every (cell, trial) of ``cfg``; rows come back in (m, n, trial, method) order."""
    work = [(cfg, m, t) for m in cfg.m_values for t in range(cfg.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_job, work))
    else:
        chunks = [_run_job(w) for w in work]
    rows = [row for chunk in chunks for row in chunk]
    return sorted(rows, key=lambda row: sort_key(cfg, row))


def row_to_dict(row: SweepResult) -> dict:
    return asdict(row)
