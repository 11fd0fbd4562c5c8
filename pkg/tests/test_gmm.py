import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pretrain_lab import gmm as gm
from pretrain_lab.errors import ParameterError, PreconditionError
from pretrain_lab.prob import estimate_tv, gaussian_density, gaussian_tv_closed
from pretrain_lab.rng import RngStream


def separated_centers(K, d, gen, mult=1.05):
    q, _ = np.linalg.qr(gen.standard_normal((d, K)))
    return q.T * (gm.SEPARATION_FACTOR * math.sqrt(d * math.log(K)) * mult / math.sqrt(2))


# -- types and sampling ----------------------------------------------------------------

def test_labeler_validation():
    with pytest.raises(ParameterError):
        gm.LabelerPsi((0, 2), 0.1)
    with pytest.raises(ParameterError):
        gm.LabelerPsi((0, 1), 0.5)
    assert np.allclose(gm.LabelerPsi((1, 0), 0.1).prob_one(), [0.9, 0.1])


def test_norm_condition():
    with pytest.raises(ParameterError):
        gm.GmmModel([[10.0], [-10.0]], D=1.0)
    gm.GmmModel([[1e6]], D=1.0)  # K = 1: log K = 0, the bound is not applied


def test_single_standard_normal():
    x = gm.sample_gmm_unlabeled(gm.GmmModel([[0.0, 0.0]]), 10**5, RngStream(0))
    assert np.allclose(x.mean(0), 0, atol=0.02) and np.allclose(np.cov(x.T), np.eye(2), atol=0.02)


def test_symmetric_two_cluster_balance():
    x = gm.sample_gmm_unlabeled(gm.GmmModel([[10.0], [-10.0]]), 10**5, RngStream(1))
    assert 0.49 <= np.mean(x > 0) <= 0.51


def test_mixture_mean():
    gen = np.random.default_rng(0)
    c = gen.normal(0, 3, (3, 4))
    m = 20000
    x = gm.sample_gmm_unlabeled(gm.GmmModel(c), m, RngStream(2))
    cov = np.cov(c.T, bias=True) + np.eye(4)
    assert np.linalg.norm(x.mean(0) - c.mean(0)) <= 4 * math.sqrt(np.trace(cov) / m)


def test_labels_noise_free_and_noisy():
    model = gm.GmmModel([[0.0]])
    y = gm.sample_gmm_labeled(model, gm.LabelerPsi((1,), 0.0), 500, RngStream(3))[:, -1]
    assert np.all(y == 1)
    n = 20000
    y = gm.sample_gmm_labeled(model, gm.LabelerPsi((1,), 0.1), n, RngStream(4))[:, -1]
    assert abs(y.mean() - 0.9) <= 3 * math.sqrt(0.09 / n)
    a = gm.sample_gmm_labeled(model, gm.LabelerPsi((1,), 0.1), 5, RngStream(5))
    assert np.array_equal(a, gm.sample_gmm_labeled(model, gm.LabelerPsi((1,), 0.1), 5, RngStream(5)))


# -- separation ----------------------------------------------------------------------------

def test_separation_examples():
    assert gm.check_separation(np.array([[0.0], [100 * math.sqrt(math.log(2))]]))
    assert not gm.check_separation(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert gm.check_separation(np.array([[3.0, 4.0]]))


# -- posterior and EM -------------------------------------------------------------------------

@given(st.integers(0, 10**6))
def test_posterior_normalised_and_equivariant(seed):
    gen = np.random.default_rng(seed)
    c, x = gen.normal(0, 2, (4, 3)), gen.normal(0, 3, (6, 3))
    w = gm.posterior(c, x)
    assert np.allclose(w.sum(1), 1.0, atol=1e-12)
    perm = gen.permutation(4)
    assert np.allclose(gm.posterior(c[perm], x), w[:, perm], atol=1e-12)


def test_em_single_cluster_is_sample_mean():
    x = np.random.default_rng(1).normal(2.0, 1.0, (200, 3))
    fit = gm.mle_gmm(x, 1, restarts=1, rng=0)
    assert np.allclose(fit.centers[0], x.mean(0), atol=1e-12)
    assert fit.runs[0].iterations <= 2


def test_em_recovers_separated_pair():
    model = gm.GmmModel([[10.0], [-10.0]])
    x = gm.sample_gmm_unlabeled(model, 10**4, RngStream(6))
    fit = gm.mle_gmm(x, 2, 8, RngStream(7))
    perm, _ = gm.match_permutation(fit.centers, model.centers)
    assert np.allclose(fit.centers[list(perm)], model.centers, atol=0.1)


@pytest.mark.parametrize("seed", range(6))
def test_em_loglik_monotone(seed):
    gen = np.random.default_rng(seed)
    c = gen.normal(0, 2.5, (3, 2))
    x = gm.sample_gmm_unlabeled(gm.GmmModel(c), 400, RngStream(seed))
    fit = gm.mle_gmm(x, 3, 4, RngStream(100 + seed))
    for run in fit.runs:
        h = np.asarray(run.history)
        assert np.all(np.diff(h) >= -1e-10 * np.maximum(1.0, np.abs(h[:-1])))


def test_em_reseeds_empty_cluster():
    x = np.random.default_rng(0).normal(0, 1, (50, 2))
    run = gm.em_gmm(x, np.array([[0.0, 0.0], [1e4, 1e4]]), max_iter=20)
    assert run.reseeds >= 1 and np.all(np.isfinite(run.centers))


def test_mle_gmm_needs_enough_rows():
    with pytest.raises(ParameterError):
        gm.mle_gmm(np.zeros((2, 3)), 3)


# -- Bayes predictor ---------------------------------------------------------------------------

def test_bayes_examples():
    psi = gm.LabelerPsi((1,), 0.1)
    assert np.all(gm.bayes_predict_gmm([[0.0]], psi, np.linspace(-5, 5, 11)[:, None]) == 1)
    psi2 = gm.LabelerPsi((1, 0), 0.1)
    assert gm.bayes_predict_gmm([[1.0, 0.0], [-1.0, 0.0]], psi2, np.array([0.0, 3.0])) == 1.0
    assert gm.bayes_predict_gmm([[10.0], [-10.0]], psi2, np.array([10.0])) == 1.0
    assert gm.bayes_predict_gmm([[10.0], [-10.0]], psi2, np.array([-10.0])) == 0.0


# -- ERM over labelings ----------------------------------------------------------------------

def _brute_force(centers, labeled, eps):
    best, best_err = None, math.inf
    for bits in itertools.product((0, 1), repeat=len(centers)):
        pred = gm.bayes_predict_gmm(centers, gm.LabelerPsi(bits, eps), labeled[:, :-1])
        err = np.mean(pred != labeled[:, -1])
        if err < best_err:
            best, best_err = bits, err
    return best, best_err


def test_erm_single_cluster_majority():
    data = np.array([[0.1, 1], [0.2, 1], [0.3, 0]])
    assert gm.erm_psi([[0.0]], data, 0.1).psi.bits == (1,)


def test_erm_hand_placed_points():
    centers = np.array([[-2.0], [2.0]])
    data = np.array([[-2.5, 0], [-1.5, 0], [-0.2, 1], [0.3, 1], [1.9, 1], [2.4, 0]])
    fit = gm.erm_psi(centers, data, 0.1)
    bits, err = _brute_force(centers, data, 0.1)
    assert fit.psi.bits == bits and fit.empirical_risk == pytest.approx(err)


@given(st.integers(1, 3), st.integers(0, 10**6))
def test_erm_equals_brute_force(K, seed):
    gen = np.random.default_rng(seed)
    centers = gen.normal(0, 2, (K, 2))
    data = np.column_stack([gen.normal(0, 3, (15, 2)), gen.integers(0, 2, 15)])
    fit = gm.erm_psi(centers, data, 0.1, mode="exhaustive")
    bits, err = _brute_force(centers, data, 0.1)
    assert fit.psi.bits == bits and fit.empirical_risk == pytest.approx(err)


@given(st.integers(0, 10**6))
def test_exhaustive_never_worse_than_heuristic(seed):
    gen = np.random.default_rng(seed)
    K = int(gen.integers(2, 6))
    centers = gen.normal(0, 2, (K, 2))
    data = np.column_stack([gen.normal(0, 3, (30, 2)), gen.integers(0, 2, 30)])
    ex = gm.erm_psi(centers, data, 0.1, mode="exhaustive")
    he = gm.erm_psi(centers, data, 0.1, mode="heuristic")
    assert ex.empirical_risk <= he.empirical_risk + 1e-12
    assert he.flagged


def test_erm_recovers_truth_high_signal():
    gen = np.random.default_rng(2)
    centers = separated_centers(3, 5, gen)
    psi = gm.LabelerPsi((1, 0, 1), 0.05)
    data = gm.sample_gmm_labeled(gm.GmmModel(centers), psi, 2000, RngStream(8))
    assert gm.erm_psi(centers, data, 0.05).psi.bits == psi.bits


# -- permutation matching ----------------------------------------------------------------------

def test_match_identity_and_swap():
    c = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    assert gm.match_permutation(c, c) == ((0, 1, 2), False)
    assert gm.match_permutation(c[[1, 0, 2]], c)[0] == (1, 0, 2)


@given(st.integers(2, 5), st.integers(0, 10**6))
def test_match_equals_brute_force(K, seed):
    gen = np.random.default_rng(seed)
    t = gen.normal(0, 5, (K, 3))
    c = t[gen.permutation(K)] + gen.normal(0, 0.5, (K, 3))
    perm, flagged = gm.match_permutation(c, t)
    costs = {p: sum(np.sum((c[p[i]] - t[i]) ** 2) for i in range(K)) for p in itertools.permutations(range(K))}
    assert not flagged
    assert costs[perm] == pytest.approx(min(costs.values()))


def test_match_large_k_flagged():
    gen = np.random.default_rng(3)
    t = gen.normal(0, 10, (10, 3))
    perm, flagged = gm.match_permutation(t[::-1], t)
    assert flagged and perm == tuple(range(9, -1, -1))


# -- informativeness -------------------------------------------------------------------------

def test_informative_at_truth_and_single_shift():
    gen = np.random.default_rng(4)
    t = separated_centers(3, 4, gen)
    rep = gm.verify_informative_gmm(t, t, 2000, RngStream(9))
    assert rep.lhs == 0.0 and rep.holds
    c = t.copy()
    c[1, 0] += 0.1
    rep = gm.verify_informative_gmm(c, t, 20000, RngStream(10))
    assert rep.lhs == pytest.approx(gaussian_tv_closed([0.0], [0.1]) / 3, abs=1e-12)
    assert rep.holds


def test_informative_preconditions():
    with pytest.raises(PreconditionError):
        gm.verify_informative_gmm([[0.0], [1.0]], [[0.0], [1.0]], 100, RngStream(0))
    t = separated_centers(2, 3, np.random.default_rng(5))
    with pytest.raises(PreconditionError):
        gm.verify_informative_gmm(t + 5.0, t, 2000, RngStream(0))


def test_informative_random_perturbations():
    gen = np.random.default_rng(6)
    for i in range(15):
        t = separated_centers(3, 4, gen)
        c = t + gen.normal(0, 0.02, t.shape)
        assert gm.verify_informative_gmm(c[gen.permutation(3)], t, 5000, RngStream(11, i)).holds


def test_joint_tv_decomposition_matches_monte_carlo():
    gen = np.random.default_rng(7)
    t = separated_centers(2, 2, gen)
    c = t + gen.normal(0, 0.3, t.shape)
    lhs = gm.joint_tv_closed(c, t, (0, 1))
    # joint (x, z) TV: z uniform, so it is E_z[TV(N(u*_z, I), N(u_z, I))]; sample it directly
    vals = []
    for k in range(2):
        est = estimate_tv(gaussian_density(t[k], np.eye(2)), gaussian_density(c[k], np.eye(2)), None, 40000,
                          RngStream(12, k))
        vals.append(est)
    mc = np.mean([v.value for v in vals])
    se = math.sqrt(sum(v.std_error ** 2 for v in vals)) / 2
    assert abs(mc - lhs) <= 4 * se


# -- pipeline ------------------------------------------------------------------------------------

def test_pipeline_consistency():
    gen = np.random.default_rng(8)
    model = gm.GmmModel(separated_centers(2, 5, gen))
    res = gm.pipeline_gmm(model, gm.LabelerPsi((1, 0), 0.1), 10**5, 10**4, 4, RngStream(13), test_count=20000)
    assert res.excess_risk.value <= 0.01


def test_pipeline_noise_free_recovers_psi():
    gen = np.random.default_rng(9)
    model = gm.GmmModel(separated_centers(3, 4, gen))
    psi = gm.LabelerPsi((0, 1, 1), 0.0)
    res = gm.pipeline_gmm(model, psi, 5000, 3000, 4, RngStream(14), test_count=1000)
    perm, _ = gm.match_permutation(res.centers_hat, model.centers)
    assert tuple(res.psi_hat.bits[p] for p in perm) == psi.bits


def test_pipeline_rejects_no_unlabeled():
    with pytest.raises(ParameterError):
        gm.pipeline_gmm(gm.GmmModel([[0.0]]), gm.LabelerPsi((1,)), 0, 10)
