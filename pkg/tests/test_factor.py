import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pretrain_lab import factor as fac
from pretrain_lab.erm import OptConfig, truncated_objective
from pretrain_lab.errors import ParameterError, PreconditionError
from pretrain_lab.losses import LossSpec, excess_risk_mc
from pretrain_lab.rng import RngStream

from conftest import random_orthogonal


def random_B(d, r, gen, smin=0.5, smax=2.0):
    q, _ = np.linalg.qr(gen.standard_normal((d, r)))
    return q * gen.uniform(smin, smax, r)


# -- types ------------------------------------------------------------------------

def test_model_validation():
    with pytest.raises(ParameterError):
        fac.FactorModel(np.ones((3, 3)))
    with pytest.raises(ParameterError):
        fac.FactorModel(np.array([[3.0], [0.0]]), D=2.0)
    with pytest.raises(ParameterError):
        fac.RegressionBeta([3.0], D=2.0)
    with pytest.raises(ParameterError):
        fac.RegressionBeta([1.0], noise_std=0.0)


# -- sampling ------------------------------------------------------------------------

def test_zero_loading_gives_identity_covariance():
    x = fac.sample_factor_unlabeled(fac.FactorModel(np.zeros((3, 1))), 10**6, RngStream(0))
    assert np.allclose(np.cov(x.T), np.eye(3), atol=0.02)


def test_rank_one_covariance():
    model = fac.FactorModel(np.array([[2.0], [0.0], [0.0]]))
    x = fac.sample_factor_unlabeled(model, 10**6, RngStream(1))
    cov = x.T @ x / x.shape[0]
    assert np.allclose(cov, np.diag([5.0, 1.0, 1.0]), rtol=0.02, atol=0.02)


def test_sample_mean_within_clt_bound():
    gen = np.random.default_rng(0)
    model = fac.FactorModel(random_B(6, 2, gen))
    m, bound = 2000, 4 * np.sqrt(6 / 2000) * np.sqrt(np.linalg.norm(model.B, 2) ** 2 + 1)
    ok = sum(np.linalg.norm(fac.sample_factor_unlabeled(model, m, RngStream(1, i)).mean(0)) <= bound
             for i in range(100))
    assert ok >= 95


def test_labeled_zero_beta_is_pure_noise():
    model = fac.FactorModel(np.array([[2.0], [0.0], [0.0]]))
    data = fac.sample_factor_labeled(model, fac.RegressionBeta([0.0], noise_std=1.5), 10**5, RngStream(2))
    y = data[:, -1]
    assert abs(y.std() - 1.5) < 0.02
    assert np.all(np.abs(np.corrcoef(data.T)[-1, :-1]) < 0.02)


def test_labeled_cross_covariance():
    model = fac.FactorModel(np.array([[2.0], [0.0], [0.0]]))
    data = fac.sample_factor_labeled(model, fac.RegressionBeta([1.0]), 10**6, RngStream(3))
    assert np.mean(data[:, 0] * data[:, -1]) == pytest.approx(2.0, rel=0.02)


def test_labeled_determinism_single_row():
    model = fac.FactorModel(np.array([[2.0], [0.0], [0.0]]))
    beta = fac.RegressionBeta([1.0])
    a = fac.sample_factor_labeled(model, beta, 1, RngStream(4, 4))
    b = fac.sample_factor_labeled(model, beta, 1, RngStream(4, 4))
    assert a.shape == (1, 4) and np.array_equal(a, b)


# -- MLE ----------------------------------------------------------------------------------

def test_identity_covariance_gives_zero_loading():
    B, clamped = fac.mle_factor_from_covariance(np.eye(4), 2)
    assert np.all(B == 0) and clamped == 0  # eigenvalue 1 is not below 1
    B, clamped = fac.mle_factor_from_covariance(np.diag([3.0, 0.5, 0.5, 0.5]), 2)
    assert clamped == 1 and np.all(B[:, 1] == 0)


def test_diagonal_covariance_by_hand():
    B, clamped = fac.mle_factor_from_covariance(np.diag([5.0, 1.0, 1.0]), 1)
    assert np.allclose(B @ B.T, np.diag([4.0, 0.0, 0.0]), atol=1e-12)
    assert np.allclose(np.abs(B[:, 0]), [2.0, 0.0, 0.0])


def test_population_exact_recovery():
    gen = np.random.default_rng(1)
    for _ in range(50):
        d, r = int(gen.integers(3, 30)), None
        r = int(gen.integers(1, d))
        Bs = random_B(d, r, gen, 0.5, 3.0)
        B, _ = fac.mle_factor_from_covariance(Bs @ Bs.T + np.eye(d), r)
        assert np.linalg.norm(B @ B.T - Bs @ Bs.T) <= 1e-10


def test_mle_rejects_bad_rank():
    with pytest.raises(ParameterError):
        fac.mle_factor_from_covariance(np.eye(3), 3)


def test_mle_beats_random_feasible_loadings():
    gen = np.random.default_rng(2)
    Bs = random_B(8, 2, gen)
    x = fac.sample_factor_unlabeled(fac.FactorModel(Bs), 500, RngStream(5))
    sigma = fac.second_moment(x)
    B, _ = fac.mle_factor_from_covariance(sigma, 2)
    best = fac.factor_nll(B, sigma)
    for _ in range(200):
        assert best <= fac.factor_nll(gen.standard_normal((8, 2)) * gen.uniform(0, 3), sigma) + 1e-10


@given(st.integers(0, 10**6))
def test_mle_perturbation_inequality(seed):
    gen = np.random.default_rng(seed)
    d, r = 6, 2
    Bs = random_B(d, r, gen)
    x = fac.sample_factor_unlabeled(fac.FactorModel(Bs), 50, RngStream(seed))
    sigma_hat = fac.second_moment(x)
    B, _ = fac.mle_factor_from_covariance(sigma_hat, r)
    lhs = np.linalg.norm(B @ B.T - (sigma_hat - np.eye(d)), 2)
    rhs = np.linalg.norm(sigma_hat - (Bs @ Bs.T + np.eye(d)), 2)
    assert lhs <= rhs + 1e-10


# -- predictor and rotation invariance -------------------------------------------------------

def test_predictor_examples():
    assert np.all(fac.predictor_factor(np.zeros((3, 1)), [1.0], np.ones((4, 3))) == 0)
    B = np.array([[2.0], [0.0], [0.0]])
    assert fac.predictor_factor(B, [1.0], np.array([1.0, 0.0, 0.0])) == pytest.approx(0.4)


@given(st.integers(0, 10**6))
def test_rotation_invariance(seed):
    gen = np.random.default_rng(seed)
    B, beta, O = random_B(5, 2, gen), gen.standard_normal(2), random_orthogonal(2, gen)
    x = gen.standard_normal((10, 5))
    assert np.allclose(fac.predictor_factor(B @ O, O.T @ beta, x), fac.predictor_factor(B, beta, x), atol=1e-12)
    # joint covariance of (x, y): [[BB^T + I, B beta], [., |beta|^2 + 1]]
    def joint(B, b):
        return np.block([[B @ B.T + np.eye(5), (B @ b)[:, None]], [(B @ b)[None, :], np.array([[b @ b + 1]])]])
    assert np.max(np.abs(joint(B @ O, O.T @ beta) - joint(B, beta))) <= 1e-12


# -- ERM ----------------------------------------------------------------------------------------------

def _labeled(gen, d=6, r=2, n=200):
    Bs = random_B(d, r, gen)
    model, beta = fac.FactorModel(Bs), fac.RegressionBeta(gen.standard_normal(r) * 0.5)
    return model, beta, fac.sample_factor_labeled(model, beta, n, RngStream(int(gen.integers(1000))))


def test_truncated_matches_ols_when_inactive():
    gen = np.random.default_rng(3)
    model, beta, data = _labeled(gen)
    ols = fac.erm_beta_ols(model.B, data).beta
    res = fac.erm_beta_truncated(model.B, data, L=1e6, D=10.0)
    assert np.allclose(res.beta, ols, atol=1e-6)


def test_truncated_single_point_exact_fit():
    B = np.array([[1.0], [0.0]])
    C = fac.feature_map(B)
    x = np.array([2.0, 0.0])
    y = 0.3 * float((C @ x)[0])
    res = fac.erm_beta_truncated(B, np.array([[2.0, 0.0, y]]), L=10.0, D=5.0)
    assert res.objective < 1e-12


def test_truncated_handles_outlier_better_than_ols():
    gen = np.random.default_rng(4)
    B = np.array([[1.5], [0.0], [0.0]])
    model, beta = fac.FactorModel(B), fac.RegressionBeta([1.0])
    data = fac.sample_factor_labeled(model, beta, 50, RngStream(6))
    data[0, -1] += 200.0
    L = 9.0
    u = data[:, :-1] @ fac.feature_map(B).T
    res = fac.erm_beta_truncated(B, data, L, D=3.0)
    ols = fac.erm_beta_ols(B, data).beta
    assert res.objective <= truncated_objective(ols, u, data[:, -1], L) + 1e-12
    grid = np.linspace(-3, 3, 6001)
    grid_best = min(truncated_objective(np.array([b]), u, data[:, -1], L) for b in grid)
    assert res.objective <= grid_best + 1e-6


def test_certificate_against_projected_ols():
    gen = np.random.default_rng(5)
    model, beta, data = _labeled(gen, n=30)
    u = data[:, :-1] @ fac.feature_map(model.B).T
    ols = np.linalg.lstsq(u, data[:, -1], rcond=None)[0]
    proj = ols if np.linalg.norm(ols) <= 0.3 else ols * 0.3 / np.linalg.norm(ols)
    res = fac.erm_beta_truncated(model.B, data, L=0.5, D=0.3, opt_config=OptConfig(iterations=50))
    assert res.objective <= truncated_objective(proj, u, data[:, -1], 0.5) + 1e-8


def test_ols_noise_free_recovery():
    gen = np.random.default_rng(6)
    B = random_B(6, 2, gen)
    x = gen.standard_normal((40, 6))
    beta = np.array([0.7, -1.2])
    data = np.column_stack([x, x @ fac.feature_map(B).T @ beta])
    assert np.allclose(fac.erm_beta_ols(B, data).beta, beta, atol=1e-10)


def test_ols_rank_one_closed_form_and_permutation_invariance():
    gen = np.random.default_rng(7)
    B = random_B(4, 1, gen)
    data = np.column_stack([gen.standard_normal((30, 4)), gen.standard_normal(30)])
    u = data[:, :-1] @ fac.feature_map(B)[0]
    expected = (u @ data[:, -1]) / (u @ u)
    assert fac.erm_beta_ols(B, data).beta[0] == pytest.approx(expected, rel=1e-12)
    perm = gen.permutation(30)
    assert np.allclose(fac.erm_beta_ols(B, data[perm]).beta, fac.erm_beta_ols(B, data).beta, atol=1e-12)


def test_ols_rank_deficient_flagged():
    data = np.column_stack([np.random.default_rng(0).standard_normal((10, 4)), np.ones(10)])
    res = fac.erm_beta_ols(np.zeros((4, 2)), data)
    assert res.flagged


# -- excess risk ------------------------------------------------------------------------------------------

def test_excess_risk_zero_at_truth_and_rotation():
    gen = np.random.default_rng(8)
    B, beta, O = random_B(5, 2, gen), gen.standard_normal(2), random_orthogonal(2, gen)
    assert fac.excess_risk_factor_closed(B, beta, B, beta) == pytest.approx(0.0, abs=1e-15)
    assert fac.excess_risk_factor_closed(B, beta, B @ O, O.T @ beta) <= 1e-12


@given(st.integers(0, 10**6))
def test_excess_risk_nonnegative(seed):
    gen = np.random.default_rng(seed)
    assert fac.excess_risk_factor_closed(random_B(5, 2, gen), gen.standard_normal(2),
                                         gen.standard_normal((5, 2)), gen.standard_normal(2)) >= 0


def test_excess_risk_closed_matches_monte_carlo():
    gen = np.random.default_rng(9)
    Bs = random_B(5, 2, gen)
    model, beta = fac.FactorModel(Bs), fac.RegressionBeta(gen.standard_normal(2))
    beta_hat = beta.beta + np.array([0.3, 0.0])
    closed = fac.excess_risk_factor_closed(Bs, beta.beta, Bs, beta_hat)

    def sampler(count, rng):
        data = fac.sample_factor_labeled(model, beta, count, rng)
        return data[:, :-1], data[:, -1]

    est = excess_risk_mc(lambda x: fac.predictor_factor(Bs, beta_hat, x),
                         lambda x: fac.predictor_factor(Bs, beta.beta, x),
                         LossSpec("squared"), sampler, 200000, RngStream(10))
    assert abs(est.value - closed) <= 3 * est.std_error


# -- alignment and informativeness ---------------------------------------------------------------------

def test_align_identity_and_known_rotation():
    gen = np.random.default_rng(11)
    Bs = random_B(6, 3, gen)
    assert np.allclose(fac.align_rotation_factor(Bs, Bs), np.eye(3), atol=1e-10)
    O0 = random_orthogonal(3, gen)
    O = fac.align_rotation_factor(Bs @ O0, Bs)
    assert np.allclose(O, O0.T, atol=1e-10)
    assert np.linalg.norm(Bs @ O0 @ O - Bs) <= 1e-10


def test_align_optimal_against_random_rotations():
    gen = np.random.default_rng(12)
    B, Bs = gen.standard_normal((6, 3)), gen.standard_normal((6, 3))
    O = fac.align_rotation_factor(B, Bs)
    assert np.allclose(O.T @ O, np.eye(3), atol=1e-10)
    best = np.linalg.norm(B @ O - Bs)
    for _ in range(100):
        assert best <= np.linalg.norm(B @ random_orthogonal(3, gen) - Bs) + 1e-12


def test_kappa_value():
    Bs = np.vstack([2 * np.eye(2), np.zeros((3, 2))])
    assert fac.factor_kappa(Bs, 500) == pytest.approx(5062.5)
    with pytest.raises(PreconditionError):
        fac.factor_kappa(np.zeros((4, 2)))


def test_informative_at_truth():
    Bs = random_B(5, 2, np.random.default_rng(13), 1.0, 2.0)
    rep = fac.verify_informative_factor(Bs, Bs, 2000, RngStream(0))
    assert rep.lhs == 0.0 and rep.holds


def test_informative_on_perturbed_instances():
    gen = np.random.default_rng(14)
    for i in range(20):
        Bs = random_B(6, 2, gen, 1.0, 2.0)
        B = (Bs + 0.05 * gen.standard_normal(Bs.shape)) @ random_orthogonal(2, gen)
        assert fac.verify_informative_factor(B, Bs, 5000, RngStream(15, i)).holds


# -- baseline -------------------------------------------------------------------------------------

def test_baseline_exact_recovery_and_min_norm():
    gen = np.random.default_rng(16)
    w = gen.standard_normal(5)
    x = gen.standard_normal((20, 5))
    assert np.allclose(fac.supervised_baseline_factor(np.column_stack([x, x @ w])), w, atol=1e-8)
    xs, ys = gen.standard_normal((3, 5)), gen.standard_normal(3)
    w_mn = fac.supervised_baseline_factor(np.column_stack([xs, ys]))
    assert np.allclose(xs @ w_mn, ys, atol=1e-10)
    assert np.allclose(w_mn, np.linalg.pinv(xs) @ ys, atol=1e-10)


def test_baseline_worse_than_pipeline_small_n():
    gen = np.random.default_rng(1)
    q, _ = np.linalg.qr(gen.standard_normal((50, 3)))
    model = fac.FactorModel(q * 2.0, 2.0)
    b = gen.standard_normal(3)
    beta = fac.RegressionBeta(b / np.linalg.norm(b) * 2.0, 2.0)
    pipe, base = [], []
    for i in range(10):
        labeled = fac.sample_factor_labeled(model, beta, 200, RngStream(17, i).child("lab"))
        pipe.append(fac.pipeline_factor(model, beta, 100000, 200, RngStream(17, i), labeled=labeled)[1])
        base.append(fac.excess_risk_linear(model.B, beta.beta, fac.supervised_baseline_factor(labeled)))
    assert np.median(base) > np.median(pipe)


def test_pipeline_truncated_method_runs():
    gen = np.random.default_rng(18)
    model = fac.FactorModel(random_B(6, 2, gen), 3.0)
    beta = fac.RegressionBeta([0.5, 0.5], 1.0)
    report, risk = fac.pipeline_factor(model, beta, 5000, 300, RngStream(19), method="truncated_projected")
    assert report.erm_method == "truncated_projected" and 0 <= risk < 0.1
    with pytest.raises(ParameterError):
        fac.pipeline_factor(model, beta, 10, 10, RngStream(0), method="lasso")
