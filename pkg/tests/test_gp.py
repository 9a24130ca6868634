import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from wafergp import gp as gpmod
from wafergp.gp import (
    DegenerateTargetsWarning,
    GPOptions,
    IllConditionedGram,
    KernelParams,
    cross_kernel,
    fit_hyperparameters,
    gp_fit,
    gp_predict,
    gpr,
    gram_matrix,
    kernel_eval,
    log_marginal_likelihood,
    posterior_covariance,
)


def dense_oracle(params, X, y, Xs, center=True):
    """Posterior mean/variance by explicit matrix inversion, kernel by loops."""
    def k(a, b):
        return params.theta1 * math.exp(-((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2) / params.theta2)

    n = len(X)
    Z = np.array([[k(X[i], X[j]) for j in range(n)] for i in range(n)]) + params.nugget * np.eye(n)
    Zinv = np.linalg.inv(Z)
    m = y.mean() if center else 0.0
    mu, v = [], []
    for xs in Xs:
        z = np.array([k(xi, xs) for xi in X])
        mu.append(m + z @ Zinv @ (y - m))
        v.append(params.theta1 - z @ Zinv @ z)
    return np.array(mu), np.maximum(np.array(v), 0.0)


def random_instance(rng, n, m, side=12):
    pts = rng.choice(side * side, size=n + m, replace=False)
    P = np.stack([pts % side, pts // side], axis=1).astype(float)
    y = np.sin(P[:n, 0] / 3.0) + 0.3 * P[:n, 1] / side + 0.05 * rng.standard_normal(n)
    params = KernelParams(float(rng.uniform(0.2, 3.0)), float(rng.uniform(1.0, 30.0)),
                          float(rng.uniform(1e-3, 1e-1)))
    return P[:n], y, P[n:], params


class TestKernel:
    def test_self_is_theta1(self):
        assert kernel_eval(KernelParams(3.5, 2.0), (4, 7), (4, 7)) == 3.5

    def test_known_value(self):
        assert kernel_eval(KernelParams(2.0, 4.0), (0, 0), (1, 0)) == pytest.approx(1.557602, abs=1e-6)
        assert kernel_eval(KernelParams(2.0, 4.0), (0, 0), (1, 0)) == pytest.approx(2 * math.exp(-0.25))

    def test_decay(self):
        p = KernelParams(1.7, 1.0)
        assert kernel_eval(p, (0, 0), (5, 6)) < 1e-12 * p.theta1

    def test_params_validated(self):
        with pytest.raises(ValueError):
            KernelParams(0.0, 1.0)
        with pytest.raises(ValueError):
            KernelParams(1.0, 1.0, -1e-3)

    def test_gram_single(self):
        K = gram_matrix(KernelParams(2.0, 1.0, 0.5), [(3, 3)])
        assert K.shape == (1, 1) and K[0, 0] == 2.5

    def test_gram_collinear(self):
        K = gram_matrix(KernelParams(1.0, 1.0, 0.0), [(0, 0), (1, 0), (2, 0)])
        e1, e4 = math.exp(-1), math.exp(-4)
        np.testing.assert_allclose(K, [[1, e1, e4], [e1, 1, e1], [e4, e1, 1]], rtol=1e-15)

    @given(st.integers(0, 2**31), st.integers(1, 25))
    def test_gram_symmetric_and_factorizable(self, seed, n):
        rng = np.random.default_rng(seed)
        X = rng.integers(-20, 20, size=(n, 2))
        p = KernelParams(float(rng.uniform(0.1, 5)), float(rng.uniform(0.5, 50)), gpmod.NUGGET_FLOOR)
        K = gram_matrix(p, X)
        assert np.array_equal(K, K.T)
        model = gp_fit(X, rng.standard_normal(n), p)  # escalates if needed, never raises
        assert np.all(np.isfinite(model.factor))


class TestLikelihood:
    def test_matches_scipy_logpdf(self, rng):
        X, y, _, p = random_instance(rng, 25, 0)
        yc = y - y.mean()
        ref = multivariate_normal(np.zeros(len(y)), gram_matrix(p, X)).logpdf(yc)
        assert log_marginal_likelihood(p, X, yc) == pytest.approx(ref, rel=1e-10)

    def test_spectral_matches_cholesky(self, rng):
        X, y, _, _ = random_instance(rng, 20, 0)
        yc = y - y.mean()
        from scipy.linalg import eigh
        from scipy.spatial.distance import cdist
        t2 = 7.0
        lam, Q = eigh(np.exp(-cdist(X, X, "sqeuclidean") / t2))
        q2 = (Q.T @ yc) ** 2
        t1s, ns = np.array([0.3, 2.0]), np.array([1e-4, 0.05])
        grid = gpmod._lml_spectral(np.clip(lam, 0, None), q2, t1s, ns)
        for i, t1 in enumerate(t1s):
            for j, nug in enumerate(ns):
                ref = log_marginal_likelihood(KernelParams(t1, t2, nug), X, yc)
                assert grid[i, j] == pytest.approx(ref, rel=1e-8)


class TestFit:
    def test_degenerate_targets(self):
        X = [(0, 0), (1, 0), (2, 0)]
        with pytest.warns(DegenerateTargetsWarning):
            p = fit_hyperparameters(X, [0.5, 0.5, 0.5])
        assert p == KernelParams(gpmod.VAR_FLOOR, GPOptions().theta2_init, GPOptions().nugget_floor)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            fit_hyperparameters([(0, 0), (1, 1)], [1.0, 2.0])

    def test_beats_grid(self, rng):
        X, y, _, _ = random_instance(rng, 40, 0)
        p = fit_hyperparameters(X, y)
        yc = y - y.mean()
        best = log_marginal_likelihood(p, X, yc)
        var = y.var()
        for t1 in np.geomspace(1e-3 * var, 1e3 * var, 8):
            for nug in np.geomspace(1e-8 * var, 1e-1 * var, 5):
                for t2 in (1.0, 10.0, 100.0):
                    assert best >= log_marginal_likelihood(KernelParams(t1, t2, nug), X, yc) - 1e-9

    def test_deterministic(self, rng):
        X, y, _, _ = random_instance(rng, 30, 0)
        assert fit_hyperparameters(X, y) == fit_hyperparameters(X, y)

    def test_recovers_lengthscale(self):
        truth = KernelParams(1.0, 8.0, 0.01)
        est = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            pts = rng.choice(30 * 30, size=200, replace=False)
            X = np.stack([pts % 30, pts // 30], axis=1).astype(float)
            y = rng.multivariate_normal(np.zeros(200), gram_matrix(truth, X))
            est.append(fit_hyperparameters(X, y).theta2)
        assert 4.0 <= np.median(est) <= 16.0

    def test_scale_equivariance(self, rng):
        X, y, _, _ = random_instance(rng, 40, 0)
        p1 = fit_hyperparameters(X, y)
        p2 = fit_hyperparameters(X, 2 * y)
        assert p2.theta1 / p1.theta1 == pytest.approx(4.0, rel=0.1)
        assert p2.theta2 == pytest.approx(p1.theta2, rel=0.1)

    def test_options_roundtrip(self):
        o = GPOptions(grid=(4, 4, 3), refine_tol=1e-2)
        assert GPOptions.from_dict(o.to_dict()) == o
        with pytest.raises(ValueError, match="unknown"):
            GPOptions.from_dict({"bogus": 1})
        with pytest.raises(ValueError):
            GPOptions(thin_sites="nope")


class TestPredict:
    def test_single_point_alpha(self):
        p = KernelParams(2.0, 3.0, 0.5)
        m = gp_fit([(1, 1)], [5.0], p, GPOptions(center=False))
        assert m.alpha[0] == pytest.approx(5.0 / 2.5)

    def test_residual(self, rng):
        X, y, _, p = random_instance(rng, 30, 0)
        m = gp_fit(X, y, p)
        yc = y - y.mean()
        K = gram_matrix(p, X, nugget=m.params.nugget)
        assert np.linalg.norm(K @ m.alpha - yc) / np.linalg.norm(yc) <= 1e-8

    def test_duplicate_coordinate_escalates(self):
        X = [(0, 0), (0, 0), (3, 0)]
        p = KernelParams(1.0, 4.0, 0.0)
        m = gp_fit(X, [1.0, 1.2, 0.0], p, GPOptions(nugget_floor=0.0))
        assert m.escalated and m.params.nugget > 0

    def test_ill_conditioned(self, monkeypatch):
        def broken(*a, **k):
            raise np.linalg.LinAlgError("nope")
        monkeypatch.setattr(gpmod, "cholesky", broken)
        with pytest.raises(IllConditionedGram, match="ill-conditioned Gram"):
            gp_fit([(0, 0), (1, 0)], [0.0, 1.0], KernelParams(1.0, 1.0))

    def test_interpolates_training_point(self, rng):
        X, y, _, p = random_instance(rng, 20, 0)
        p = KernelParams(p.theta1, p.theta2, 1e-8)
        pr = gp_predict(gp_fit(X, y, p), X[:5])
        assert np.max(np.abs(pr.means - y[:5])) <= 1e-3 * np.max(np.abs(y))
        assert np.all(pr.variances <= 1e-6 * p.theta1)

    def test_prior_reversion_uncentred(self, rng):
        X, y, _, _ = random_instance(rng, 15, 0)
        p = KernelParams(1.3, 1.0, 1e-4)
        far = np.array([[200.0, 200.0]])
        pr = gp_predict(gp_fit(X, y, p, GPOptions(center=False)), far)
        assert abs(pr.means[0]) <= 1e-9 * np.max(np.abs(y))
        assert pr.variances[0] == pytest.approx(p.theta1, abs=1e-9)

    def test_prior_reversion_to_mean(self, rng):
        X, y, _, _ = random_instance(rng, 15, 0)
        pr = gp_predict(gp_fit(X, y, KernelParams(1.3, 1.0, 1e-4)), [[200.0, 200.0]])
        assert pr.means[0] == pytest.approx(y.mean(), abs=1e-12)

    @given(st.integers(0, 2**31), st.integers(1, 50), st.integers(1, 60))
    def test_dense_inverse_oracle(self, seed, n, m):
        rng = np.random.default_rng(seed)
        X, y, Xs, p = random_instance(rng, n, m, side=20)
        pr = gp_predict(gp_fit(X, y, p), Xs)
        mu, v = dense_oracle(p, X, y, Xs)
        np.testing.assert_allclose(pr.means, mu, rtol=1e-6, atol=1e-12)
        np.testing.assert_allclose(pr.variances, v, rtol=1e-6, atol=1e-9 * p.theta1)

    def test_variance_never_negative(self, rng):
        X, y, Xs, _ = random_instance(rng, 40, 40)
        pr = gp_predict(gp_fit(X, y, KernelParams(1.0, 500.0, 1e-8)), Xs)
        assert np.all(pr.variances >= 0)
        assert pr.meta["clamp"] >= 0

    def test_posterior_covariance_diagonal(self, rng):
        X, y, Xs, p = random_instance(rng, 20, 15)
        m = gp_fit(X, y, p)
        C = posterior_covariance(m, Xs)
        np.testing.assert_allclose(np.diag(C), gp_predict(m, Xs).variances, atol=1e-12)

    @given(st.integers(0, 2**31))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        X, y, Xs, p = random_instance(rng, 25, 10)
        a = gp_predict(gp_fit(X, y, p), Xs)
        perm = rng.permutation(len(y))
        b = gp_predict(gp_fit(X[perm], y[perm], p), Xs)
        np.testing.assert_allclose(b.means, a.means, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(b.variances, a.variances, rtol=1e-10, atol=1e-12)

    @given(st.integers(0, 2**31))
    def test_variance_monotone_in_data(self, seed):
        rng = np.random.default_rng(seed)
        X, y, Xs, p = random_instance(rng, 15, 20)
        v0 = gp_predict(gp_fit(X[:-1], y[:-1], p), Xs).variances
        v1 = gp_predict(gp_fit(X, y, p), Xs).variances
        assert np.all(v1 <= v0 + 1e-9 * p.theta1)

    def test_gpr_wrapper(self, rng):
        X, y, Xs, _ = random_instance(rng, 30, 10)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            pr, model = gpr(X, y, Xs)
        assert len(pr) == 10 and model.n == 30

    def test_cross_kernel_shape(self):
        assert cross_kernel(KernelParams(1, 1), np.zeros((3, 2)), np.zeros((5, 2))).shape == (3, 5)
