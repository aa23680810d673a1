"""Scikit-learn-style estimator wrappers."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from sklearn.base import clone

from cranest.estimators import GbpStateEstimator, MmseStateEstimator


@pytest.fixture
def instance():
    r = np.random.default_rng(700)
    a = r.normal(size=(12, 5))
    h = r.normal(size=(12, 12)) * (r.random((12, 12)) < 0.5)
    for i in range(12):
        if not h[i].any():
            h[i, r.integers(12)] = 1.0
    s = r.normal(size=5)
    y = h @ (a @ s) + 0.01 * r.normal(size=12)
    return a, h, y, s


class TestSklearnSurface:
    def test_get_set_params_round_trip(self):
        est = GbpStateEstimator(damping=0.25, sigma_n_sq=1e-2)
        params = est.get_params()
        assert params["damping"] == 0.25
        assert params["sigma_n_sq"] == 1e-2
        est.set_params(damping=0.5)
        assert est.damping == 0.5

    def test_clone_preserves_hyperparameters(self):
        est = MmseStateEstimator(sigma_s_sq=123.0)
        assert clone(est).sigma_s_sq == 123.0

    def test_default_prior_matches_package_default(self):
        assert GbpStateEstimator().sigma_s_sq == 1e4
        assert MmseStateEstimator().sigma_s_sq == 1e4

    def test_predict_before_fit_raises(self):
        with pytest.raises(AttributeError, match="not fitted"):
            GbpStateEstimator().predict(np.eye(2))


class TestFitting:
    def test_direct_measurements(self, instance):
        a, _, _, s = instance
        x = a @ s
        est = MmseStateEstimator(sigma_n_sq=1e-8, sigma_s_sq=1e6).fit(a, x)
        assert_allclose(est.coef_, s, atol=1e-4)
        assert est.coef_var_.shape == (5,)
        assert np.all(est.coef_var_ > 0)

    def test_gbp_matches_mmse_through_channel(self, instance):
        a, h, y, _ = instance
        kw = dict(sigma_n_sq=1e-4, sigma_m_sq=1e-4, sigma_s_sq=1e4)
        ref = MmseStateEstimator(**kw).fit(a, y, channel=h)
        gbp = GbpStateEstimator(max_iterations=3000, tolerance=1e-10,
                                damping=0.3, **kw)
        gbp.fit(a, y, channel=h)
        assert gbp.converged_
        assert np.max(np.abs(gbp.coef_ - ref.coef_)) < 1e-6
        assert gbp.x_means_.shape == (12,)
        assert gbp.n_iter_ >= 2

    def test_predict_maps_back_to_measurement_space(self, instance):
        a, _, _, s = instance
        x = a @ s
        est = MmseStateEstimator(sigma_n_sq=1e-8, sigma_s_sq=1e6).fit(a, x)
        assert_allclose(est.predict(a), x, atol=1e-3)

    def test_predict_checks_width(self, instance):
        a, _, _, s = instance
        est = MmseStateEstimator().fit(a, a @ s)
        with pytest.raises(ValueError, match="columns"):
            est.predict(np.ones((3, 4)))

    def test_observation_length_checked(self, instance):
        a, h, y, _ = instance
        with pytest.raises(ValueError):
            MmseStateEstimator().fit(a, y[:-1], channel=h)

    def test_gbp_reports_nonconvergence_honestly(self, instance):
        a, h, y, _ = instance
        est = GbpStateEstimator(max_iterations=1, damping=0.0, sigma_m_sq=1e-4)
        est.fit(a, y, channel=h)
        assert not est.converged_
        assert est.n_iter_ == 1
