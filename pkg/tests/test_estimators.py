import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score

from advtrain import (AdversarialLasso, AdversarialLinearRegression, TwoLayerAdversarialRegressor,
                      make_gen_model, sample_dataset, sparse_theta)


@pytest.fixture
def data(ones10):
    ds = sample_dataset(ones10, 300, 0)
    return ds.X, ds.y


def test_params_and_clone():
    est = AdversarialLinearRegression(epsilon=0.3, xi=0.05, eta=0.02)
    params = est.get_params()
    assert params["epsilon"] == 0.3 and params["xi"] == 0.05
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(max_iter=5)
    assert est.max_iter == 5
    net = TwoLayerAdversarialRegressor(hidden=7, activation="relu")
    assert clone(net).get_params()["hidden"] == 7


def test_fit_predict(data):
    X, y = data
    est = AdversarialLinearRegression(epsilon=0.0, eta=0.3, max_iter=300).fit(X, y)
    ols = np.linalg.lstsq(X, y, rcond=None)[0]
    np.testing.assert_allclose(est.coef_, ols, atol=1e-6)
    np.testing.assert_allclose(est.predict(X), X @ ols, atol=1e-5)
    assert est.n_iter_ == 300 and est.n_features_in_ == 10
    assert est.score(X, y) > 0.8


def test_unfitted_and_bad_input(data):
    X, y = data
    with pytest.raises(NotFittedError):
        AdversarialLinearRegression().predict(X)
    with pytest.raises(ValueError):
        AdversarialLinearRegression().fit(X, y[:-1])
    with pytest.raises(ValueError):
        AdversarialLinearRegression(xi="sometimes").fit(X, y)


def test_theorem_schedule_option(data):
    X, y = data
    with pytest.warns(UserWarning):
        est = AdversarialLinearRegression(epsilon=0.5, xi="theorem").fit(X, y)
    assert est.spec_.xi > 0
    assert est.trajectory_.increases() == 0


def test_adversarial_loss_increases_with_eps(data):
    X, y = data
    est = AdversarialLinearRegression(epsilon=0.5, xi=0.1, eta=0.01).fit(X, y)
    assert est.adversarial_loss(X, y, 1.0) > est.adversarial_loss(X, y, 0.5) > est.adversarial_loss(X, y, 0.0)


def test_lasso_estimator():
    m = make_gen_model(sparse_theta(100, 5, 2.0), "identity", 0.25)
    ds = sample_dataset(m, 200, 1)
    est = AdversarialLasso(alpha=0.5, epsilon=0.1, xi=0.01, eta=0.1, max_iter=1500).fit(ds.X, ds.y)
    assert np.count_nonzero(est.coef_) < 20
    with pytest.raises(ValueError):
        AdversarialLasso(alpha=0.0).fit(ds.X, ds.y)


def test_two_layer_estimator_and_cv(data):
    X, y = data
    est = TwoLayerAdversarialRegressor(hidden=20, activation="identity", eta=0.2, max_iter=200, epsilon=0.1)
    est.fit(X, y)
    assert est.coef_.shape == (10,)
    np.testing.assert_allclose(est.predict(X), X @ est.coef_, rtol=1e-10)
    scores = cross_val_score(TwoLayerAdversarialRegressor(hidden=10, max_iter=50), X, y, cv=3)
    assert scores.shape == (3,)
