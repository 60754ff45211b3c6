import math

import numpy as np
import pytest

from advtrain.attack import AttackSpec
from advtrain.datagen import make_gen_model, sample_dataset, sparse_theta
from advtrain.highdim import (SingularGramError, auto_eta, gram_min_eig_over_d, highdim_stopping_T,
                              interpolation_report, min_norm_interpolator)
from advtrain.network import TwoLayerNet
from advtrain.train import TrainConfig, adv_train_linear


def test_rank_one_example():
    theta = min_norm_interpolator(np.eye(1, 4), np.array([2.0]))
    np.testing.assert_allclose(theta, [2.0, 0, 0, 0])


def test_exact_fit_and_minimal_norm(rng, sparse1000):
    ds = sample_dataset(sparse1000, 20, 0)
    theta = min_norm_interpolator(ds.X, ds.y)
    resid = ds.X @ theta - ds.y
    assert np.linalg.norm(resid) / np.linalg.norm(ds.y) < 1e-8
    assert np.abs(resid).max() < 1e-6 * sparse1000.v
    # null-space directions only add norm
    _, _, Vt = np.linalg.svd(ds.X)
    null = Vt[20:].T
    for _ in range(20):
        z = null @ rng.standard_normal(null.shape[1])
        assert np.linalg.norm(theta) <= np.linalg.norm(theta + z)
    assert np.abs(null.T @ theta).max() < 1e-10


def test_norm_ratio_small(sparse1000):
    for seed in range(20):
        ds = sample_dataset(sparse1000, 20, seed)
        theta = min_norm_interpolator(ds.X, ds.y)
        assert theta @ theta / sparse1000.v2 <= 5 * 20 / 1000


def test_gradient_descent_limit(sparse1000):
    ds = sample_dataset(sparse1000, 20, 1)
    cfg = TrainConfig(eta=auto_eta(ds.X) * 20 / 2, max_iters=10_000)
    traj = adv_train_linear(ds.X, ds.y, AttackSpec("l2", 0.0), cfg)
    np.testing.assert_allclose(traj.final_params, min_norm_interpolator(ds.X, ds.y), atol=1e-4)


def test_singular_gram_rejected():
    X = np.ones((3, 10))
    with pytest.raises(SingularGramError, match="condition"):
        min_norm_interpolator(X, np.ones(3))
    with pytest.raises(ValueError):
        min_norm_interpolator(np.ones((5, 3)), np.ones(5))


def test_stopping_predicate(sparse1000):
    ds = sample_dataset(sparse1000, 20, 2)
    fired = highdim_stopping_T(ds.X, ds.y, sparse1000.v)
    assert fired(min_norm_interpolator(ds.X, ds.y))
    assert not fired(np.zeros(1000))
    with pytest.raises(ValueError):
        highdim_stopping_T(ds.X[:2], ds.y[:2], 1.0)


def test_fig3_instance_has_finite_stopping_time(sparse1000):
    ds = sample_dataset(sparse1000, 20, 3)
    traj = adv_train_linear(ds.X, ds.y, AttackSpec("l2", 0.1, 0.5),
                            TrainConfig(eta=1e-3, max_iters=2000, stop="highdim_threshold"), sparse1000)
    assert traj.stopping_T is not None and traj.stopping_T == len(traj) - 1


def test_null_model_report_is_one(sparse1000):
    ds = sample_dataset(sparse1000, 20, 0)
    rep = interpolation_report(np.zeros(1000), ds.X, ds.y, sparse1000, AttackSpec("l2", 0.1))
    assert rep.pop_risk_over_v2 == 1.0
    assert rep.theta_norm_sq_over_v2 == 0.0


@pytest.mark.parametrize("spec", [AttackSpec("l2", 0.1, 0.5), AttackSpec("linf", 1 / math.sqrt(1000), 1e-4)])
def test_interpolation_failure(sparse1000, spec):
    ds = sample_dataset(sparse1000, 20, 4)
    traj = adv_train_linear(ds.X, ds.y, spec, TrainConfig(eta=1e-3, max_iters=2000))
    rep = interpolation_report(traj.final_params, ds.X, ds.y, sparse1000, spec)
    assert rep.train_loss_over_v2 < 0.05
    assert 0.85 <= rep.pop_risk_over_v2 <= 1.15
    assert rep.train_loss_over_v2 <= rep.pop_risk_over_v2


def test_network_interpolation_report():
    m = make_gen_model(sparse_theta(1000, 10), "identity", 0.1)
    ds = sample_dataset(m, 20, 0)
    rng = np.random.default_rng(0)
    net = TwoLayerNet(rng.standard_normal((1000, 10)) * 1e-3, rng.uniform(-1, 1, 10), "sigmoid")
    rep = interpolation_report(net, ds.X, ds.y, m, AttackSpec("l2", 0.1, 0.1, "fgm"), n_mc=2000)
    assert all(v >= 0 for v in (rep.theta_norm_sq_over_v2, rep.train_loss_over_v2, rep.pop_risk_over_v2))
    lin = TwoLayerNet(net.weights, net.a, "identity")
    rep2 = interpolation_report(lin, ds.X, ds.y, m, AttackSpec("l2", 0.1, 0.1, "fgm"))
    assert rep2.pop_risk_over_v2 == pytest.approx(1.0, abs=0.05)


@pytest.mark.parametrize("d", [1000, 5000])
def test_gram_eigenvalue_order(d):
    m = make_gen_model(sparse_theta(d, 10), "identity", 1.0)
    vals = [gram_min_eig_over_d(sample_dataset(m, 20, s).X) for s in range(20)]
    assert 0.5 <= min(vals) and max(vals) <= 2.0


def test_auto_eta_bound(rng):
    X = rng.standard_normal((10, 30))
    eta = auto_eta(X)
    assert eta * np.linalg.eigvalsh(X.T @ X).max() == pytest.approx(0.9)
