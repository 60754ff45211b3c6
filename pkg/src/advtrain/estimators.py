"""scikit-learn compatible wrappers around the adversarial trainers."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .attack import AttackSpec
from .network import TwoLayerNet, uniform_outer_weights
from .risk import empirical_surrogate_loss
from .train import (TrainConfig, adv_train_linear, adv_train_two_layer,
                    schedule_from_theorem)


class AdversarialLinearRegression(RegressorMixin, BaseEstimator):
    """Linear regression fitted by attack-then-descend adversarial training.

    Parameters
    ----------
    epsilon : float
        Attack strength.
    xi : float or "theorem"
        Smoothing of the surrogate attack.  ``"theorem"`` picks ``xi``,
        ``eta`` and ``max_iter`` from the low-dimensional convergence
        schedule (``L`` controls its constant).
    norm : {"l2", "linf"}
    eta : float
        Step size.
    max_iter : int
    alpha : float
        L1 penalty; a soft-threshold step follows every gradient step.
    init : {"zero", "ols"} or array
    stop : {"fixed_T", "highdim_threshold"} or ("grad_norm", tol)

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    trajectory_ : Trajectory
    n_iter_ : int
    """

    def __init__(self, epsilon=0.1, xi=0.1, norm="l2", eta=0.01, max_iter=1000, alpha=0.0,
                 init="zero", stop="fixed_T", L=10.0):
        self.epsilon = epsilon
        self.xi = xi
        self.norm = norm
        self.eta = eta
        self.max_iter = max_iter
        self.alpha = alpha
        self.init = init
        self.stop = stop
        self.L = L

    def _resolved(self, X, y):
        xi, eta, T = self.xi, self.eta, self.max_iter
        if isinstance(xi, str):
            if xi != "theorem":
                raise ValueError(f"xi must be a float or 'theorem', got {xi!r}")
            sched = schedule_from_theorem(y, X.shape[1], "linear", L=self.L)
            xi, eta, T = sched.xi, sched.eta, sched.T
        return AttackSpec(self.norm, float(self.epsilon), float(xi)), \
            TrainConfig(eta=eta, max_iters=T, init=self.init, lambda_l1=self.alpha, stop=self.stop)

    def fit(self, X, y, model=None):
        """Fit on ``(X, y)``; ``model`` (a GenModel) adds population risk to the trajectory."""
        X, y = check_X_y(X, y, y_numeric=True)
        spec, config = self._resolved(X, y)
        self.spec_ = spec
        self.trajectory_ = adv_train_linear(X, y, spec, config, model)
        self.coef_ = self.trajectory_.final_params
        self.n_iter_ = len(self.trajectory_) - 1
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_

    def adversarial_loss(self, X, y, epsilon=None, xi=0.0):
        """Mean squared loss of the fitted model under an attack on ``(X, y)``."""
        check_is_fitted(self, "coef_")
        X, y = check_X_y(X, y, y_numeric=True)
        eps = self.epsilon if epsilon is None else epsilon
        return empirical_surrogate_loss(self.coef_, X, y, AttackSpec(self.norm, eps, xi))


class AdversarialLasso(AdversarialLinearRegression):
    """:class:`AdversarialLinearRegression` with a required L1 penalty."""

    def __init__(self, alpha=0.1, epsilon=0.1, xi=0.01, norm="l2", eta=0.01, max_iter=1000,
                 init="zero", stop="fixed_T", L=10.0):
        super().__init__(epsilon=epsilon, xi=xi, norm=norm, eta=eta, max_iter=max_iter,
                         alpha=alpha, init=init, stop=stop, L=L)

    def fit(self, X, y, model=None):
        if not self.alpha > 0:
            raise ValueError("AdversarialLasso needs alpha > 0")
        return super().fit(X, y, model)


class TwoLayerAdversarialRegressor(RegressorMixin, BaseEstimator):
    """Lazy-training two-layer network ``sum_j phi(x @ theta_j) a_j / sqrt(h)``.

    Only the first layer is trained.  ``a`` defaults to ``Uniform[-1, 1]``
    draws (balanced for ReLU when ``balance=True``).  ``init_delta`` selects
    the vanishing initialisation; ``None`` means zero initialisation.
    """

    def __init__(self, hidden=50, activation="sigmoid", scale=0.25, a=None, balance=False,
                 epsilon=0.1, xi=0.01, norm="l2", method="fgm", pgd_steps=10, eta=0.2,
                 max_iter=1000, init_delta=0.5, random_state=0):
        self.hidden = hidden
        self.activation = activation
        self.scale = scale
        self.a = a
        self.balance = balance
        self.epsilon = epsilon
        self.xi = xi
        self.norm = norm
        self.method = method
        self.pgd_steps = pgd_steps
        self.eta = eta
        self.max_iter = max_iter
        self.init_delta = init_delta
        self.random_state = random_state

    def fit(self, X, y, model=None):
        X, y = check_X_y(X, y, y_numeric=True)
        rng = np.random.default_rng(self.random_state)
        a = uniform_outer_weights(self.hidden, rng, self.balance) if self.a is None else np.asarray(self.a, float)
        init = "zero" if self.init_delta is None else ("vanishing", self.init_delta)
        net = TwoLayerNet(np.zeros((X.shape[1], a.shape[0])), a, self.activation, self.scale)
        spec = AttackSpec(self.norm, self.epsilon, self.xi, self.method, self.pgd_steps)
        config = TrainConfig(eta=self.eta, max_iters=self.max_iter, init=init)
        self.trajectory_ = adv_train_two_layer(X, y, net, spec, config, model, rng=rng)
        self.net_ = self.trajectory_.final_params
        self.coef_ = self.net_.effective_coef()
        self.n_iter_ = len(self.trajectory_) - 1
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        return self.net_.predict(check_array(X))
