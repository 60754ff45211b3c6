"""Predictors the attacks and trainers operate on.

Two kinds are supported: a plain coefficient vector (linear model) and
:class:`TwoLayerNet`, the lazy-training network
``f(x) = sum_j phi(x @ theta_j) a_j / sqrt(h)`` with fixed outer weights.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

ACTIVATIONS = ("identity", "sigmoid", "relu")


def _phi(kind, z, scale):
    if kind == "identity":
        return scale * z
    if kind == "sigmoid":
        return expit(z) - 0.5
    return scale * np.maximum(z, 0.0)


def _dphi(kind, z, scale):
    if kind == "identity":
        return np.full_like(z, scale)
    if kind == "sigmoid":
        s = expit(z)
        return s * (1.0 - s)
    # ReLU: midpoint subgradient at exactly zero (matters under zero init)
    return scale * ((z > 0) + 0.5 * (z == 0))


@dataclass
class TwoLayerNet:
    """Two-layer network with trainable first layer ``weights`` (d x h).

    ``activation`` is one of ``"identity"`` (``phi(z) = scale * z``),
    ``"sigmoid"`` (``phi(z) = 1/(1+exp(-z)) - 1/2``) or ``"relu"``
    (``phi(z) = scale * max(z, 0)``).  The outer weights ``a`` are never
    updated.
    """

    weights: np.ndarray
    a: np.ndarray
    activation: str = "sigmoid"
    scale: float = 0.25

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        self.weights = np.array(self.weights, dtype=float)
        self.a = np.array(self.a, dtype=float)
        self.a.setflags(write=False)
        if self.weights.ndim != 2 or self.weights.shape[1] != self.a.shape[0]:
            raise ValueError(f"weights {self.weights.shape} and a {self.a.shape} are inconsistent")

    @property
    def d(self):
        return self.weights.shape[0]

    @property
    def h(self):
        return self.weights.shape[1]

    def with_weights(self, weights):
        return TwoLayerNet(weights, self.a, self.activation, self.scale)

    def slope_at_zero(self):
        """``phi'(0)`` (for ReLU the midpoint ``scale / 2``)."""
        return float(_dphi(self.activation, np.zeros(1), self.scale)[0])

    def predict(self, X):
        Z = np.atleast_2d(X) @ self.weights
        return _phi(self.activation, Z, self.scale) @ self.a / np.sqrt(self.h)

    def input_grad(self, X):
        """Rows of ``df/dx`` at each row of ``X``."""
        Z = np.atleast_2d(X) @ self.weights
        return (_dphi(self.activation, Z, self.scale) * self.a) @ self.weights.T / np.sqrt(self.h)

    def loss_grad(self, X, y):
        """Gradient of ``mean((f(X) - y)**2)`` with respect to ``weights``."""
        X = np.atleast_2d(X)
        Z = X @ self.weights
        resid = _phi(self.activation, Z, self.scale) @ self.a / np.sqrt(self.h) - y
        inner = resid[:, None] * _dphi(self.activation, Z, self.scale) * self.a
        return 2.0 / (X.shape[0] * np.sqrt(self.h)) * (X.T @ inner)

    def effective_coef(self):
        """Linear coefficient ``phi'(0) * weights @ a / sqrt(h)`` of the linearised net."""
        return self.slope_at_zero() * (self.weights @ self.a) / np.sqrt(self.h)

    def balanced(self):
        """Whether ``||a+|| == ||a-||`` (ReLU equivalence condition)."""
        pos = np.linalg.norm(self.a[self.a > 0])
        neg = np.linalg.norm(self.a[self.a < 0])
        return bool(np.isclose(pos, neg, rtol=1e-12, atol=0))


class LinearPredictor:
    """Adapter exposing a coefficient vector through the network interface."""

    def __init__(self, theta):
        self.theta = np.asarray(theta, dtype=float)

    @property
    def d(self):
        return self.theta.shape[0]

    def predict(self, X):
        return np.atleast_2d(X) @ self.theta

    def input_grad(self, X):
        return np.broadcast_to(self.theta, np.atleast_2d(X).shape)

    def effective_coef(self):
        return self.theta


def as_predictor(params):
    if isinstance(params, (TwoLayerNet, LinearPredictor)):
        return params
    return LinearPredictor(params)


def balance_outer_weights(a):
    """Rescale the negative entries of ``a`` so that ``||a+|| == ||a-||``."""
    a = np.array(a, dtype=float)
    pos = np.linalg.norm(a[a > 0])
    neg = np.linalg.norm(a[a < 0])
    if pos == 0 or neg == 0:
        raise ValueError("need both positive and negative outer weights to balance")
    a[a < 0] *= pos / neg
    return a


def uniform_outer_weights(h, rng, balance=False):
    a = rng.uniform(-1.0, 1.0, size=h)
    return balance_outer_weights(a) if balance else a


def vanishing_init(d, h, delta, rng):
    """First-layer weights with i.i.d. ``N(0, 1 / (d h^(1+delta)))`` entries."""
    return rng.standard_normal((d, h)) / np.sqrt(d * h ** (1.0 + delta))
