"""Minimum-norm interpolation and interpolation diagnostics for d >> n."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .network import TwoLayerNet
from .risk import empirical_surrogate_loss, monte_carlo_risk, population_risk
from .train import highdim_stop_predicate


class SingularGramError(np.linalg.LinAlgError):
    pass


def min_norm_interpolator(X, y):
    """``X.T @ solve(X @ X.T, y)``, the least-norm exact fit when ``n <= d``.

    The Gram matrix is factored by Cholesky without any ridge term; a Gram
    matrix whose smallest eigenvalue is below ``1e-10 * d`` is rejected.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if n > d:
        raise ValueError(f"interpolation needs n <= d, got n={n}, d={d}")
    gram = X @ X.T
    eig = np.linalg.eigvalsh(gram)
    if eig[0] <= 1e-10 * d:
        cond = eig[-1] / eig[0] if eig[0] > 0 else math.inf
        raise SingularGramError(f"X X^T is numerically singular (min eigenvalue {eig[0]:.3e}, condition {cond:.3e})")
    c, low = linalg.cho_factor(gram, lower=True, check_finite=False)
    return X.T @ linalg.cho_solve((c, low), y, check_finite=False)


def auto_eta(X, factor=0.9):
    """``factor / lambda_max(X.T X)``."""
    return factor / float(np.linalg.norm(X, 2) ** 2)


@dataclass(frozen=True)
class InterpolationReport:
    theta_norm_sq_over_v2: float
    train_loss_over_v2: float
    pop_risk_over_v2: float
    stopping_T: int | None


def interpolation_report(params, X, y, model, spec, stopping_T=None, n_mc=20_000, seed=0):
    """Normalised train loss, population risk and parameter size.

    Linear models use the closed-form risk (the trained coefficients are
    scored against the exact attack); networks use a Monte-Carlo estimate.
    """
    v2 = model.v2
    train = empirical_surrogate_loss(params, X, y, spec)
    if isinstance(params, TwoLayerNet):
        coef = params.effective_coef()
        if params.activation == "identity":
            pop = population_risk(coef, model, spec.epsilon, spec.norm).value
        else:
            pop = monte_carlo_risk(params, model, spec.replace(xi=0.0), n_mc, seed).mean
    else:
        coef = np.asarray(params, dtype=float)
        pop = population_risk(coef, model, spec.epsilon, spec.norm).value
    return InterpolationReport(float(coef @ coef) / v2, train / v2, pop / v2, stopping_T)


def highdim_stopping_T(X, y, v):
    """Predicate on ``theta`` (linear) or a network: has the first-hit stopping rule fired?

    The rule is ``||X theta - y|| / (v sqrt(n)) < 1 / sqrt(log n)``.
    """
    X = np.asarray(X, dtype=float)
    hit = highdim_stop_predicate(X, y, v)

    def fired(params):
        fitted = params.predict(X) if isinstance(params, TwoLayerNet) else X @ np.asarray(params, dtype=float)
        return hit(fitted)

    return fired


def gram_min_eig_over_d(X):
    X = np.asarray(X, dtype=float)
    return float(np.linalg.eigvalsh(X @ X.T)[0] / X.shape[1])
