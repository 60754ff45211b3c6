"""Population adversarial risks, Monte-Carlo oracle and the robust optimum."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .attack import AttackSpec, linear_attack, network_attack
from .datagen import sample_design
from .network import LinearPredictor, TwoLayerNet

C0 = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class RiskReport:
    value: float
    normalized: float
    standard: float
    quadratic: float
    cross: float


def _sigma_norm_sq(vec, model):
    if model.is_identity:
        return float(vec @ vec)
    if model.kind == "diagonal":
        return float(vec @ (np.diag(model.cov) * vec))
    return float(vec @ model.cov @ vec)


def _standard_term(theta, model):
    diff = np.asarray(theta, dtype=float) - model.theta0
    return _sigma_norm_sq(diff, model) + model.noise_var


def _report(std, norm_theta, model, epsilon):
    quad = epsilon ** 2 * norm_theta ** 2
    cross = 2.0 * epsilon * C0 * norm_theta * math.sqrt(std)
    value = std + quad + cross
    return RiskReport(value, value / model.v2, std, quad, cross)


def population_risk_l2(theta, model, epsilon):
    """Closed-form adversarial risk of a linear model under an L2 attack."""
    std = _standard_term(theta, model)
    return _report(std, float(np.linalg.norm(theta)), model, epsilon)


def population_risk_linf(theta, model, epsilon):
    """Closed-form adversarial risk under an L-infinity attack (``||theta||_1`` in place of ``||theta||_2``)."""
    std = _standard_term(theta, model)
    return _report(std, float(np.abs(theta).sum()), model, epsilon)


def population_risk(theta, model, epsilon, norm="l2"):
    if norm == "l2":
        return population_risk_l2(theta, model, epsilon)
    return population_risk_linf(theta, model, epsilon)


def _attacked_losses(params, X, y, spec):
    if isinstance(params, TwoLayerNet):
        delta = network_attack(params, X, y, spec)
        return (params.predict(X + delta) - y) ** 2
    theta = params.theta if isinstance(params, LinearPredictor) else np.asarray(params, dtype=float)
    if spec.method == "exact":
        delta = linear_attack(theta, X, y, spec)
    else:
        delta = network_attack(LinearPredictor(theta), X, y, spec)
    return ((X + delta) @ theta - y) ** 2


def empirical_surrogate_loss(params, X, y, spec):
    """Mean squared loss at the surrogate-attacked inputs."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    return float(np.mean(_attacked_losses(params, X, y, spec)))


def exact_linear_train_loss(theta, X, y, epsilon, norm="l2"):
    """Empirical loss under the exact attack, ``mean((|r| + eps ||theta||_q)^2)``."""
    r = np.abs(X @ theta - y)
    size = np.linalg.norm(theta) if norm == "l2" else np.abs(theta).sum()
    return float(np.mean((r + epsilon * size) ** 2))


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    se: float
    n: int


def monte_carlo_risk(params, model, spec, n_mc, seed, batch_size=200_000):
    """Monte-Carlo estimate of the adversarial (surrogate) population loss.

    Fresh ``(x, noise)`` pairs are drawn from ``model`` in batches; batch
    ``b`` uses the ``b``-th child of ``SeedSequence(seed)``, so the estimate
    does not depend on anything but ``(params, model, spec, n_mc, seed,
    batch_size)``.  The standard error is ``sd / sqrt(n_mc)``.
    """
    n_mc = int(n_mc)
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    n_batches = -(-n_mc // batch_size)
    children = np.random.SeedSequence(seed).spawn(n_batches)
    count, mean, m2 = 0, 0.0, 0.0
    remaining = n_mc
    for child in children:
        m = min(batch_size, remaining)
        remaining -= m
        rng = np.random.default_rng(child)
        X = sample_design(model, m, rng)
        y = X @ model.theta0 + rng.standard_normal(m) * math.sqrt(model.noise_var)
        losses = _attacked_losses(params, X, y, spec)
        b_mean = float(losses.mean())
        b_m2 = float(((losses - b_mean) ** 2).sum())
        delta = b_mean - mean
        tot = count + m
        mean += delta * m / tot
        m2 += b_m2 + delta ** 2 * count * m / tot
        count = tot
    sd = math.sqrt(m2 / (count - 1)) if count > 1 else 0.0
    return MCEstimate(mean, sd / math.sqrt(count), count)


@dataclass(frozen=True)
class RobustOptimum:
    theta_star: np.ndarray
    r_star: float
    kappa: float | None
    method: str


def null_threshold_bound(model):
    """Smallest ``eps`` at which ``theta = 0`` is a subgradient-stationary point of the L2 risk."""
    return float(np.linalg.norm(model.cov @ model.theta0) / (C0 * model.v))


def _path_shrink(model, epsilon):
    """Minimise along ``c * theta0``; only valid for isotropic covariance."""
    risk = lambda c: population_risk_l2(c * model.theta0, model, epsilon).value
    res = optimize.minimize_scalar(risk, bounds=(0.0, 1.0), method="bounded",
                                   options={"xatol": 1e-13, "maxiter": 2000})
    if not res.success:
        raise RuntimeError(f"scalar search did not converge on [0, 1]: {res.message}")
    c = float(res.x)
    if risk(0.0) <= res.fun:
        c = 0.0
    theta = c * model.theta0
    kappa = (1.0 / c - 1.0) if c > 0 else None
    return RobustOptimum(theta, population_risk_l2(theta, model, epsilon).value, kappa, "collinear")


def _kappa_path(model, epsilon):
    w, V = np.linalg.eigh(model.cov)
    proj = V.T @ model.theta0
    theta_of = lambda k: V @ (w / (w + k) * proj)

    def balance(k):
        th = theta_of(k)
        nt = np.linalg.norm(th)
        if nt == 0:
            return -math.inf
        std = _standard_term(th, model)
        alpha = 1.0 + epsilon * C0 * nt / math.sqrt(std)
        beta = epsilon ** 2 + epsilon * C0 * math.sqrt(std) / nt
        return k - beta / alpha

    null = RobustOptimum(np.zeros(model.d), model.v2, None, "null")
    lo, hi = 1e-12, 1.0
    if balance(lo) > 0:
        lo = 0.0
    while balance(hi) < 0:
        hi *= 4.0
        if hi > 1e15:
            return null
    k = optimize.brentq(balance, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    theta = theta_of(k)
    value = population_risk_l2(theta, model, epsilon).value
    if value > model.v2:
        return null
    return RobustOptimum(theta, value, float(k), "kappa")


def optimal_theta(model, epsilon, norm="l2"):
    """Minimiser ``theta*`` and minimum ``R*`` of the population adversarial risk.

    For L2 the optimum has the form ``(Sigma + kappa I)^-1 Sigma theta0``:
    with isotropic covariance this is a scalar search along ``theta0``,
    otherwise ``kappa`` is found as the root of the stationarity balance.
    ``theta* = 0`` is returned when the null model wins.  L-infinity optima
    are found by direct numerical minimisation.
    """
    epsilon = float(epsilon)
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if epsilon == 0:
        theta = np.array(model.theta0)
        return RobustOptimum(theta, model.noise_var, 0.0, "exact")
    if norm == "linf":
        return _optimal_linf(model, epsilon)
    if model.is_identity:
        return _path_shrink(model, epsilon)
    return _kappa_path(model, epsilon)


def _risk_and_grad_l2(theta, model, epsilon):
    diff = theta - model.theta0
    std = float(diff @ model.cov @ diff) + model.noise_var
    nt = float(np.linalg.norm(theta))
    value = std + epsilon ** 2 * nt ** 2 + 2 * epsilon * C0 * nt * math.sqrt(std)
    g_std = 2.0 * model.cov @ diff
    grad = g_std * (1.0 + epsilon * C0 * nt / math.sqrt(std)) + 2 * epsilon ** 2 * theta
    if nt > 0:
        grad = grad + 2 * epsilon * C0 * math.sqrt(std) * theta / nt
    return value, grad


def optimal_theta_descent(model, epsilon, x0=None):
    """Full-dimensional cross-check of :func:`optimal_theta` (quasi-Newton on the smooth region)."""
    x0 = np.array(model.theta0 if x0 is None else x0, dtype=float)
    res = optimize.minimize(_risk_and_grad_l2, x0, args=(model, epsilon), jac=True,
                            method="L-BFGS-B", options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10_000})
    theta = res.x
    if model.v2 <= res.fun:
        theta = np.zeros(model.d)
    return RobustOptimum(theta, population_risk_l2(theta, model, epsilon).value, None, "descent")


def _soft_threshold_path(model, epsilon):
    t0 = model.theta0

    def theta_of(tau):
        return np.sign(t0) * np.maximum(np.abs(t0) - tau, 0.0)

    def balance(tau):
        th = theta_of(tau)
        l1 = np.abs(th).sum()
        std = _standard_term(th, model)
        alpha = 1.0 + epsilon * C0 * l1 / math.sqrt(std)
        beta = epsilon ** 2 * l1 + epsilon * C0 * math.sqrt(std)
        return tau - beta / alpha

    top = float(np.abs(t0).max())
    null = RobustOptimum(np.zeros(model.d), model.v2, None, "null")
    if top == 0 or balance(top) < 0:
        return null
    tau = optimize.brentq(balance, 0.0, top, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    theta = theta_of(tau)
    value = population_risk_linf(theta, model, epsilon).value
    if value > model.v2:
        return null
    return RobustOptimum(theta, value, None, "soft-threshold")


def _optimal_linf(model, epsilon):
    if model.is_identity:
        return _soft_threshold_path(model, epsilon)
    best = None
    for x0 in (np.array(model.theta0), 0.5 * model.theta0):
        res = optimize.minimize(lambda t: population_risk_linf(t, model, epsilon).value, x0,
                                method="Powell", options={"xtol": 1e-10, "ftol": 1e-14, "maxiter": 200_000})
        if best is None or res.fun < best.fun:
            best = res
    theta = best.x
    theta[np.abs(theta) < 1e-8] = 0.0
    value = population_risk_linf(theta, model, epsilon).value
    if model.v2 <= value:
        return RobustOptimum(np.zeros(model.d), model.v2, None, "null")
    return RobustOptimum(theta, value, None, "numeric")


def null_threshold(model, hi=None, tol=1e-10):
    """Locate numerically the smallest ``eps`` for which the L2 optimum is ``theta = 0``."""
    def is_null(eps):
        if model.is_identity:
            return not np.any(_path_shrink(model, eps).theta_star)
        return not np.any(_kappa_path(model, eps).theta_star)

    lo = 0.0
    hi = 1.0 if hi is None else hi
    while not is_null(hi):
        lo, hi = hi, 2 * hi
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if is_null(mid):
            hi = mid
        else:
            lo = mid
    return hi


def sparsity_of_optimum(model, epsilon, tol=1e-8):
    """Support mask ``|theta*_i| > tol`` of the L2 robust optimum."""
    return np.abs(optimal_theta(model, epsilon).theta_star) > tol


def risk_csv_rows(epsilons, xi, norm, theta, model, mc=None):
    """Rows ``{epsilon, xi, norm, value, normalized, se}`` for a risk sweep."""
    rows = []
    for i, eps in enumerate(epsilons):
        rep = population_risk(theta, model, eps, norm)
        se = "" if mc is None else mc[i].se
        rows.append({"epsilon": eps, "xi": xi, "norm": norm, "value": rep.value,
                     "normalized": rep.normalized, "se": se})
    return rows
