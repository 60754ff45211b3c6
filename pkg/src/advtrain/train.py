"""Attack-then-descend adversarial training for linear models and two-layer nets."""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .attack import fgm_attack, linear_attack, pgd_attack
from .network import TwoLayerNet, vanishing_init
from .risk import (exact_linear_train_loss, monte_carlo_risk, optimal_theta,
                   population_risk)

TRAJECTORY_COLUMNS = ("t", "train_loss_surrogate", "train_loss_exact", "pop_risk",
                      "grad_norm", "theta_norm", "theta_l1")


class TrainingDiverged(RuntimeError):
    def __init__(self, message, trajectory):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass
class TrainConfig:
    """Optimiser settings.

    ``init`` is ``"zero"``, ``"ols"`` (least squares on clean data, linear
    only), ``("vanishing", delta)`` (networks) or an explicit array.  ``stop``
    is ``"fixed_T"``, ``"highdim_threshold"`` or ``("grad_norm", tol)``.
    ``snapshot_every = k`` keeps the full parameters every ``k`` iterations
    (0 keeps only the final ones).  ``eval_every`` controls how often
    Monte-Carlo population risk is computed for networks (0: only at the end).
    """

    eta: float = 0.01
    max_iters: int = 1000
    init: object = "zero"
    lambda_l1: float = 0.0
    stop: object = "fixed_T"
    snapshot_every: int = 0
    eval_every: int = 0
    n_mc: int = 10_000
    mc_seed: int = 0
    init_seed: int = 0
    divergence_factor: float = 1e12
    raise_on_divergence: bool = False
    track_highdim_T: bool = False
    track_grad_gap: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise ValueError(f"eta must be a positive finite number, got {self.eta}")
        if int(self.max_iters) < 0:
            raise ValueError("max_iters must be a non-negative integer")
        if not self.lambda_l1 >= 0:
            raise ValueError("lambda_l1 must be >= 0")
        stop = self.stop
        if not (stop in ("fixed_T", "highdim_threshold")
                or (isinstance(stop, (tuple, list)) and len(stop) == 2 and stop[0] == "grad_norm")):
            raise ValueError(f"unsupported stop rule {stop!r}")


@dataclass
class Trajectory:
    """Per-iteration scalars (``columns``) plus parameter snapshots.

    Row ``t`` describes the parameters after ``t`` updates.  ``coef`` holds
    the linear coefficient (the effective one for networks) at every row.
    """

    columns: dict = field(default_factory=lambda: {c: [] for c in TRAJECTORY_COLUMNS})
    coef: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    final_params: object = None
    stopping_T: int | None = None
    diverged: bool = False

    def append(self, **row):
        for c in TRAJECTORY_COLUMNS:
            self.columns[c].append(float(row.pop(c)))
        for k, v in row.items():
            self.extras.setdefault(k, []).append(float(v))

    def __len__(self):
        return len(self.columns["t"])

    def array(self, name):
        if name in self.columns:
            return np.asarray(self.columns[name])
        return np.asarray(self.extras[name])

    def coef_path(self):
        return np.asarray(self.coef)

    def rows(self):
        names = list(TRAJECTORY_COLUMNS) + sorted(self.extras)
        data = [self.array(n) for n in names]
        return names, [[col[i] for col in data] for i in range(len(self))]

    def increases(self, name="train_loss_surrogate", start=1, tol=1e-12):
        """Number of steps ``t -> t+1`` (``t >= start``) where ``name`` rises by more than ``tol``."""
        v = self.array(name)[start:]
        return int(np.sum(np.diff(v) > tol))


def prox_l1(theta, threshold):
    """Soft thresholding ``sign(theta) * max(|theta| - threshold, 0)``."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    theta = np.asarray(theta, dtype=float)
    return np.sign(theta) * np.maximum(np.abs(theta) - threshold, 0.0)


def attacked_inputs(params, X, y, spec, rng=None):
    """``X + delta`` with the surrogate attack appropriate to ``params``."""
    if isinstance(params, TwoLayerNet):
        if spec.method == "pgd":
            return X + pgd_attack(params, X, y, spec)
        return X + fgm_attack(params, X, y, spec)
    return X + linear_attack(params, X, y, spec)


def grad_fixed_attack(params, X, y, spec):
    """Gradient of ``mean((f(X_adv) - y)^2)`` holding the attacked inputs fixed.

    For a linear model this is ``(2/n) X_adv.T @ (X_adv @ theta - y)``; with
    ``xi = 0`` at ``theta = 0`` no attack is applied.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Xa = attacked_inputs(params, X, y, spec)
    if isinstance(params, TwoLayerNet):
        return params.loss_grad(Xa, y)
    return 2.0 / X.shape[0] * (Xa.T @ (Xa @ params - y))


def highdim_stop_predicate(X, y, v):
    """First-hit rule ``||X theta - y|| / (v sqrt(n)) < 1 / sqrt(log n)``; returns a callable on fitted values."""
    n = len(y)
    if n < 3:
        raise ValueError("the high-dimensional stopping rule needs n >= 3")
    bound = 1.0 / math.sqrt(math.log(n))
    scale = v * math.sqrt(n)

    def hit(fitted):
        return bool(np.linalg.norm(fitted - y) / scale < bound)

    return hit


def _reference_v2(model, y):
    return model.v2 if model is not None else float(np.var(y, ddof=1)) if len(y) > 1 else float(y @ y)


def _make_stop(config, X, y, model):
    """``(highdim predicate or None, gradient tolerance or None)``."""
    stop = config.stop
    hit = None
    if stop == "highdim_threshold" or config.track_highdim_T:
        hit = highdim_stop_predicate(X, y, math.sqrt(_reference_v2(model, y)))
    tol = float(stop[1]) if isinstance(stop, (tuple, list)) else None
    return hit, tol


def _linear_init(init, X, y):
    d = X.shape[1]
    if isinstance(init, str):
        if init == "zero":
            return np.zeros(d)
        if init == "ols":
            return np.linalg.lstsq(X, y, rcond=None)[0]
        raise ValueError(f"unknown init {init!r} for a linear model")
    theta = np.array(init, dtype=float)
    if theta.shape != (d,):
        raise ValueError(f"explicit init has shape {theta.shape}, expected ({d},)")
    return theta


def adv_train_linear(X, y, spec, config, model=None):
    """Adversarial training of ``f(x) = x @ theta``.

    Each iteration attacks every sample at the current ``theta``, takes a
    gradient step on the attacked squared loss and, if ``lambda_l1 > 0``,
    soft-thresholds by ``eta * lambda_l1``.  When ``model`` is given the
    closed-form (non-surrogate) population risk is recorded.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    theta = _linear_init(config.init, X, y)
    v2_ref = _reference_v2(model, y)
    hit, grad_tol = _make_stop(config, X, y, model)
    traj = Trajectory()
    eta, lam = config.eta, config.lambda_l1
    for t in range(int(config.max_iters) + 1):
        Xa = X + linear_attack(theta, X, y, spec)
        resid = Xa @ theta - y
        loss = float(resid @ resid) / n
        grad = 2.0 / n * (Xa.T @ resid)
        pop = population_risk(theta, model, spec.epsilon, spec.norm).value if model is not None else math.nan
        traj.append(t=t, train_loss_surrogate=loss,
                    train_loss_exact=exact_linear_train_loss(theta, X, y, spec.epsilon, spec.norm),
                    pop_risk=pop, grad_norm=np.linalg.norm(grad),
                    theta_norm=np.linalg.norm(theta), theta_l1=np.abs(theta).sum())
        traj.coef.append(theta.copy())
        if config.track_grad_gap:
            clean_grad = 2.0 / n * (X.T @ (X @ theta - y))
            traj.extras.setdefault("grad_gap", []).append(float(np.linalg.norm(grad - clean_grad)))
        if config.snapshot_every and t % config.snapshot_every == 0:
            traj.snapshots[t] = theta.copy()
        if not np.isfinite(loss) or loss > config.divergence_factor * v2_ref:
            traj.diverged = True
            traj.final_params = theta
            if config.raise_on_divergence:
                raise TrainingDiverged(f"loss {loss:.3e} at iteration {t}", traj)
            return traj
        if hit is not None and traj.stopping_T is None and hit(X @ theta):
            traj.stopping_T = t
            if config.stop == "highdim_threshold":
                break
        if grad_tol is not None and np.linalg.norm(grad) < grad_tol:
            if traj.stopping_T is None:
                traj.stopping_T = t
            break
        if t == config.max_iters:
            break
        theta = theta - eta * grad
        if lam > 0:
            theta = prox_l1(theta, eta * lam)
    traj.final_params = theta
    return traj


def init_network(net_template, config, rng=None):
    init = config.init
    d, h = net_template.d, net_template.h
    if isinstance(init, str) and init == "zero":
        return net_template.with_weights(np.zeros((d, h)))
    if isinstance(init, (tuple, list)) and len(init) == 2 and init[0] == "vanishing":
        rng = np.random.default_rng(config.init_seed) if rng is None else rng
        return net_template.with_weights(vanishing_init(d, h, float(init[1]), rng))
    if isinstance(init, str) and init == "keep":
        return net_template
    W = np.array(init, dtype=float)
    if W.shape != (d, h):
        raise ValueError(f"explicit init has shape {W.shape}, expected ({d}, {h})")
    return net_template.with_weights(W)


def _network_pop_risk(net, model, spec, config):
    if net.activation == "identity":
        return population_risk(net.effective_coef(), model, spec.epsilon, spec.norm).value
    test_spec = spec.replace(xi=0.0)
    return monte_carlo_risk(net, model, test_spec, config.n_mc, config.mc_seed).mean


def adv_train_two_layer(X, y, net, spec, config, model=None, rng=None):
    """Adversarial training of the first layer of a :class:`TwoLayerNet`.

    Attacks use FGM unless ``spec.method == "pgd"``.  Population risk is the
    closed form on the effective coefficient for identity activations and a
    Monte-Carlo estimate (non-surrogate attack, ``config.n_mc`` samples)
    every ``config.eval_every`` iterations otherwise.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    net = init_network(net, config, rng)
    v2_ref = _reference_v2(model, y)
    hit, grad_tol = _make_stop(config, X, y, model)
    traj = Trajectory()
    T = int(config.max_iters)
    for t in range(T + 1):
        Xa = attacked_inputs(net, X, y, spec)
        grad = net.loss_grad(Xa, y)
        resid = net.predict(Xa) - y
        loss = float(resid @ resid) / n
        exact_spec = spec.replace(xi=0.0)
        Xe = attacked_inputs(net, X, y, exact_spec)
        exact_loss = float(np.mean((net.predict(Xe) - y) ** 2))
        pop = math.nan
        if model is not None:
            due = net.activation == "identity" or t == T or (config.eval_every and t % config.eval_every == 0)
            if due:
                pop = _network_pop_risk(net, model, spec, config)
        coef = net.effective_coef()
        traj.append(t=t, train_loss_surrogate=loss, train_loss_exact=exact_loss, pop_risk=pop,
                    grad_norm=np.linalg.norm(grad), theta_norm=np.linalg.norm(coef),
                    theta_l1=np.abs(coef).sum())
        traj.coef.append(coef)
        if config.snapshot_every and t % config.snapshot_every == 0:
            traj.snapshots[t] = net.weights.copy()
        if not np.isfinite(loss) or loss > config.divergence_factor * v2_ref:
            traj.diverged = True
            traj.final_params = net
            if config.raise_on_divergence:
                raise TrainingDiverged(f"loss {loss:.3e} at iteration {t}", traj)
            return traj
        if hit is not None and traj.stopping_T is None and hit(net.predict(X)):
            traj.stopping_T = t
            if config.stop == "highdim_threshold":
                if model is not None and math.isnan(pop):
                    traj.columns["pop_risk"][-1] = _network_pop_risk(net, model, spec, config)
                break
        if grad_tol is not None and np.linalg.norm(grad) < grad_tol:
            if traj.stopping_T is None:
                traj.stopping_T = t
            break
        if t == T:
            break
        net = net.with_weights(net.weights - config.eta * grad)
    traj.final_params = net
    return traj


@dataclass
class LassoResult:
    trajectory: Trajectory
    theta: np.ndarray
    theta_star: np.ndarray | None
    l1_error: float
    pop_risk: float
    r_star: float


def theorem_lambda(v, s, d, n, c=2.0, xi=0.0, a_n=None):
    """Penalty at the lower bound ``v * max(c sqrt(s log d / n), xi a_n / v^2)``; ``a_n`` defaults to ``log n``."""
    a_n = math.log(n) if a_n is None else a_n
    return v * max(c * math.sqrt(s * math.log(d) / n), xi * a_n / v ** 2)


def adv_train_lasso(X, y, spec, config, model=None):
    """L1-penalised adversarial training by proximal gradient steps."""
    if not config.lambda_l1 > 0:
        raise ValueError("adv_train_lasso needs lambda_l1 > 0")
    traj = adv_train_linear(X, y, spec, config, model)
    theta = traj.final_params
    theta_star, r_star, l1_err, pop = None, math.nan, math.nan, math.nan
    if model is not None:
        opt = optimal_theta(model, spec.epsilon, spec.norm)
        theta_star, r_star = opt.theta_star, opt.r_star
        l1_err = float(np.abs(theta - theta_star).sum())
        pop = population_risk(theta, model, spec.epsilon, spec.norm).value
    return LassoResult(traj, theta, theta_star, l1_err, pop, r_star)


@dataclass
class Schedule:
    xi: float
    eta: float
    T: int
    v2: float
    L: float
    regime: str
    warnings: list = field(default_factory=list)
    condition: float | None = None

    @property
    def valid(self):
        return np.isfinite(self.xi) and self.xi > 0


def schedule_from_theorem(y, d, regime="linear", L=10.0, a=None, h=None, delta=None):
    """Step size, smoothing and horizon from the convergence theorems.

    ``v^2`` is estimated by the sample variance of ``y``.

    * ``linear``: ``xi = v^2 d / (sqrt(n) log n)``, ``eta = xi / (v^2 L)``.
    * ``network`` (smooth activation): ``xi / v^2 = -log log n / log(max(
      sqrt(d^2 log n / n), d log n ||a||_inf / sqrt(h)))`` and
      ``eta = xi h / (v^2 L ||a||^2)``.
    * ``relu``: as ``network`` with only the first term in the max.

    In all cases ``T = v^2 log log n / xi``.  Regime mismatches are reported
    in ``warnings`` rather than raised.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if n < 3:
        raise ValueError(f"theorem schedules need n >= 3 (log log n > 0), got n={n}")
    v2 = float(np.var(y, ddof=1))
    ln = math.log(n)
    lln = math.log(ln)
    notes = []
    cond = None
    if regime == "linear":
        xi = v2 * d / (math.sqrt(n) * ln)
        eta = xi / (v2 * L)
        if ln * math.sqrt(d * d / n) >= 1:
            notes.append(f"log(n) sqrt(d^2/n) = {ln * math.sqrt(d * d / n):.3g} is not small")
    elif regime in ("network", "relu"):
        if a is None:
            raise ValueError(f"regime {regime!r} needs the outer weights a")
        a = np.asarray(a, dtype=float)
        h = a.shape[0] if h is None else h
        terms = [math.sqrt(d * d * ln / n)]
        if regime == "network":
            terms.append(d * ln * np.abs(a).max() / math.sqrt(h))
        base = max(terms)
        if base >= 1:
            notes.append(f"log argument {base:.3g} >= 1: schedule undefined at this (d, n, h)")
            xi = math.nan
        else:
            xi = -v2 * lln / math.log(base)
        eta = xi * h / (v2 * L * float(a @ a))
        if delta is not None and np.isfinite(xi):
            T_ = v2 * lln / xi
            growth = 1 + v2 * eta * np.linalg.norm(a) ** 3 / (h ** 1.5 * xi) + L * eta * math.sqrt(v2)
            cond = math.sqrt(d * ln) * growth ** T_ / h ** (delta / 2)
    else:
        raise ValueError(f"unknown regime {regime!r}")
    T = int(math.ceil(v2 * lln / xi)) if np.isfinite(xi) and xi > 0 else 0
    for msg in notes:
        warnings.warn(msg, stacklevel=2)
    return Schedule(xi, eta, T, v2, L, regime, notes, cond)
