"""Exact and smoothed (surrogate) adversarial perturbations.

All functions are vectorised over samples: ``X`` may be a single input of
shape ``(d,)`` or a batch ``(n, d)``; the returned perturbation has the same
shape.  ``sign(0) = 0`` throughout, so samples with zero residual receive no
attack.
"""

from dataclasses import dataclass

import numpy as np

from .network import as_predictor

NORMS = ("l2", "linf")


class AttackUndefined(ValueError):
    """The exact L2 attack has no direction (``theta = 0`` with nonzero residual)."""


@dataclass(frozen=True)
class AttackSpec:
    """Attack description.

    ``method`` is ``"exact"`` (closed form, linear models only), ``"fgm"`` or
    ``"pgd"``; ``pgd_steps`` is the ``k`` of PGD-k.
    """

    norm: str = "l2"
    epsilon: float = 0.0
    xi: float = 0.0
    method: str = "exact"
    pgd_steps: int = 10

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.xi >= 0:
            raise ValueError(f"xi must be >= 0, got {self.xi}")
        if self.method not in ("exact", "fgm", "pgd"):
            raise ValueError(f"method must be exact, fgm or pgd, got {self.method!r}")
        if self.method == "pgd" and int(self.pgd_steps) < 1:
            raise ValueError("pgd_steps must be a positive integer")

    def replace(self, **changes):
        fields = dict(norm=self.norm, epsilon=self.epsilon, xi=self.xi,
                      method=self.method, pgd_steps=self.pgd_steps)
        fields.update(changes)
        return AttackSpec(**fields)

    def to_dict(self):
        method = {"pgd": int(self.pgd_steps)} if self.method == "pgd" else self.method
        return {"norm": self.norm, "epsilon": float(self.epsilon), "xi": float(self.xi), "method": method}

    @classmethod
    def from_dict(cls, d):
        method = d.get("method", "exact")
        steps = 10
        if isinstance(method, dict):
            (method, steps), = method.items()
        return cls(norm=d.get("norm", "l2"), epsilon=float(d.get("epsilon", 0.0)),
                   xi=float(d.get("xi", 0.0)), method=method, pgd_steps=int(steps))


def _batch(X, y):
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    y2 = np.atleast_1d(np.asarray(y, dtype=float))
    return X2, y2, single


def _out(delta, single):
    return delta[0] if single else delta


def _safe_ratio(num, den):
    out = np.zeros_like(num, dtype=float)
    np.divide(num, den, out=out, where=den > 0)
    return out


def shrink_l2(g, xi):
    """``g / sqrt(g^2 + xi^2)``, zero where ``g == 0``."""
    g = np.asarray(g, dtype=float)
    # hypot keeps the ratio exact when g^2 or xi^2 would underflow
    if xi > 0:
        return g / np.hypot(g, xi)
    return _safe_ratio(g, np.hypot(g, xi))


def shrink_linf(g, xi):
    """``g / (g + xi)``, zero where ``g == 0``."""
    g = np.asarray(g, dtype=float)
    if xi > 0:
        return g / (g + xi)
    return _safe_ratio(g, g + xi)


def exact_attack_l2_linear(theta, X, y, epsilon):
    """Worst-case L2 perturbation ``eps * sign(r) * theta / ||theta||``."""
    X2, y2, single = _batch(X, y)
    theta = np.asarray(theta, dtype=float)
    if epsilon == 0:
        return _out(np.zeros_like(X2), single)
    r = X2 @ theta - y2
    nt = np.linalg.norm(theta)
    if nt == 0:
        if np.any(r != 0):
            raise AttackUndefined("exact L2 attack is undefined at theta = 0 with nonzero residual")
        return _out(np.zeros_like(X2), single)
    delta = (epsilon * np.sign(r))[:, None] * (theta / nt)[None, :]
    return _out(delta, single)


def surrogate_attack_l2_linear(theta, X, y, epsilon, xi):
    """Exact L2 attack scaled by ``g / sqrt(g^2 + xi^2)``, ``g = 2|r| ||theta||``.

    Defined everywhere; returns zero at ``theta = 0``.
    """
    X2, y2, single = _batch(X, y)
    theta = np.asarray(theta, dtype=float)
    nt = np.linalg.norm(theta)
    if epsilon == 0 or nt == 0:
        return _out(np.zeros_like(X2), single)
    if xi == 0:
        return exact_attack_l2_linear(theta, X, y, epsilon)
    r = X2 @ theta - y2
    g = 2.0 * np.abs(r) * nt
    factor = shrink_l2(g, xi) * epsilon * np.sign(r)
    return _out(factor[:, None] * (theta / nt)[None, :], single)


def exact_attack_linf_linear(theta, X, y, epsilon):
    """Worst-case L-infinity perturbation ``eps * sign(r) * sign(theta)``."""
    X2, y2, single = _batch(X, y)
    theta = np.asarray(theta, dtype=float)
    if epsilon == 0:
        return _out(np.zeros_like(X2), single)
    r = X2 @ theta - y2
    return _out(epsilon * np.sign(r)[:, None] * np.sign(theta)[None, :], single)


def surrogate_attack_linf_linear(theta, X, y, epsilon, xi):
    """Coordinate-wise shrunk L-infinity attack.

    Coordinate ``i`` is scaled by ``g_i / (g_i + xi)`` with
    ``g_i = |2 r theta_i|``.
    """
    X2, y2, single = _batch(X, y)
    theta = np.asarray(theta, dtype=float)
    if epsilon == 0:
        return _out(np.zeros_like(X2), single)
    if xi == 0:
        return exact_attack_linf_linear(theta, X, y, epsilon)
    r = X2 @ theta - y2
    g = np.multiply.outer(2.0 * np.abs(r), np.abs(theta))
    delta = shrink_linf(g, xi)
    delta *= np.multiply.outer(epsilon * np.sign(r), np.sign(theta))
    return _out(delta, single)


def linear_attack(theta, X, y, spec):
    """Surrogate attack for a linear model under ``spec`` (``xi = 0`` gives the exact one).

    At ``theta = 0`` with ``xi = 0`` no attack is applied.
    """
    if spec.norm == "l2":
        return surrogate_attack_l2_linear(theta, X, y, spec.epsilon, spec.xi)
    return surrogate_attack_linf_linear(theta, X, y, spec.epsilon, spec.xi)


def loss_input_grad(model, X, y):
    """Rows of ``d/dx (f(x) - y)^2``."""
    model = as_predictor(model)
    X2 = np.atleast_2d(X)
    r = model.predict(X2) - np.atleast_1d(y)
    return 2.0 * r[:, None] * model.input_grad(X2)


def _geometric_step(G, norm):
    if norm == "l2":
        gn = np.linalg.norm(G, axis=1)
        return _safe_ratio(G, gn[:, None] * np.ones_like(G))
    return np.sign(G)


def _project(delta, epsilon, norm):
    if norm == "l2":
        nrm = np.linalg.norm(delta, axis=1)
        over = nrm > epsilon
        delta = delta.copy()
        delta[over] *= (epsilon / nrm[over])[:, None]
        return delta
    return np.clip(delta, -epsilon, epsilon)


def _apply_shrink(delta, G, xi, norm):
    """Surrogate shrink driven by the clean-input gradient ``G``."""
    if norm == "l2":
        return delta * shrink_l2(np.linalg.norm(G, axis=1), xi)[:, None]
    return delta * shrink_linf(np.abs(G), xi)


def fgm_attack(model, X, y, spec):
    """One normalised gradient step of length ``epsilon`` followed by the surrogate shrink."""
    X2, y2, single = _batch(X, y)
    if spec.epsilon == 0:
        return _out(np.zeros_like(X2), single)
    G = loss_input_grad(model, X2, y2)
    delta = spec.epsilon * _geometric_step(G, spec.norm)
    return _out(_apply_shrink(delta, G, spec.xi, spec.norm), single)


def random_in_ball(shape, epsilon, norm, rng):
    """Uniform draws from the ``epsilon`` ball of ``norm``, one per row."""
    n, d = shape
    if norm == "linf":
        return rng.uniform(-epsilon, epsilon, size=(n, d))
    Z = rng.standard_normal((n, d))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    return Z * (epsilon * rng.uniform(size=n) ** (1.0 / d))[:, None]


def pgd_attack(model, X, y, spec, steps=None, init=None, rng=None):
    """Projected gradient ascent with ``k`` steps of size ``2 eps / k``.

    Starts at zero unless ``init="random"`` (uniform in the ball, needs
    ``rng``) or an explicit array is given.  The surrogate shrink uses the
    gradient at the clean input.
    """
    X2, y2, single = _batch(X, y)
    k = int(spec.pgd_steps if steps is None else steps)
    if k < 1:
        raise ValueError("PGD needs at least one step")
    eps = spec.epsilon
    if eps == 0:
        return _out(np.zeros_like(X2), single)
    if init is None:
        delta = np.zeros_like(X2)
    elif isinstance(init, str) and init == "random":
        if rng is None:
            raise ValueError("random PGD start needs an rng")
        delta = random_in_ball(X2.shape, eps, spec.norm, rng)
    else:
        delta = np.atleast_2d(np.asarray(init, dtype=float)).copy()
    step = 2.0 * eps / k
    for _ in range(k):
        G = loss_input_grad(model, X2 + delta, y2)
        delta = _project(delta + step * _geometric_step(G, spec.norm), eps, spec.norm)
    if spec.xi > 0:
        delta = _apply_shrink(delta, loss_input_grad(model, X2, y2), spec.xi, spec.norm)
    return _out(delta, single)


def network_attack(model, X, y, spec):
    """Dispatch on ``spec.method`` for any predictor."""
    if spec.method == "pgd":
        return pgd_attack(model, X, y, spec)
    if spec.method == "exact":
        pred = as_predictor(model)
        if hasattr(pred, "theta"):
            return linear_attack(pred.theta, X, y, spec)
        raise ValueError("exact attack has no closed form for networks; use fgm or pgd")
    return fgm_attack(model, X, y, spec)


def attack_difference(model, X, y, spec, steps, seed):
    """Per-sample ``||delta_1 - delta_2||_2`` of two randomly started PGD runs."""
    ss = np.random.SeedSequence(seed)
    r1, r2 = (np.random.default_rng(s) for s in ss.spawn(2))
    d1 = pgd_attack(model, X, y, spec, steps=steps, init="random", rng=r1)
    d2 = pgd_attack(model, X, y, spec, steps=steps, init="random", rng=r2)
    return np.linalg.norm(np.atleast_2d(d1 - d2), axis=1)
