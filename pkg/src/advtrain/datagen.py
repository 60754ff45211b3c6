"""Gaussian linear-regression generative models and dataset sampling."""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg


class CovarianceError(ValueError):
    """Raised when a covariance spec is not symmetric positive semi-definite."""


@dataclass(frozen=True)
class GenModel:
    """Ground truth ``y = x @ theta0 + noise`` with ``x ~ N(0, cov)``.

    ``chol`` is a lower-triangular factor with ``chol @ chol.T == cov`` and is
    what the sampler multiplies standard normals by.  ``block_sizes`` is kept
    when the covariance was built from diagonal blocks.
    """

    theta0: np.ndarray
    cov: np.ndarray
    chol: np.ndarray
    noise_var: float
    v2: float
    kind: str = "dense"
    block_sizes: tuple = field(default=())

    @property
    def d(self):
        return self.theta0.shape[0]

    @property
    def v(self):
        return float(np.sqrt(self.v2))

    @property
    def is_identity(self):
        return self.kind == "identity"

    def signal_norm_sq(self):
        """``||theta0||_Sigma^2``."""
        return float(self.theta0 @ self.cov @ self.theta0)

    def check_v2(self):
        return abs(self.signal_norm_sq() + self.noise_var - self.v2) <= 1e-12 * max(1.0, self.v2)

    def is_degenerate(self):
        """True when ``Sigma @ theta0`` vanishes, making every estimator null."""
        return not np.any(self.cov @ self.theta0)


def sparse_theta(d, s, value=1.0):
    """Vector of length ``d`` whose first ``s`` entries equal ``value``.

    ``s = 0`` gives the zero vector.
    """
    d = int(d)
    s = int(s)
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if s < 0 or s > d:
        raise ValueError(f"support size s={s} must satisfy 0 <= s <= d={d}")
    theta = np.zeros(d)
    theta[:s] = value
    return theta


def _psd_cholesky(cov, what="covariance"):
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise CovarianceError(f"{what} must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise CovarianceError(f"{what} is not symmetric")
    eig_min = float(np.linalg.eigvalsh(cov).min())
    scale = max(1.0, float(np.abs(cov).max()))
    if eig_min < -1e-10 * scale:
        raise CovarianceError(f"{what} is not positive semi-definite (min eigenvalue {eig_min:.3e})")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # singular PSD: factor via the symmetric square root
        w, V = np.linalg.eigh(cov)
        return V * np.sqrt(np.clip(w, 0.0, None))


def _build_covariance(sigma_spec, d):
    """Return ``(cov, chol, kind, block_sizes)`` for a covariance spec."""
    if sigma_spec is None or (isinstance(sigma_spec, str) and sigma_spec == "identity"):
        eye = np.eye(d)
        return eye, eye.copy(), "identity", ()
    if isinstance(sigma_spec, dict):
        if len(sigma_spec) != 1:
            raise CovarianceError(f"covariance spec must have exactly one key, got {sorted(sigma_spec)}")
        (key, val), = sigma_spec.items()
        if key == "identity":
            return _build_covariance("identity", d)
        if key == "diag":
            diag = np.asarray(val, dtype=float)
            if diag.shape != (d,):
                raise CovarianceError(f"diag length {diag.shape} does not match d={d}")
            if diag.min() < 0:
                raise CovarianceError(f"diagonal covariance has negative entry (min eigenvalue {diag.min():.3e})")
            return np.diag(diag), np.diag(np.sqrt(diag)), "diagonal", ()
        if key == "blocks":
            blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in val]
            sizes = tuple(b.shape[0] for b in blocks)
            if sum(sizes) != d:
                raise CovarianceError(f"block sizes {sizes} do not sum to d={d}")
            chols = [_psd_cholesky(b, what=f"block {i}") for i, b in enumerate(blocks)]
            return linalg.block_diag(*blocks), linalg.block_diag(*chols), "block", sizes
        if key == "cholesky":
            L = np.asarray(val, dtype=float)
            if L.shape != (d, d):
                raise CovarianceError(f"cholesky factor shape {L.shape} does not match d={d}")
            return L @ L.T, L, "dense", ()
        if key == "matrix":
            if isinstance(val, str):
                val = np.load(val)
            return _build_covariance(np.asarray(val, dtype=float), d)
        raise CovarianceError(f"unknown covariance spec key {key!r}")
    arr = np.asarray(sigma_spec, dtype=float)
    if arr.ndim == 1:
        return _build_covariance({"diag": arr}, d)
    if arr.shape != (d, d):
        raise CovarianceError(f"covariance shape {arr.shape} does not match d={d}")
    return arr, _psd_cholesky(arr), "dense", ()


def make_gen_model(theta0, sigma="identity", noise_var=1.0):
    """Build a :class:`GenModel`.

    Parameters
    ----------
    theta0 : array-like
        True coefficients.
    sigma : str, dict or array-like
        ``"identity"``, a 1-D diagonal, a dense SPD matrix, or one of the dicts
        ``{"diag": [...]}``, ``{"blocks": [S1, S2, ...]}``,
        ``{"cholesky": L}`` (lower factor, skips factorisation) or
        ``{"matrix": path_or_array}``.
    noise_var : float
        Noise variance, must be non-negative.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float)).copy()
    if theta0.ndim != 1 or theta0.size < 1:
        raise ValueError("theta0 must be a non-empty vector")
    noise_var = float(noise_var)
    if not noise_var >= 0:
        raise ValueError(f"noise_var must be >= 0, got {noise_var}")
    cov, chol, kind, sizes = _build_covariance(sigma, theta0.size)
    v2 = float(theta0 @ cov @ theta0) + noise_var
    if not np.isfinite(v2):
        raise ValueError("v^2 is not finite")
    for arr in (theta0, cov, chol):
        arr.setflags(write=False)
    return GenModel(theta0, cov, chol, noise_var, v2, kind, sizes)


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    seed: int

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]


def sample_design(model, n, rng):
    """Draw ``n`` rows from ``N(0, Sigma)`` using ``rng``."""
    Z = rng.standard_normal((n, model.d))
    if model.is_identity:
        return Z
    return Z @ model.chol.T


def sample_dataset(model, n, seed):
    """Sample ``(X, y)`` from ``model``.

    Draws use numpy's PCG64 generator seeded with ``seed``: first the
    ``n x d`` standard normals for X, then ``n`` standard normals for noise.
    The same ``(model, n, seed)`` always reproduces the same arrays.
    """
    n = int(n)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    X = sample_design(model, n, rng)
    noise = rng.standard_normal(n) * np.sqrt(model.noise_var)
    y = X @ model.theta0 + noise
    X.setflags(write=False)
    y.setflags(write=False)
    return Dataset(X, y, int(seed))
