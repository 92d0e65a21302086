"""Gaussian process regression on the unit box.

Small and exact on purpose: a squared-exponential kernel with one shared
lengthscale, inputs already normalised to [0, 1]^d by the caller, targets
standardised internally. Hyperparameters come from a fixed 7x7 log-spaced
grid over lengthscale and signal standard deviation, scored by the exact log
marginal likelihood. Cholesky factorisations get a jitter ladder from 1e-9
doubling up to 1e-5 before giving up.

Everything is deterministic: same data in, same model out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .errors import NonFiniteInputError, SingularKernelError

LENGTHSCALE_GRID = tuple(np.geomspace(0.05, 2.0, 7))
SIGNAL_GRID = tuple(np.geomspace(0.1, 3.0, 7))
JITTER_START = 1e-9
JITTER_CAP = 1e-5


@dataclass(frozen=True)
class SearchSpace:
    """Ordered box: tuple of (name, lo, hi). 1 to 16 dimensions."""

    dims: tuple[tuple[str, float, float], ...]

    def __post_init__(self):
        if not 1 <= len(self.dims) <= 16:
            raise ValueError("search space must have between 1 and 16 dimensions")
        names = [d[0] for d in self.dims]
        if len(set(names)) != len(names):
            raise ValueError("dimension names must be unique")
        for name, lo, hi in self.dims:
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"dimension {name!r}: need finite lo < hi")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d[0] for d in self.dims)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    def lows(self) -> np.ndarray:
        return np.array([d[1] for d in self.dims])

    def highs(self) -> np.ndarray:
        return np.array([d[2] for d in self.dims])

    def normalize(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self.lows(), self.highs()
        return (np.asarray(x, dtype=float) - lo) / (hi - lo)

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        lo, hi = self.lows(), self.highs()
        return lo + np.asarray(z, dtype=float) * (hi - lo)

    def point_dict(self, x: np.ndarray) -> dict[str, float]:
        return {name: float(v) for name, v in zip(self.names, np.asarray(x).ravel())}

    def point_array(self, d: dict[str, float]) -> np.ndarray:
        return np.array([float(d[name]) for name in self.names])


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, shape (len(a), len(b))."""
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    sq = aa + bb - 2.0 * (a @ b.T)
    return np.maximum(sq, 0.0)


def _kernel(a: np.ndarray, b: np.ndarray, lengthscale: float, signal_var: float) -> np.ndarray:
    return signal_var * np.exp(-_sqdist(a, b) / (2.0 * lengthscale ** 2))


def _chol_with_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor of K (+ jitter I if needed). Returns (L, jitter used)."""
    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START
    eye = np.eye(K.shape[0])
    while jitter <= JITTER_CAP:
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise SingularKernelError(
        f"kernel matrix not positive definite even with jitter up to {JITTER_CAP}")


@dataclass
class GPModel:
    """Fitted GP. X lives in the unit box; y is stored raw and standardised."""

    X: np.ndarray
    y: np.ndarray
    lengthscale: float
    signal_var: float
    noise_var: float
    y_mean: float = field(init=False)
    y_std: float = field(init=False)
    _L: np.ndarray = field(init=False, repr=False)
    _alpha: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y must have the same number of rows")
        if X.shape[0] == 0:
            raise ValueError("cannot fit a GP on zero observations")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise NonFiniteInputError("GP inputs must be finite")
        self.X = X
        self.y = y
        self.y_mean = float(np.mean(y))
        std = float(np.std(y))
        self.y_std = std if std > 1e-12 else 1.0
        z = (y - self.y_mean) / self.y_std
        K = _kernel(X, X, self.lengthscale, self.signal_var)
        K[np.diag_indices_from(K)] += self.noise_var
        self._L, _ = _chol_with_jitter(K)
        self._alpha = np.linalg.solve(
            self._L.T, np.linalg.solve(self._L, z))

    def posterior(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance of the latent function at x.

        x: (d,) or (m, d) in the unit box. Returns arrays of shape (m,).
        Variance is clamped at zero and reported on the raw y scale.
        """
        q = np.atleast_2d(np.asarray(x, dtype=float))
        ks = _kernel(q, self.X, self.lengthscale, self.signal_var)
        mu_z = ks @ self._alpha
        v = np.linalg.solve(self._L, ks.T)
        var_z = self.signal_var - np.sum(v * v, axis=0)
        var_z = np.maximum(var_z, 0.0)
        mu = mu_z * self.y_std + self.y_mean
        var = var_z * (self.y_std ** 2)
        return mu, var


def log_marginal_likelihood(X: np.ndarray, z: np.ndarray, lengthscale: float,
                            signal_var: float, noise_var: float) -> float:
    """Exact LML of standardised targets z under the SE kernel."""
    n = X.shape[0]
    K = _kernel(X, X, lengthscale, signal_var)
    K[np.diag_indices_from(K)] += noise_var
    L, _ = _chol_with_jitter(K)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, z))
    return float(-0.5 * z @ alpha
                 - np.sum(np.log(np.diag(L)))
                 - 0.5 * n * math.log(2.0 * math.pi))


def gp_fit(X: np.ndarray, y: np.ndarray, noise: float = 1e-6) -> GPModel:
    """Fit lengthscale and signal variance by grid search over the LML.

    X must already be normalised to the unit box. ``noise`` is the noise
    variance on the standardised target scale. Ties on the grid resolve to
    the first candidate in iteration order (lengthscale-major), so the fit
    is deterministic.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NonFiniteInputError("GP inputs must be finite")
    if X.shape[0] == 0:
        raise ValueError("cannot fit a GP on zero observations")
    y_mean = float(np.mean(y))
    y_std = float(np.std(y))
    y_std = y_std if y_std > 1e-12 else 1.0
    z = (y - y_mean) / y_std
    best = None
    best_lml = -math.inf
    failures = 0
    for ls in LENGTHSCALE_GRID:
        for sig in SIGNAL_GRID:
            try:
                lml = log_marginal_likelihood(X, z, float(ls), float(sig) ** 2, noise)
            except SingularKernelError:
                failures += 1
                continue
            if lml > best_lml:
                best_lml = lml
                best = (float(ls), float(sig) ** 2)
    if best is None:
        raise SingularKernelError("every hyperparameter candidate failed to factorise")
    return GPModel(X=X, y=y, lengthscale=best[0], signal_var=best[1], noise_var=noise)


def gp_posterior(model: GPModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Module-level convenience wrapper around GPModel.posterior."""
    return model.posterior(x)


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _phi(z: np.ndarray) -> np.ndarray:
    """Standard normal pdf."""
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def _Phi(z: np.ndarray) -> np.ndarray:
    """Standard normal cdf via erfc for tail accuracy."""
    return 0.5 * erfc(-z / _SQRT2)


def ei_value(mu, sigma, best_y):
    """Expected improvement of N(mu, sigma^2) over best_y; sigma = 0 collapses
    to the deterministic improvement max(mu - best_y, 0)."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    improve = mu - best_y
    out = np.maximum(improve, 0.0)
    positive = sigma > 0.0
    if np.any(positive):
        z = np.where(positive, improve / np.where(positive, sigma, 1.0), 0.0)
        ei = improve * _Phi(z) + sigma * _phi(z)
        out = np.where(positive, np.maximum(ei, 0.0), out)
    return out


def expected_improvement(model: GPModel, x: np.ndarray, best_y: float) -> np.ndarray:
    """EI at x (single point or batch) for maximisation over best observed y."""
    mu, var = model.posterior(x)
    sigma = np.sqrt(var)
    return ei_value(mu, sigma, best_y)
