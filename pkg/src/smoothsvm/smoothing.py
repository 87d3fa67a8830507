"""Gaussian convolution-smoothed hinge loss and its empirical moments.

The smoothed loss is ``l_h(u) = E max(1 - u - h*eps, 0)`` with ``eps`` drawn
from the kernel.  Writing ``z = (1 - u) / h`` it reduces to

    l_h(u) = (1 - u) * Kcdf(z) + h * Kpm(z)

where ``Kcdf`` is the kernel CDF and ``Kpm(z) = -int_{-inf}^z t K(t) dt``.
For the Gaussian kernel ``Kpm`` is the standard normal density.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import erfc, erfcx

from .exceptions import DimensionError, InvalidArgumentError

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)
# exp(-z^2/2) is below 1e-300 past this point; flushed to exact zero
_PDF_CUTOFF = 37.0


class GaussianKernel:
    """Standard normal kernel: density, CDF and the partial first moment."""

    name = "gaussian"

    @staticmethod
    def pdf(z):
        z = np.asarray(z, dtype=float)
        out = _INV_SQRT2PI * np.exp(-0.5 * z * z)
        return np.where(np.abs(z) > _PDF_CUTOFF, 0.0, out)

    @staticmethod
    def cdf(z):
        # erfc keeps full relative accuracy in the lower tail, so no
        # 1 - Phi(-z) cancellation for large |z|
        return 0.5 * erfc(-np.asarray(z, dtype=float) / _SQRT2)

    @staticmethod
    def excess(z):
        """``g(-|z|)`` where ``g(z) = pdf(z) + z cdf(z)``; always >= 0.

        ``g(z) = max(z, 0) + excess(z)`` is the smoothed hinge divided by h.
        """
        a = np.abs(np.asarray(z, dtype=float))
        bracket = _INV_SQRT2PI - 0.5 * a * erfcx(a / _SQRT2)
        out = np.exp(-0.5 * a * a) * np.maximum(bracket, 0.0)
        return np.where(a > _PDF_CUTOFF, 0.0, out)


KERNEL = GaussianKernel()


def _check_h(h):
    h = float(h)
    if not math.isfinite(h) or h <= 0:
        raise InvalidArgumentError(f"bandwidth must be positive and finite, got {h}")
    return h


def _check_u(u):
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise InvalidArgumentError("margin must be finite")
    return u


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def smoothed_hinge(u, h):
    """Smoothed hinge loss ``l_h(u)``, vectorised over ``u``."""
    h = _check_h(h)
    r = 1.0 - _check_u(u)
    # hinge plus a nonnegative excess, so l_h >= hinge holds exactly
    return _scalar(np.maximum(r, 0.0) + h * KERNEL.excess(r / h))


def smoothed_hinge_deriv(u, h):
    """First derivative ``-Phi((1 - u) / h)``, in [-1, 0]."""
    h = _check_h(h)
    return _scalar(-KERNEL.cdf((1.0 - _check_u(u)) / h))


def smoothed_hinge_curv(u, h):
    """Second derivative ``phi((1 - u) / h) / h``."""
    h = _check_h(h)
    return _scalar(KERNEL.pdf((1.0 - _check_u(u)) / h) / h)


def default_bandwidth(n, p):
    """Bandwidth rule ``(5 log(p) / n) ** 0.25`` with the natural log.

    The online variant passes the cumulative sample size as ``n``.
    """
    for name, v in (("n", n), ("p", p)):
        if isinstance(v, bool) or not float(v).is_integer():
            raise InvalidArgumentError(f"{name} must be an integer count, got {v!r}")
    if n < 2 or p < 2:
        raise InvalidArgumentError(f"need n >= 2 and p >= 2, got n={n}, p={p}")
    return (5.0 * math.log(p) / n) ** 0.25


@dataclass(frozen=True)
class Dataset:
    """Labels in {-1, +1} and an n x p feature matrix (dense or CSR).

    The augmented row ``(1, x_i)`` is never materialised; every method
    below handles the intercept column separately.
    """

    X: object
    y: np.ndarray

    def __post_init__(self):
        X = self.X
        if sp.issparse(X):
            X = sp.csr_matrix(X, dtype=float)
            if not np.all(np.isfinite(X.data)):
                raise InvalidArgumentError("features contain non-finite values")
        else:
            X = np.ascontiguousarray(X, dtype=float)
            if X.ndim == 1:
                X = X.reshape(-1, 1)
            if X.ndim != 2:
                raise DimensionError("features must be a 2-d array")
            if not np.all(np.isfinite(X)):
                raise InvalidArgumentError("features contain non-finite values")
        y = np.asarray(self.y, dtype=float).ravel()
        if y.shape[0] != X.shape[0]:
            raise DimensionError(f"{y.shape[0]} labels for {X.shape[0]} rows")
        if y.shape[0] < 1:
            raise InvalidArgumentError("dataset is empty")
        if not np.all((y == 1.0) | (y == -1.0)):
            raise InvalidArgumentError("labels must be -1 or +1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def is_sparse(self):
        return sp.issparse(self.X)

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx])

    def augmented(self):
        """Dense ``(1, X)`` matrix; used by tests and small problems only."""
        X = self.X.toarray() if self.is_sparse else self.X
        return np.hstack([np.ones((self.n, 1)), X])

    def decision(self, beta):
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.p + 1,):
            raise DimensionError(f"beta has shape {beta.shape}, expected ({self.p + 1},)")
        return beta[0] + self.X @ beta[1:]

    def margins(self, beta):
        return self.y * self.decision(beta)

    def weighted_gram(self, w):
        """``sum_i w_i x~_i x~_i^T`` for the augmented rows (unnormalised)."""
        X = self.X
        m = self.p + 1
        G = np.empty((m, m))
        G[0, 0] = w.sum()
        xw = X.T @ w
        G[0, 1:] = xw
        G[1:, 0] = xw
        if self.is_sparse:
            G[1:, 1:] = (X.T @ X.multiply(w[:, None])).toarray()
        else:
            G[1:, 1:] = X.T @ (X * w[:, None])
        # BLAS may leave the two triangles a few ulps apart
        return 0.5 * (G + G.T)

    def weighted_sum(self, w):
        """``sum_i w_i x~_i`` (unnormalised)."""
        out = np.empty(self.p + 1)
        out[0] = w.sum()
        out[1:] = self.X.T @ w
        return out


def check_beta(beta, data):
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (data.p + 1,):
        raise DimensionError(f"beta has shape {beta.shape}, expected ({data.p + 1},)")
    return beta


def empirical_loss(beta, data, h):
    h = _check_h(h)
    r = 1.0 - data.margins(check_beta(beta, data))
    return float(np.mean(np.maximum(r, 0.0) + h * KERNEL.excess(r / h)))


def empirical_gradient(beta, data, h):
    h = _check_h(h)
    z = (1.0 - data.margins(check_beta(beta, data))) / h
    return data.weighted_sum(-KERNEL.cdf(z) * data.y) / data.n


def empirical_hessian(beta, data, h):
    h = _check_h(h)
    z = (1.0 - data.margins(check_beta(beta, data))) / h
    return data.weighted_gram(KERNEL.pdf(z) / h) / data.n


def score_outer_matrix(beta, data, h):
    h = _check_h(h)
    z = (1.0 - data.margins(check_beta(beta, data))) / h
    return data.weighted_gram(KERNEL.cdf(z) ** 2) / data.n


def loss_and_gradient(beta, data, h):
    """Value and gradient from a single margin pass (solver hot path)."""
    r = 1.0 - data.margins(beta)
    z = r / h
    value = float(np.mean(np.maximum(r, 0.0) + h * KERNEL.excess(z)))
    grad = data.weighted_sum(-KERNEL.cdf(z) * data.y) / data.n
    return value, grad


def batch_moments(beta, data, h):
    """Gradient, Hessian and score outer product at ``beta`` in one pass."""
    h = _check_h(h)
    z = (1.0 - data.margins(check_beta(beta, data))) / h
    cdf = KERNEL.cdf(z)
    grad = data.weighted_sum(-cdf * data.y) / data.n
    hess = data.weighted_gram(KERNEL.pdf(z) / h) / data.n
    sigma = data.weighted_gram(cdf * cdf) / data.n
    return grad, hess, sigma
