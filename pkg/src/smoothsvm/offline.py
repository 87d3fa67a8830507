"""Full-data debiased smoothed-SVM Lasso with Wald intervals."""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from .clime import PrecisionEstimate, solve_all
from .exceptions import DimensionError, NumericalError, staged
from .model_selection import (
    CV_SOLVER,
    cv_delta,
    cv_lambda,
    default_delta_grid,
    kfold_split,
    lambda_grid,
)
from .prox_lasso import OfflineObjective, SolverOptions, fit_lasso
from .smoothing import batch_moments, default_bandwidth


@dataclass
class InferenceResult:
    """Per-coordinate output; index 0 is the intercept."""

    estimate: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    lasso_beta: np.ndarray
    lam: float
    h: float
    delta: float
    n: int
    p: int
    level: float = 0.95
    diagnostics: dict = field(default_factory=dict, repr=False)

    @property
    def ci_length(self):
        return self.ci_upper - self.ci_lower

    def covers(self, beta):
        beta = np.asarray(beta, dtype=float)
        return (self.ci_lower < beta) & (beta < self.ci_upper)


@dataclass
class InferenceConfig:
    """Tuning for both pipelines.  ``None`` for ``lam``/``delta`` means
    cross-validate; ``None`` for ``h`` means the default bandwidth rule."""

    lam: Optional[float] = None
    delta: Optional[float] = None
    h: Optional[float] = None
    level: float = 0.95
    cv_folds: int = 5
    cv_seed: int = 0
    lambda_grid_size: int = 20
    delta_grid: Optional[tuple] = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    cv_solver: SolverOptions = field(default_factory=lambda: CV_SOLVER)
    n_jobs: int = 1


def z_value(level):
    """Two-sided normal quantile; exactly 1.96 at the 95% level."""
    if not 0 < level < 1:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    if level == 0.95:
        return 1.96
    return float(norm.ppf(0.5 + level / 2))


def _theta_matrix(theta):
    return theta.theta if isinstance(theta, PrecisionEstimate) else np.asarray(theta, dtype=float)


def debias(beta_hat, theta, grad):
    """One-step correction ``beta_hat_j - Theta_j^T grad`` for every j."""
    T = _theta_matrix(theta)
    beta_hat = np.asarray(beta_hat, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if T.shape != (beta_hat.size, beta_hat.size) or grad.shape != beta_hat.shape:
        raise DimensionError("beta, theta and gradient dimensions disagree")
    return beta_hat - T.T @ grad


def coordinate_se(theta_col, sigma_matrix, n):
    """``sqrt(theta_col^T Sigma theta_col / n)``."""
    theta_col = np.asarray(theta_col, dtype=float)
    q = float(theta_col @ np.asarray(sigma_matrix, dtype=float) @ theta_col)
    if q < -1e-10:
        raise NumericalError(f"negative variance {q:.3e}; Sigma is not PSD")
    return math.sqrt(max(q, 0.0) / n)


def standard_errors(theta, sigma_matrix, n):
    T = _theta_matrix(theta)
    q = np.einsum("ij,ik,kj->j", T, sigma_matrix, T)
    if np.any(q < -1e-10):
        raise NumericalError(f"negative variance {q.min():.3e}; Sigma is not PSD")
    return np.sqrt(np.maximum(q, 0.0) / n)


def wald(estimate, se, level):
    z = z_value(level)
    return estimate - z * se, estimate + z * se


def resolve_bandwidth(config, n, p):
    # the rule needs log(p) > 0; one-feature problems use p = 2
    return float(config.h) if config.h is not None else default_bandwidth(n, max(p, 2))


def run_offline(data, config=None):
    """Lasso fit, CLIME, debiasing and intervals on the full dataset."""
    config = config or InferenceConfig()
    n, p = data.n, data.p
    h = resolve_bandwidth(config, n, p)
    diag = {}

    with staged("lambda-cv"):
        if config.lam is None:
            plan = kfold_split(n, config.cv_folds, config.cv_seed)
            grid = lambda_grid(data, h, config.lambda_grid_size)
            lam, curve = cv_lambda(data, h, plan, grid, opts=config.cv_solver, return_curve=True)
            diag["lambda_grid"] = grid
            diag["lambda_cv_curve"] = curve
        else:
            lam = float(config.lam)

    with staged("lasso"):
        fit = fit_lasso(OfflineObjective(data, h), lam, config.solver)
    diag["kkt_residual"] = fit.kkt_residual
    diag["iterations"] = fit.iterations
    beta_hat = fit.beta

    grad, H, Sigma = batch_moments(beta_hat, data, h)

    with staged("delta-cv"):
        if config.delta is None:
            plan = kfold_split(n, config.cv_folds, config.cv_seed)
            dgrid = config.delta_grid if config.delta_grid is not None else default_delta_grid(n, p)
            delta, dcurve = cv_delta(data, h, beta_hat, plan, dgrid, n_jobs=config.n_jobs, return_curve=True)
            diag["delta_grid"] = np.asarray(dgrid, dtype=float)
            diag["delta_cv_curve"] = dcurve
        else:
            delta = float(config.delta)

    with staged("clime"):
        theta = solve_all(H, delta, n_jobs=config.n_jobs)

    estimate = debias(beta_hat, theta, grad)
    with staged("variance"):
        se = standard_errors(theta, Sigma, n)
    lo, hi = wald(estimate, se, config.level)
    diag["theta"] = theta.theta
    diag["hessian"] = H
    diag["sigma"] = Sigma
    diag["gradient"] = grad
    return InferenceResult(
        estimate=estimate,
        se=se,
        ci_lower=lo,
        ci_upper=hi,
        lasso_beta=beta_hat,
        lam=lam,
        h=h,
        delta=delta,
        n=n,
        p=p,
        level=config.level,
        diagnostics=diag,
    )
