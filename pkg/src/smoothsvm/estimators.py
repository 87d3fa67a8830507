"""scikit-learn style wrappers around the offline and online pipelines."""

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import InvalidArgumentError
from .offline import InferenceConfig, run_offline
from .online import init_state, update_batch
from .smoothing import Dataset


def _signed_labels(y, classes=None):
    """Map two class labels to -1/+1 (sorted order); returns (y_pm, classes)."""
    if classes is None:
        classes = np.unique(y)
        if classes.size != 2:
            raise InvalidArgumentError(f"need exactly two classes, got {classes.size}")
    pos = np.isin(y, classes)
    if not pos.all():
        raise InvalidArgumentError(f"unseen labels {np.unique(y[~pos])}")
    return np.where(y == classes[1], 1.0, -1.0), classes


class _InferenceMixin(ClassifierMixin):
    def _config(self):
        return InferenceConfig(
            lam=self.lam,
            delta=self.delta,
            h=self.h,
            level=self.level,
            cv_folds=self.cv_folds,
            cv_seed=self.cv_seed,
            lambda_grid_size=self.lambda_grid_size,
            delta_grid=None if self.delta_grid is None else tuple(self.delta_grid),
            n_jobs=self.n_jobs,
        )

    def _store(self, result):
        self.result_ = result
        self.intercept_ = float(result.lasso_beta[0])
        self.coef_ = result.lasso_beta[1:].copy()
        self.debiased_coef_ = result.estimate.copy()
        self.standard_errors_ = result.se.copy()
        self.confidence_intervals_ = np.column_stack([result.ci_lower, result.ci_upper])
        self.lam_ = result.lam
        self.delta_ = result.delta
        self.h_ = result.h

    def decision_function(self, X):
        """Lasso margin ``intercept_ + X @ coef_``."""
        check_is_fitted(self, "coef_")
        X = check_array(X, accept_sparse="csr", dtype=float)
        if X.shape[1] != self.coef_.size:
            raise InvalidArgumentError(f"X has {X.shape[1]} features, model has {self.coef_.size}")
        return np.asarray(X @ self.coef_).ravel() + self.intercept_

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]

    def p_values(self):
        """Two-sided Wald p-values for ``H0: beta_j = 0`` (index 0 is the intercept)."""
        check_is_fitted(self, "result_")
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.abs(self.debiased_coef_) / self.standard_errors_
        return 2.0 * norm.sf(z)


class SmoothedSVMInference(_InferenceMixin, BaseEstimator):
    """Debiased l1-penalised smoothed SVM fitted on a full dataset.

    Parameters
    ----------
    lam, delta : float or None
        Lasso penalty and CLIME level; None selects by K-fold CV.
    h : float or None
        Smoothing bandwidth; None uses ``(5 log p / n)^(1/4)``.
    level : float
        Confidence level of the Wald intervals.
    cv_folds, cv_seed : int
        Fold count and fold-assignment seed.
    lambda_grid_size : int
        Number of penalties on the log grid below ``lambda_max``.
    delta_grid : sequence of float or None
        CLIME levels to cross-validate; None uses the default grid.
    n_jobs : int
        Threads for the column LPs.

    Attributes
    ----------
    coef_, intercept_ : Lasso estimate (used for prediction).
    debiased_coef_ : ndarray of shape (p + 1,)
        Debiased estimate, intercept first.
    standard_errors_, confidence_intervals_ : per-coordinate inference.
    """

    def __init__(
        self,
        lam=None,
        delta=None,
        h=None,
        level=0.95,
        cv_folds=5,
        cv_seed=0,
        lambda_grid_size=20,
        delta_grid=None,
        n_jobs=1,
    ):
        self.lam = lam
        self.delta = delta
        self.h = h
        self.level = level
        self.cv_folds = cv_folds
        self.cv_seed = cv_seed
        self.lambda_grid_size = lambda_grid_size
        self.delta_grid = delta_grid
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_X_y(X, y, accept_sparse="csr", dtype=float)
        y_pm, self.classes_ = _signed_labels(y)
        self.n_features_in_ = X.shape[1]
        self._store(run_offline(Dataset(X, y_pm), self._config()))
        return self


class OnlineSmoothedSVMInference(_InferenceMixin, BaseEstimator):
    """Streaming version: each ``partial_fit`` call is one batch.

    Only summary statistics are kept between calls (``state_``).
    ``fit`` splits the data into ``n_batches`` contiguous blocks.
    Parameters are as in :class:`SmoothedSVMInference`.
    """

    def __init__(
        self,
        lam=None,
        delta=None,
        h=None,
        level=0.95,
        cv_folds=5,
        cv_seed=0,
        lambda_grid_size=20,
        delta_grid=None,
        n_jobs=1,
        n_batches=1,
    ):
        self.lam = lam
        self.delta = delta
        self.h = h
        self.level = level
        self.cv_folds = cv_folds
        self.cv_seed = cv_seed
        self.lambda_grid_size = lambda_grid_size
        self.delta_grid = delta_grid
        self.n_jobs = n_jobs
        self.n_batches = n_batches

    def partial_fit(self, X, y, classes=None):
        X, y = check_X_y(X, y, accept_sparse="csr", dtype=float)
        if not hasattr(self, "state_"):
            if classes is None:
                classes = np.unique(y)
            classes = np.asarray(classes)
            if classes.size != 2:
                raise InvalidArgumentError("pass both class labels on the first partial_fit call")
            self.classes_ = np.sort(classes)
            self.n_features_in_ = X.shape[1]
            self.state_ = init_state(X.shape[1])
        y_pm, _ = _signed_labels(y, self.classes_)
        state, out = update_batch(self.state_, Dataset(X, y_pm), self._config())
        self.state_ = state
        self._store(out.result)
        return self

    def fit(self, X, y):
        X, y = check_X_y(X, y, accept_sparse="csr", dtype=float)
        if not 1 <= self.n_batches <= X.shape[0]:
            raise InvalidArgumentError("n_batches must lie in [1, n_samples]")
        for attr in ("state_", "result_"):
            self.__dict__.pop(attr, None)
        classes = np.unique(y)
        for idx in np.array_split(np.arange(X.shape[0]), self.n_batches):
            self.partial_fit(X[idx], y[idx], classes=classes)
        return self
