"""K-fold selection of the Lasso penalty and the CLIME constraint level."""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .clime import min_feasible_deltas, solve_path
from .exceptions import ConvergenceError, InfeasibleError, InvalidArgumentError, SmoothSVMError
from .prox_lasso import OfflineObjective, SolverOptions, fit_lasso, lambda_max
from .smoothing import empirical_hessian, empirical_loss

# CV fits only rank penalties by held-out loss, so they stop earlier
CV_SOLVER = SolverOptions(tol=1e-6, max_iter=3000)


class DegenerateDataWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int

    def splits(self):
        """Yield ``(train_idx, val_idx)`` for each fold in order."""
        for f in range(self.k):
            val = np.flatnonzero(self.assignments == f)
            train = np.flatnonzero(self.assignments != f)
            yield train, val


def kfold_split(n, k=5, seed=0):
    """Balanced random partition of ``range(n)`` into ``k`` folds."""
    if k < 2:
        raise InvalidArgumentError("k must be >= 2")
    if n < k:
        raise InvalidArgumentError(f"cannot split {n} samples into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[perm] = np.arange(n) % k
    return FoldPlan(k, assignments, seed)


def is_degenerate(data):
    return data.n < 2 or np.unique(data.y).size < 2


def grid_from_lambda_max(lam_max, grid_size=20, ratio=0.01):
    if grid_size < 2:
        raise InvalidArgumentError("grid_size must be >= 2")
    return lam_max * np.logspace(0.0, math.log10(ratio), grid_size)


def lambda_grid_for(oracle, grid_size=20, degenerate=False):
    """Log grid from ``lambda_max`` of ``oracle`` down to 1% of it."""
    try:
        lam_max, _ = lambda_max(oracle)
    except ConvergenceError:
        # no finite intercept-only fit (single class): fall back to the
        # gradient at zero
        degenerate = True
        lam_max = float(np.abs(oracle.gradient(np.zeros(oracle.dim))[1:]).max(initial=0.0))
    if degenerate:
        warnings.warn("degenerate data (single class); lambda grid is a fallback", DegenerateDataWarning)
    if not lam_max > 0:
        warnings.warn("all penalised gradients vanish; using lambda_max = 1", DegenerateDataWarning)
        lam_max = 1.0
    return grid_from_lambda_max(lam_max, grid_size)


def lambda_grid(data, h, grid_size=20):
    """Descending penalty grid for the offline objective on ``data``."""
    return lambda_grid_for(OfflineObjective(data, h), grid_size, degenerate=is_degenerate(data))


def _path_losses(objective, val, h, grid, opts, score):
    """Held-out scores along ``grid`` with warm starts; inf marks a failure."""
    out = np.full(len(grid), np.inf)
    notes = []
    beta = None
    for i, lam in enumerate(grid):
        try:
            fit = fit_lasso(objective, lam, opts, warm_start=beta)
            beta = fit.beta
        except ConvergenceError as exc:
            beta = exc.beta
            notes.append(f"lambda={lam:.4g}: not converged (kkt {exc.kkt_residual:.2e}), best iterate used")
        except SmoothSVMError as exc:
            notes.append(f"lambda={lam:.4g}: {exc}")
            beta = None
            continue
        out[i] = score(beta, val, h)
    return out, notes


def cv_lambda_curve(data, h, plan, grid, make_objective=None, opts=None, score=None):
    """Mean held-out score per grid value, plus per-fold diagnostics."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise InvalidArgumentError("lambda grid is empty")
    make_objective = make_objective or (lambda train: OfflineObjective(train, h))
    score = score or empirical_loss
    opts = opts or CV_SOLVER
    per_fold = []
    diagnostics = []
    for f, (train, val) in enumerate(plan.splits()):
        tr, va = data.subset(train), data.subset(val)
        losses, notes = _path_losses(make_objective(tr), va, h, grid, opts, score)
        per_fold.append(losses)
        diagnostics.extend(f"fold {f}: {n}" for n in notes)
    per_fold = np.array(per_fold)
    if not np.any(np.isfinite(per_fold)):
        raise SmoothSVMError("every cross-validation fit failed:\n" + "\n".join(diagnostics))
    return per_fold.mean(axis=0), diagnostics


def _argmin_first(values):
    """Index of the minimum, first occurrence winning ties."""
    best = 0
    for i in range(1, len(values)):
        if values[i] < values[best]:
            best = i
    return best


def cv_lambda(data, h, plan, grid, make_objective=None, opts=None, score=None, return_curve=False):
    """Penalty minimising the mean held-out smoothed hinge loss.

    ``grid`` is scanned in the given (descending) order and the first
    minimiser is kept, so ties go to the larger penalty.  Only training
    folds are handed to ``make_objective``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 1:
        lam = float(grid[0])
        return (lam, np.array([np.nan])) if return_curve else lam
    curve, _ = cv_lambda_curve(data, h, plan, grid, make_objective, opts, score)
    lam = float(grid[_argmin_first(curve)])
    return (lam, curve) if return_curve else lam


def default_delta_grid(n, p):
    """Constraint levels ``c * sqrt(log(p + 1) / n)``, ``c`` in {0, 1/8, 1/4, 1/2}.

    The held-out score usually keeps falling as ``delta`` grows, because
    validation-fold Hessians are noisy, so the top of this grid bounds
    the selected level.
    """
    scale = math.sqrt(math.log(p + 1) / n)
    return np.array([0.0, 0.125, 0.25, 0.5]) * scale


def clip_delta_grid(delta_grid, hessians):
    """Raise every grid value to at least the largest minimal feasible level."""
    floor = 0.0
    for H in hessians:
        md = float(min_feasible_deltas(H).max())
        if md > 0:
            floor = max(floor, md + 1e-9)
    return np.maximum(np.asarray(delta_grid, dtype=float), floor), floor


def matrix_score(H_val, theta):
    return float(np.abs(H_val @ theta - np.eye(H_val.shape[0])).max())


def cv_delta(
    data,
    h,
    beta_hat,
    plan,
    delta_grid,
    fold_hessian=None,
    n_jobs=1,
    return_curve=False,
):
    """CLIME level minimising the mean held-out ``||H_val Theta_train - I||_max``.

    ``fold_hessian(subset)`` builds the Hessian used on each side of a
    split; by default it is the empirical Hessian of the subset at
    ``beta_hat``.  Grid values below the smallest feasible level of any
    training Hessian are clipped up to it.  Ties go to the larger delta.
    """
    delta_grid = np.asarray(delta_grid, dtype=float)
    if delta_grid.size == 0:
        raise InvalidArgumentError("delta grid is empty")
    if np.any(delta_grid < 0):
        raise InvalidArgumentError("delta grid values must be >= 0")
    if delta_grid.size == 1:
        d = float(delta_grid[0])
        return (d, np.array([np.nan])) if return_curve else d
    if fold_hessian is None:
        def fold_hessian(subset):
            return empirical_hessian(beta_hat, subset, h)

    pairs = [(fold_hessian(data.subset(tr)), fold_hessian(data.subset(va))) for tr, va in plan.splits()]
    grid, _ = clip_delta_grid(delta_grid, [Ht for Ht, _ in pairs])
    scores = np.zeros(grid.size)
    failures = []
    for f, (H_train, H_val) in enumerate(pairs):
        try:
            ests = solve_path(H_train, grid, n_jobs=n_jobs)
        except InfeasibleError as exc:
            failures.append(f"fold {f}: column {exc.column} needs delta >= {exc.min_delta:.6g}")
            scores[:] = np.inf
            continue
        scores += np.array([matrix_score(H_val, e.theta) for e in ests])
    if not np.any(np.isfinite(scores)):
        raise InfeasibleError("delta grid infeasible on every fold:\n" + "\n".join(failures))
    scores /= plan.k
    best = float(scores.min())
    chosen = float(grid[scores == best].max())
    return (chosen, scores) if return_curve else chosen
