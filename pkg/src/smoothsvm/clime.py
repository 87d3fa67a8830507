"""Column-wise constrained l1 estimate of an inverse Hessian (CLIME).

Each column solves the linear program

    min ||theta||_1   s.t.   ||H theta - e_j||_inf <= delta

written with ``theta = theta_plus - theta_minus`` as ranged rows
``e_j - delta <= [H, -H] [theta_plus; theta_minus] <= e_j + delta``.  The
constraint matrix is shared by every column and every ``delta``, so one
HiGHS model per block of columns is re-solved with new row bounds and a
dual-simplex hot start.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import highspy
import numpy as np
import scipy.sparse as sp

from .exceptions import DimensionError, InfeasibleError, InvalidArgumentError, NumericalError

FEAS_TOL = 1e-8
# columns are grouped into fixed blocks so the returned vertex never
# depends on how many workers were used
BLOCK = 16

_INF = highspy.kHighsInf
_OPTIMAL = highspy.HighsModelStatus.kOptimal
_INFEASIBLE = (highspy.HighsModelStatus.kInfeasible,)
_BASIC = highspy.HighsBasisStatus.kBasic
_UPPER = highspy.HighsBasisStatus.kUpper


@dataclass
class PrecisionEstimate:
    theta: np.ndarray
    delta: float
    per_column_status: list


def check_matrix(H, symmetric_tol=1e-10):
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionError(f"H must be square, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise InvalidArgumentError("H has non-finite entries")
    scale = max(1.0, float(np.abs(H).max()))
    if np.abs(H - H.T).max() > symmetric_tol * scale:
        raise InvalidArgumentError("H is not symmetric")
    return H


def _new_highs():
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("primal_feasibility_tolerance", 1e-10)
    h.setOptionValue("dual_feasibility_tolerance", 1e-10)
    h.setOptionValue("threads", 1)
    return h


def _pass_lp(h, cost, col_lower, col_upper, row_lower, row_upper, A):
    A = sp.csc_matrix(A)
    lp = highspy.HighsLp()
    lp.num_col_, lp.num_row_ = A.shape[1], A.shape[0]
    lp.col_cost_ = np.asarray(cost, dtype=float)
    lp.col_lower_ = np.asarray(col_lower, dtype=float)
    lp.col_upper_ = np.asarray(col_upper, dtype=float)
    lp.row_lower_ = np.asarray(row_lower, dtype=float)
    lp.row_upper_ = np.asarray(row_upper, dtype=float)
    lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    lp.a_matrix_.start_ = A.indptr
    lp.a_matrix_.index_ = A.indices
    lp.a_matrix_.value_ = A.data
    lp.a_matrix_.num_col_ = A.shape[1]
    lp.a_matrix_.num_row_ = A.shape[0]
    h.passModel(lp)


class ColumnSolver:
    """One HiGHS model for ``H``; re-solved per (column, delta)."""

    def __init__(self, H):
        self.H = H
        self.m = m = H.shape[0]
        self._rows = np.arange(m, dtype=np.int32)
        self._h = _new_highs()
        self._A = np.hstack([H, -H])
        _pass_lp(self._h, np.ones(2 * m), np.zeros(2 * m), np.full(2 * m, _INF), np.zeros(m), np.zeros(m), self._A)

    def solve(self, j, delta):
        m = self.m
        e = np.zeros(m)
        e[j] = 1.0
        self._h.changeRowsBounds(m, self._rows, e - delta, e + delta)
        self._h.run()
        status = self._h.getModelStatus()
        if status in _INFEASIBLE:
            return None, "infeasible"
        if status != _OPTIMAL:
            # retry cold before giving up on a stale basis
            self._h.clearSolver()
            self._h.run()
            status = self._h.getModelStatus()
            if status != _OPTIMAL:
                return None, self._h.modelStatusToString(status)
        x = np.asarray(self._h.getSolution().col_value)
        polished = self._polish(e, delta)
        if polished is not None:
            x = polished
        return x[:m] - x[m:], "optimal"

    def _polish(self, e, delta):
        """Recompute the optimal vertex from its basis in double precision.

        HiGHS works on a scaled model, so its vertex can miss the unscaled
        constraints by ~1e-8; solving the active rows directly removes that.
        """
        basis = self._h.getBasis()
        col_status = list(basis.col_status)
        row_status = list(basis.row_status)
        basic = [k for k, st in enumerate(col_status) if st == _BASIC]
        tight = [i for i, st in enumerate(row_status) if st != _BASIC]
        if len(basic) != len(tight):
            return None
        x = np.zeros(2 * self.m)
        if basic:
            rhs = np.array([e[i] + delta if row_status[i] == _UPPER else e[i] - delta for i in tight])
            A = self._A[np.ix_(tight, basic)]
            try:
                x[basic] = np.linalg.solve(A, rhs)
            except np.linalg.LinAlgError:
                return None
        if not np.all(np.isfinite(x)) or x.min() < -1e-12:
            return None
        x = np.maximum(x, 0.0)
        theta = x[: self.m] - x[self.m :]
        if float(np.abs(self.H @ theta - e).max()) > delta + 1e-12:
            return None
        return x


def _certify(H, theta, j, delta):
    e = np.zeros(H.shape[0])
    e[j] = 1.0
    return float(np.abs(H @ theta - e).max()) <= delta + FEAS_TOL


def min_feasible_delta(H, j):
    """Smallest ``delta`` for which column ``j`` is feasible.

    Solves ``min_theta ||H theta - e_j||_inf`` as an LP in (theta, t).
    """
    H = check_matrix(H)
    m = H.shape[0]
    if not 0 <= j < m:
        raise DimensionError(f"column {j} out of range for dimension {m}")
    e = np.zeros(m)
    e[j] = 1.0
    ones = np.ones((m, 1))
    # rows: H theta - t <= e_j  and  H theta + t >= e_j
    A = np.vstack([np.hstack([H, -ones]), np.hstack([H, ones])])
    h = _new_highs()
    _pass_lp(
        h,
        np.r_[np.zeros(m), 1.0],
        np.r_[np.full(m, -_INF), 0.0],
        np.full(m + 1, _INF),
        np.r_[np.full(m, -_INF), e],
        np.r_[e, np.full(m, _INF)],
        A,
    )
    h.run()
    if h.getModelStatus() != _OPTIMAL:
        raise NumericalError(f"min-feasible-delta LP failed for column {j}")
    return max(0.0, float(h.getSolution().col_value[m]))


def min_feasible_deltas(H, cond_limit=1e8):
    """``min_feasible_delta`` for every column.

    A well-conditioned ``H`` is invertible, so every column reaches zero
    residual and no LP is needed.
    """
    H = check_matrix(H)
    evals = np.linalg.eigvalsh(H)
    top = float(np.abs(evals).max())
    if top > 0 and float(np.abs(evals).min()) * cond_limit > top:
        return np.zeros(H.shape[0])
    return np.array([min_feasible_delta(H, j) for j in range(H.shape[0])])


def solve_column(H, j, delta):
    """Column ``j`` of the CLIME estimate at level ``delta``."""
    H = check_matrix(H)
    m = H.shape[0]
    if not 0 <= j < m:
        raise DimensionError(f"column {j} out of range for dimension {m}")
    if not delta >= 0:
        raise InvalidArgumentError(f"delta must be >= 0, got {delta}")
    theta, status = ColumnSolver(H).solve(j, float(delta))
    return _finish_column(H, j, float(delta), theta, status)


def _finish_column(H, j, delta, theta, status):
    if theta is None:
        if status == "infeasible":
            md = min_feasible_delta(H, j)
            raise InfeasibleError(
                f"column {j} infeasible at delta={delta:g}; smallest feasible delta is {md:.6g}",
                column=j,
                min_delta=md,
            )
        raise NumericalError(f"LP for column {j} ended with status {status}")
    if not _certify(H, theta, j, delta):
        resid = float(np.abs(H @ theta - np.eye(H.shape[0])[j]).max())
        if resid > delta + 1e-6:
            md = min_feasible_delta(H, j)
            if md > delta:
                raise InfeasibleError(
                    f"column {j} infeasible at delta={delta:g}; smallest feasible delta is {md:.6g}",
                    column=j,
                    min_delta=md,
                )
        raise NumericalError(
            f"column {j}: constraint residual {resid:.3e} exceeds delta={delta:g} + {FEAS_TOL:g}"
        )
    return theta


def _solve_block(H, cols, deltas):
    solver = ColumnSolver(H)
    out = {}
    for delta in deltas:
        for j in cols:
            theta, status = solver.solve(j, delta)
            out[delta, j] = (theta, status)
    return out


def solve_path(H, deltas, n_jobs=1):
    """CLIME estimates for several ``delta`` values sharing warm starts.

    Returns a list of PrecisionEstimate in the order of ``deltas``.
    """
    H = check_matrix(H)
    m = H.shape[0]
    deltas = [float(d) for d in deltas]
    if any(not d >= 0 for d in deltas):
        raise InvalidArgumentError("delta must be >= 0")
    blocks = [list(range(s, min(s + BLOCK, m))) for s in range(0, m, BLOCK)]
    lp_deltas = [d for d in deltas if d > 0]
    direct = None
    if any(d == 0 for d in deltas):
        direct = _direct_inverse(H)
        if direct is None:
            lp_deltas.append(0.0)

    results = {}
    if lp_deltas:
        order = sorted(set(lp_deltas), reverse=True)
        if n_jobs > 1 and len(blocks) > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                parts = list(pool.map(lambda cols: _solve_block(H, cols, order), blocks))
        else:
            parts = [_solve_block(H, cols, order) for cols in blocks]
        for part in parts:
            results.update(part)

    estimates = []
    for delta in deltas:
        theta = np.empty((m, m))
        status = []
        for j in range(m):
            if delta == 0 and direct is not None:
                theta[:, j] = direct[:, j]
                status.append("direct")
                continue
            col, st = results[delta, j]
            theta[:, j] = _finish_column(H, j, delta, col, st)
            status.append(st)
        estimates.append(PrecisionEstimate(theta, delta, status))
    return estimates


def solve_all(H, delta, n_jobs=1):
    """All columns at one ``delta``; no symmetrisation is applied."""
    return solve_path(H, [delta], n_jobs=n_jobs)[0]


def _direct_inverse(H):
    """``H^{-1}`` when it certifies every column at delta = 0, else None.

    For invertible ``H`` the delta = 0 program has the single feasible
    point ``H^{-1} e_j``, so the LP is unnecessary.
    """
    try:
        inv = np.linalg.solve(H, np.eye(H.shape[0]))
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(inv)):
        return None
    if float(np.abs(H @ inv - np.eye(H.shape[0])).max()) > FEAS_TOL:
        return None
    return inv
