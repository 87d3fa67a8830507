"""Streaming debiased smoothed-SVM Lasso driven by summary statistics.

Only the following survive a batch: the cumulative size ``N``, the
unnormalised gradient and Hessian-times-estimate sums ``S1`` and ``S2``,
the running-average Hessian ``H`` and score outer product ``Sigma``, the
latest Lasso estimate and the per-batch tuning values.
"""

import hashlib
import json
import math
import struct
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .clime import solve_all
from .exceptions import (
    ChecksumError,
    DimensionError,
    InvalidArgumentError,
    StateFormatError,
    TruncationError,
    VersionMismatchError,
    staged,
)
from .model_selection import (
    DegenerateDataWarning,
    clip_delta_grid,
    cv_delta,
    cv_lambda,
    default_delta_grid,
    is_degenerate,
    kfold_split,
    lambda_grid_for,
)
from .offline import InferenceConfig, InferenceResult, standard_errors, wald
from .prox_lasso import OfflineObjective, fit_lasso, lambda_max
from .smoothing import (
    _check_h,
    batch_moments,
    check_beta,
    default_bandwidth,
    empirical_hessian,
    empirical_loss,
    loss_and_gradient,
    empirical_gradient,
)

SCHEMA_VERSION = 1
MAGIC = b"SSVMSTAT"
# magic, schema version, p, b, N, payload length in bytes
_HEADER = struct.Struct("<8sIIQQQ")
_DIGEST = 32
MIN_BATCH = 5


@dataclass(frozen=True)
class OnlineState:
    b: int
    N: int
    S1: np.ndarray
    S2: np.ndarray
    H: np.ndarray
    Sigma: np.ndarray
    beta: np.ndarray
    h_history: np.ndarray
    lam_history: np.ndarray
    delta_history: np.ndarray
    p: int
    schema_version: int = SCHEMA_VERSION

    def equals(self, other):
        """Bitwise equality of every field."""
        if not isinstance(other, OnlineState):
            return False
        scalars = ("b", "N", "p", "schema_version")
        if any(getattr(self, k) != getattr(other, k) for k in scalars):
            return False
        arrays = ("S1", "S2", "H", "Sigma", "beta", "h_history", "lam_history", "delta_history")
        return all(
            getattr(self, k).shape == getattr(other, k).shape
            and getattr(self, k).tobytes() == getattr(other, k).tobytes()
            for k in arrays
        )


def init_state(p):
    if p < 1:
        raise InvalidArgumentError("p must be >= 1")
    m = p + 1
    return OnlineState(
        b=0,
        N=0,
        S1=np.zeros(m),
        S2=np.zeros(m),
        H=np.zeros((m, m)),
        Sigma=np.zeros((m, m)),
        beta=np.zeros(m),
        h_history=np.zeros(0),
        lam_history=np.zeros(0),
        delta_history=np.zeros(0),
        p=p,
    )


class OnlineObjective:
    """Quadratic surrogate of past batches plus the current batch loss.

    ``value(beta) = ((N_prev / 2) d^T H_prev d + n_b L(beta; batch)) / N_b``
    with ``d = beta - beta_prev``.
    """

    def __init__(self, state, batch, h):
        self.batch = batch
        self.h = _check_h(h)
        self.dim = batch.p + 1
        self.N_prev = state.N
        self.N = state.N + batch.n
        self.H_prev = state.H
        self.beta_prev = state.beta
        self._wq = state.N / self.N
        self._wb = batch.n / self.N

    def value(self, beta):
        d = check_beta(beta, self.batch) - self.beta_prev
        return 0.5 * self._wq * float(d @ self.H_prev @ d) + self._wb * empirical_loss(beta, self.batch, self.h)

    def gradient(self, beta):
        d = check_beta(beta, self.batch) - self.beta_prev
        return self._wq * (self.H_prev @ d) + self._wb * empirical_gradient(beta, self.batch, self.h)

    def value_and_grad(self, beta):
        d = beta - self.beta_prev
        Hd = self.H_prev @ d
        f, g = loss_and_gradient(beta, self.batch, self.h)
        return 0.5 * self._wq * float(d @ Hd) + self._wb * f, self._wq * Hd + self._wb * g

    def hessian(self, beta):
        return self._wq * self.H_prev + self._wb * empirical_hessian(beta, self.batch, self.h)


def online_objective(state, batch, h):
    """Smooth part of the batch-``b`` problem.

    With no history the quadratic term is absent and the offline objective
    is returned unchanged, so a one-batch stream reproduces the offline fit
    bit for bit.
    """
    if batch.p != state.p:
        raise DimensionError(f"batch has p={batch.p}, state has p={state.p}")
    if state.N == 0:
        return OfflineObjective(batch, h)
    return OnlineObjective(state, batch, h)


@dataclass
class BatchResult:
    result: InferenceResult
    b: int
    N: int
    diagnostics: dict = field(default_factory=dict, repr=False)


def _merge(avg_prev, N_prev, batch_avg, n_b):
    # running average written so the first batch is reproduced exactly
    return avg_prev + (n_b / (N_prev + n_b)) * (batch_avg - avg_prev)


def debiased_estimate(beta, theta, S1, S2, H, N):
    """Two-correction online estimate, split form.

    ``beta_j - Theta_j^T S1 / N + Theta_j^T S2 / N - Theta_j^T H beta``
    """
    return beta - theta.T @ S1 / N + theta.T @ S2 / N - theta.T @ (H @ beta)


def _pooled_hessian_fn(state, beta, h):
    def fold_hessian(subset):
        Hs = empirical_hessian(beta, subset, h)
        if state.N == 0:
            return Hs
        return _merge(state.H, state.N, Hs, subset.n)

    return fold_hessian


def _last_finite(values, default=0.0):
    finite = values[np.isfinite(values)]
    return float(finite[-1]) if finite.size else default


def update_batch(state, batch, config=None, infer=True):
    """Process one batch; returns ``(new_state, BatchResult or None)``.

    The input state is never modified, so a failure at any stage leaves
    the stream where it was.  With ``infer=False`` the CLIME and
    debiasing steps are skipped (the summaries do not depend on them)
    and, unless ``config.delta`` is set, the recorded level is NaN.
    """
    config = config or InferenceConfig()
    if batch.p != state.p:
        raise DimensionError(f"batch has p={batch.p}, state has p={state.p}")
    n_b = batch.n
    N = state.N + n_b
    h = float(config.h) if config.h is not None else default_bandwidth(N, max(state.p, 2))
    objective = online_objective(state, batch, h)
    degenerate = is_degenerate(batch) or n_b < max(MIN_BATCH, config.cv_folds)
    diag = {}

    with staged("lambda-cv"):
        if config.lam is not None:
            lam = float(config.lam)
        elif degenerate:
            warnings.warn(
                f"batch {state.b + 1} is degenerate (n={n_b}, classes={np.unique(batch.y).size}); "
                "reusing the previous tuning",
                DegenerateDataWarning,
            )
            if state.b > 0:
                lam = float(state.lam_history[-1]) * math.sqrt(state.N / N)
            else:
                lam = 0.1 * lambda_max(objective)[0]
            diag["degenerate"] = True
        else:
            plan = kfold_split(n_b, config.cv_folds, config.cv_seed)
            grid = lambda_grid_for(objective, config.lambda_grid_size)

            def make_objective(train):
                return online_objective(state, train, h)

            lam, curve = cv_lambda(
                batch, h, plan, grid, make_objective=make_objective, opts=config.cv_solver, return_curve=True
            )
            diag["lambda_grid"] = grid
            diag["lambda_cv_curve"] = curve

    with staged("lasso"):
        fit = fit_lasso(objective, lam, config.solver)
    beta = fit.beta
    diag["kkt_residual"] = fit.kkt_residual
    diag["iterations"] = fit.iterations

    grad, Hb, Sb = batch_moments(beta, batch, h)
    S1 = state.S1 + n_b * grad
    S2 = state.S2 + n_b * (Hb @ beta)
    H = _merge(state.H, state.N, Hb, n_b)
    Sigma = _merge(state.Sigma, state.N, Sb, n_b)

    with staged("delta-cv"):
        if config.delta is not None:
            delta = float(config.delta)
        elif not infer:
            # Theta never feeds the summaries, so a skipped batch needs no level
            delta = math.nan
        elif degenerate:
            delta = float(clip_delta_grid([_last_finite(state.delta_history)], [H])[0][0])
        else:
            plan = kfold_split(n_b, config.cv_folds, config.cv_seed)
            dgrid = config.delta_grid if config.delta_grid is not None else default_delta_grid(N, state.p)
            delta, dcurve = cv_delta(
                batch,
                h,
                beta,
                plan,
                dgrid,
                fold_hessian=_pooled_hessian_fn(state, beta, h),
                n_jobs=config.n_jobs,
                return_curve=True,
            )
            diag["delta_cv_curve"] = dcurve

    result = None
    if infer:
        with staged("clime"):
            theta = solve_all(H, delta, n_jobs=config.n_jobs)
        estimate = debiased_estimate(beta, theta.theta, S1, S2, H, N)
        with staged("variance"):
            se = standard_errors(theta, Sigma, N)
        lo, hi = wald(estimate, se, config.level)
        diag["theta"] = theta.theta
        result = InferenceResult(
            estimate=estimate,
            se=se,
            ci_lower=lo,
            ci_upper=hi,
            lasso_beta=beta,
            lam=lam,
            h=h,
            delta=delta,
            n=N,
            p=state.p,
            level=config.level,
            diagnostics=diag,
        )

    new_state = replace(
        state,
        b=state.b + 1,
        N=N,
        S1=S1,
        S2=S2,
        H=H,
        Sigma=Sigma,
        beta=beta.copy(),
        h_history=np.append(state.h_history, h),
        lam_history=np.append(state.lam_history, lam),
        delta_history=np.append(state.delta_history, delta),
    )
    batch_result = BatchResult(result, new_state.b, N, diag) if infer else None
    return new_state, batch_result


def _arrays(state):
    return [state.S1, state.S2, state.H, state.Sigma, state.beta, state.h_history, state.lam_history, state.delta_history]


def serialize_state(state):
    """Versioned binary encoding with a trailing SHA-256 digest.

    Layout: header ``(magic, schema_version, p, b, N, payload_bytes)``,
    then little-endian float64 ``S1, S2, H (row-major), Sigma, beta,
    h_history, lam_history, delta_history``, then the digest of all
    preceding bytes.
    """
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in _arrays(state))
    header = _HEADER.pack(MAGIC, state.schema_version, state.p, state.b, state.N, len(payload))
    body = header + payload
    return body + hashlib.sha256(body).digest()


def deserialize_state(blob):
    blob = bytes(blob)
    if len(blob) < _HEADER.size:
        raise TruncationError("state is shorter than its header")
    magic, version, p, b, N, length = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise StateFormatError("not a state file (bad magic)")
    if version != SCHEMA_VERSION:
        raise VersionMismatchError(f"state schema {version}, this build reads {SCHEMA_VERSION}")
    m = p + 1
    expected = 8 * (3 * m + 2 * m * m + 3 * b)
    if length != expected or len(blob) != _HEADER.size + length + _DIGEST:
        raise TruncationError(
            f"state length mismatch: header says {length} payload bytes, layout needs {expected}, "
            f"file has {len(blob) - _HEADER.size - _DIGEST}"
        )
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("state checksum mismatch")
    flat = np.frombuffer(body, dtype="<f8", offset=_HEADER.size).astype(float)
    sizes = [m, m, m * m, m * m, m, b, b, b]
    parts = np.split(flat, np.cumsum(sizes)[:-1])
    return OnlineState(
        b=b,
        N=N,
        S1=parts[0].copy(),
        S2=parts[1].copy(),
        H=parts[2].reshape(m, m).copy(),
        Sigma=parts[3].reshape(m, m).copy(),
        beta=parts[4].copy(),
        h_history=parts[5].copy(),
        lam_history=parts[6].copy(),
        delta_history=parts[7].copy(),
        p=p,
        schema_version=version,
    )


def state_to_json(state):
    """Human-readable export; floats use ``repr`` so the text is lossless."""
    doc = {
        "schema_version": state.schema_version,
        "p": state.p,
        "b": state.b,
        "N": state.N,
        "S1": state.S1.tolist(),
        "S2": state.S2.tolist(),
        "H": state.H.tolist(),
        "Sigma": state.Sigma.tolist(),
        "beta": state.beta.tolist(),
        "h_history": state.h_history.tolist(),
        "lam_history": state.lam_history.tolist(),
        "delta_history": state.delta_history.tolist(),
    }
    return json.dumps(doc, indent=2)


def state_from_json(text):
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise VersionMismatchError(f"state schema {doc.get('schema_version')}, expected {SCHEMA_VERSION}")
    arr = lambda k: np.array(doc[k], dtype=float)  # noqa: E731
    m = doc["p"] + 1
    return OnlineState(
        b=doc["b"],
        N=doc["N"],
        S1=arr("S1"),
        S2=arr("S2"),
        H=arr("H").reshape(m, m),
        Sigma=arr("Sigma").reshape(m, m),
        beta=arr("beta"),
        h_history=arr("h_history"),
        lam_history=arr("lam_history"),
        delta_history=arr("delta_history"),
        p=doc["p"],
    )
