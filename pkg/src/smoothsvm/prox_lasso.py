"""Accelerated proximal gradient for ``f(beta) + lam * ||beta[1:]||_1``.

``beta[0]`` is the intercept and is never penalised.  ``f`` is supplied as
an oracle object exposing ``dim``, ``value``, ``gradient`` and
``value_and_grad``; an optional ``hessian`` method enables a Newton polish
on the active set once the support has settled, which is what makes a
1e-8 KKT tolerance cheap to reach.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .exceptions import ConvergenceError, DimensionError, InvalidArgumentError, NumericalError
from .smoothing import (
    _check_h,
    check_beta,
    empirical_hessian,
    empirical_loss,
    loss_and_gradient,
    empirical_gradient,
)


class OfflineObjective:
    """Smoothed empirical hinge risk of one dataset."""

    def __init__(self, data, h):
        self.data = data
        self.h = _check_h(h)
        self.dim = data.p + 1

    def value(self, beta):
        return empirical_loss(beta, self.data, self.h)

    def gradient(self, beta):
        return empirical_gradient(beta, self.data, self.h)

    def value_and_grad(self, beta):
        return loss_and_gradient(check_beta(beta, self.data), self.data, self.h)

    def hessian(self, beta):
        return empirical_hessian(beta, self.data, self.h)


# steps only shrink; a curvature above 1e10 is not plausible for this loss
_MIN_STEP = 1e-10


@dataclass
class SolverOptions:
    max_iter: int = 10000
    tol: float = 1e-8
    acceleration: bool = True
    step_init: float = 1.0
    step_shrink: float = 0.5
    newton_polish: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidArgumentError("tol must be positive")
        if self.max_iter < 1:
            raise InvalidArgumentError("max_iter must be >= 1")
        if not 0 < self.step_shrink < 1:
            raise InvalidArgumentError("step_shrink must lie in (0, 1)")


@dataclass
class LassoFit:
    beta: np.ndarray
    lam: float
    h: Optional[float]
    iterations: int
    kkt_residual: float
    objective: float
    history: list = field(default_factory=list, repr=False)


def soft_threshold(v, t):
    """``sign(v) * max(|v| - t, 0)``, elementwise."""
    if np.any(np.asarray(t) < 0):
        raise InvalidArgumentError("threshold must be non-negative")
    out = np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def _prox(v, t):
    out = np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    out[0] = v[0]
    return out


def _kkt(beta, grad, lam):
    g = grad[1:]
    b = beta[1:]
    viol = np.where(b != 0.0, np.abs(g + lam * np.sign(b)), np.maximum(np.abs(g) - lam, 0.0))
    worst = viol.max() if viol.size else 0.0
    return float(max(abs(grad[0]), worst))


def kkt_residual(beta, oracle, lam):
    """Largest violation of the composite optimality conditions.

    Penalised coordinates at zero may carry ``|grad_j| <= lam`` (ties are
    fine); nonzero ones need ``grad_j + lam * sign(beta_j) = 0``; the
    intercept needs a zero partial derivative.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (oracle.dim,):
        raise DimensionError(f"beta has shape {beta.shape}, expected ({oracle.dim},)")
    return _kkt(beta, oracle.gradient(beta), lam)


def _penalty(beta, lam):
    return lam * float(np.abs(beta[1:]).sum())


def intercept_only(oracle, xtol=1e-14):
    """Minimise ``oracle`` over the intercept with every slope fixed at 0.

    Raises ConvergenceError when no finite minimiser exists (e.g. a single
    class in the data).
    """
    e0 = np.zeros(oracle.dim)

    def g0(b):
        e0[0] = b
        return oracle.gradient(e0)[0]

    lo, hi = -1.0, 1.0
    glo, ghi = g0(lo), g0(hi)
    for _ in range(60):
        if glo <= 0.0 <= ghi:
            break
        if glo > 0:
            hi, ghi = lo, glo
            lo = 2 * lo
            glo = g0(lo)
        else:
            lo, glo = hi, ghi
            hi = 2 * hi
            ghi = g0(hi)
    else:
        raise ConvergenceError("intercept-only problem has no finite minimiser")
    if glo == 0.0:
        b = lo
    elif ghi == 0.0:
        b = hi
    else:
        b = brentq(g0, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
    out = np.zeros(oracle.dim)
    out[0] = b
    return out


def lambda_max(oracle):
    """Smallest penalty at which every slope is zero, and the matching fit."""
    beta0 = intercept_only(oracle)
    grad = oracle.gradient(beta0)
    return float(np.abs(grad[1:]).max()) if oracle.dim > 1 else 0.0, beta0


def _newton_polish(oracle, x, lam, tol, max_steps=30):
    """Newton iterations on the active set with signs held fixed.

    Returns the polished point or None when the active set turns out to be
    wrong (sign change, singular restricted Hessian, no progress).
    """
    active = np.flatnonzero(x != 0.0)
    if active.size == 0 or active[0] != 0:
        active = np.union1d([0], active)
    signs = np.sign(x[active])
    signs[0] = 0.0
    z = x.copy()

    def phi(b):
        return oracle.value(b) + lam * float(signs @ b[active])

    val = phi(z)
    for _ in range(max_steps):
        grad = oracle.gradient(z)
        r = grad[active] + lam * signs
        if np.abs(r).max() <= 0.1 * tol:
            break
        H = oracle.hessian(z)[np.ix_(active, active)]
        try:
            step = np.linalg.solve(H, -r)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)):
            return None
        # cap the step so no active slope crosses zero
        t = 1.0
        cur = z[active]
        new = cur + step
        crossing = (signs != 0) & (np.sign(new) != signs)
        if np.any(crossing):
            t = min(1.0, 0.99 * float(np.min(-cur[crossing] / step[crossing])))
        accepted = False
        for _ in range(40):
            cand = z.copy()
            cand[active] = cur + t * step
            cval = phi(cand)
            if cval <= val + 1e-4 * t * float(r @ step) or (
                abs(cval - val) <= 1e-13 * max(1.0, abs(val)) and t == 1.0
            ):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return None
        z, val = cand, cval
    return z


def fit_lasso(oracle, lam, opts=None, warm_start=None):
    """Solve ``min f(beta) + lam * ||beta[1:]||_1`` by FISTA with restarts.

    Parameters
    ----------
    oracle : smooth-part oracle (see module docstring)
    lam : float, penalty level, >= 0
    opts : SolverOptions, optional
    warm_start : array of length ``oracle.dim``, optional

    Returns
    -------
    LassoFit

    Raises
    ------
    ConvergenceError
        ``max_iter`` exhausted; carries the best iterate.
    NumericalError
        Backtracking collapsed or the objective increased on a plain
        proximal step; neither happens for a convex oracle whose gradient
        matches its value.
    """
    opts = opts or SolverOptions()
    lam = float(lam)
    if not lam >= 0 or not math.isfinite(lam):
        raise InvalidArgumentError(f"lambda must be finite and >= 0, got {lam}")
    dim = oracle.dim
    if warm_start is None:
        x = np.zeros(dim)
        # exact zeros whenever lam >= lambda_max, not merely within tol
        try:
            x0 = intercept_only(oracle)
        except ConvergenceError:
            x0 = None
        if x0 is not None:
            f0, g0 = oracle.value_and_grad(x0)
            r0 = _kkt(x0, g0, lam)
            if r0 <= opts.tol:
                F0 = f0 + _penalty(x0, lam)
                return LassoFit(x0, lam, getattr(oracle, "h", None), 0, r0, F0, [F0])
    else:
        x = np.array(warm_start, dtype=float)
        if x.shape != (dim,):
            raise DimensionError(f"warm start has shape {x.shape}, expected ({dim},)")
    polish = opts.newton_polish and hasattr(oracle, "hessian")
    h = getattr(oracle, "h", None)

    fx, gx = oracle.value_and_grad(x)
    Fx = fx + _penalty(x, lam)
    res = _kkt(x, gx, lam)
    history = [Fx]
    if res <= opts.tol:
        return LassoFit(x, lam, h, 0, res, Fx, history)

    step = opts.step_init
    y, fy, gy = x, fx, gx
    t_mom = 1.0
    next_polish = 0
    best = (res, x)
    for it in range(1, opts.max_iter + 1):
        while True:
            x_new = _prox(y - step * gy, step * lam)
            f_new, g_new = oracle.value_and_grad(x_new)
            d = x_new - y
            dd = float(d @ d)
            bound = fy + float(gy @ d) + 0.5 * dd / step
            if f_new <= bound:
                break
            # near convergence the function test drowns in rounding; fall
            # back on the gradient-Lipschitz test
            if abs(f_new - bound) <= 1e-12 * max(1.0, abs(fy)) and float((g_new - gy) @ d) <= dd / step:
                break
            step *= opts.step_shrink
            if step < _MIN_STEP:
                raise NumericalError(
                    f"backtracking step fell below {_MIN_STEP:g}; the gradient is inconsistent with the value"
                )
        F_new = f_new + _penalty(x_new, lam)

        if F_new > Fx + 1e-12 * max(1.0, abs(Fx)):
            if y is not x:
                # momentum overshoot: restart from the last accepted point
                y, fy, gy, t_mom = x, fx, gx, 1.0
                continue
            raise NumericalError(
                f"objective increased from {Fx!r} to {F_new!r} on a plain proximal step; "
                "the smooth part is not convex or its gradient is wrong"
            )

        x_prev = x
        x, fx, gx, Fx = x_new, f_new, g_new, F_new
        history.append(Fx)
        res = _kkt(x, gx, lam)
        if res < best[0]:
            best = (res, x)
        if res <= opts.tol:
            return LassoFit(x, lam, h, it, res, Fx, history)

        if polish and it >= next_polish and res < 1e-3:
            z = _newton_polish(oracle, x, lam, opts.tol)
            if z is not None:
                fz, gz = oracle.value_and_grad(z)
                Fz = fz + _penalty(z, lam)
                rz = _kkt(z, gz, lam)
                if rz <= opts.tol and Fz <= Fx + 1e-12 * max(1.0, abs(Fx)):
                    history.append(Fz)
                    return LassoFit(z, lam, h, it, rz, Fz, history)
                if rz < res and Fz <= Fx:
                    x_prev = x
                    x, fx, gx, Fx, res = z, fz, gz, Fz, rz
            next_polish = it + 20

        if opts.acceleration:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
            y = x + ((t_mom - 1.0) / t_next) * (x - x_prev)
            t_mom = t_next
            fy, gy = oracle.value_and_grad(y)
        else:
            y, fy, gy = x, fx, gx

    raise ConvergenceError(
        f"no convergence in {opts.max_iter} iterations (KKT residual {best[0]:.3e})",
        beta=best[1],
        kkt_residual=best[0],
        iterations=opts.max_iter,
    )
