"""Two-class Gaussian designs, the population hinge-risk minimiser, and
the coverage/bias/length metrics used to score replications."""

import functools
import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.optimize import brentq
from scipy.stats import norm

from .exceptions import DimensionError, InvalidArgumentError, NumericalError
from .offline import run_offline
from .online import init_state, update_batch
from .smoothing import Dataset

COV_TYPES = ("I", "II", "III")
# standard normal mass beyond +-40 is below 1e-300
_TAIL = 40.0
CASE_MEANS = {
    1: (0.3, 0.3, 0.3, 0.3, 0.3),
    2: (-0.1, 0.2, 0.25, 0.1, -0.2),
}


@dataclass(frozen=True)
class ScenarioConfig:
    case: int = 1
    cov_type: str = "III"
    p: int = 60
    n: Optional[int] = None
    B: Optional[int] = None
    n_b: Optional[int] = None
    s: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.case not in CASE_MEANS:
            raise InvalidArgumentError(f"case must be 1 or 2, got {self.case}")
        if self.cov_type not in COV_TYPES:
            raise InvalidArgumentError(f"cov_type must be one of {COV_TYPES}, got {self.cov_type}")
        if self.p < self.s:
            raise InvalidArgumentError("p must be >= s")
        if self.s != len(CASE_MEANS[self.case]):
            raise InvalidArgumentError(f"case {self.case} fixes s = {len(CASE_MEANS[self.case])}")
        if self.n is None and (self.B is None or self.n_b is None):
            raise InvalidArgumentError("give n, or B and n_b")

    @property
    def total_n(self):
        return self.n if self.n is not None else self.B * self.n_b

    def with_seed(self, seed):
        return ScenarioConfig(self.case, self.cov_type, self.p, self.n, self.B, self.n_b, self.s, seed)

    def label(self):
        size = f"n={self.n}" if self.n is not None else f"B={self.B},n_b={self.n_b}"
        return f"case{self.case}-{self.cov_type}-p={self.p}-{size}"


def _ar1(k, rho):
    idx = np.arange(k)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def make_covariance(cov_type, p, s=5):
    """Type I: unit diagonal, 0.1 among the first ``s``; type II: two AR(1)
    blocks (rho = 0.3) of sizes ``s`` and ``p - s``; type III: identity."""
    if p < s:
        raise InvalidArgumentError("p must be >= s")
    if cov_type == "I":
        S = np.eye(p)
        S[:s, :s] = 0.1
        np.fill_diagonal(S, 1.0)
        return S
    if cov_type == "II":
        S = np.zeros((p, p))
        S[:s, :s] = _ar1(s, 0.3)
        S[s:, s:] = _ar1(p - s, 0.3)
        return S
    if cov_type == "III":
        return np.eye(p)
    raise InvalidArgumentError(f"unknown covariance type {cov_type!r}")


def mean_vector(case, p):
    mu = np.zeros(p)
    vals = CASE_MEANS[case]
    mu[: len(vals)] = vals
    return mu


def sample_scenario(cfg):
    """Draw a Dataset (``n`` given) or a list of ``B`` contiguous batches."""
    rng = np.random.default_rng(cfg.seed)
    N = cfg.total_n
    mu = mean_vector(cfg.case, cfg.p)
    L = np.linalg.cholesky(make_covariance(cfg.cov_type, cfg.p, cfg.s))
    y = rng.choice(np.array([-1.0, 1.0]), size=N)
    X = y[:, None] * mu[None, :] + rng.standard_normal((N, cfg.p)) @ L.T
    if cfg.n is not None:
        return Dataset(X, y)
    return [Dataset(X[i : i + cfg.n_b], y[i : i + cfg.n_b]) for i in range(0, N, cfg.n_b)]


def hinge_risk(m, s):
    """``E max(1 - Z, 0)`` for ``Z ~ N(m, s^2)`` by adaptive quadrature."""
    if s <= 0:
        return max(1.0 - m, 0.0)
    upper = min((1.0 - m) / s, _TAIL)
    if upper <= -_TAIL:
        return 0.0
    val, err = integrate.quad(lambda e: (1.0 - m - s * e) * norm.pdf(e), -_TAIL, upper, epsabs=1e-13, epsrel=1e-12)
    if err > 1e-9:
        raise NumericalError(f"hinge risk quadrature error {err:.2e}")
    return val


def _risk_slope(c, a, q):
    """d/dc of the hinge risk along ``beta = c * direction``.

    Margin law is ``N(c a, c^2 q)``; the derivative is
    ``-E[(a + sqrt(q) e) 1{c a + c sqrt(q) e < 1}]``.
    """
    sq = math.sqrt(q)
    upper = min((1.0 - c * a) / (c * sq), _TAIL)
    if upper <= -_TAIL:
        return 0.0
    val, err = integrate.quad(lambda e: (a + sq * e) * norm.pdf(e), -_TAIL, upper, epsabs=1e-14, epsrel=1e-13)
    if err > 1e-9:
        raise NumericalError(f"risk derivative quadrature error {err:.2e}")
    return -val


@functools.lru_cache(maxsize=64)
def _beta_star(case, cov_type, p, s):
    mu = mean_vector(case, p)
    Sigma = make_covariance(cov_type, p, s)
    direction = np.linalg.solve(Sigma, mu)
    a = float(mu @ direction)
    q = float(direction @ Sigma @ direction)
    lo, hi = 1e-6, 1.0
    while _risk_slope(hi, a, q) < 0:
        hi *= 2
        if hi > 1e8:
            raise NumericalError("population hinge risk has no finite minimiser")
    scale = brentq(lambda c: _risk_slope(c, a, q), lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    return scale * direction, scale, a, q


def oracle_beta_star(cfg, truncate_to=None):
    """Population hinge-risk minimiser ``(intercept, slopes)``.

    Equal priors and ``nu = -mu`` put the intercept at 0 and the slopes
    along ``Sigma^{-1} mu``; the scale along that ray is the root of the
    risk derivative, computed by quadrature over the margin law.
    """
    truncate_to = cfg.p if truncate_to is None else truncate_to
    if truncate_to < cfg.s:
        raise InvalidArgumentError("truncate_to must be >= s")
    slopes = _beta_star(cfg.case, cfg.cov_type, cfg.p, cfg.s)[0]
    out = np.zeros(truncate_to + 1)
    k = min(truncate_to, cfg.p)
    out[1 : k + 1] = slopes[:k]
    return out


def population_risk(beta, cfg):
    """Hinge risk of ``beta`` under the scenario (any intercept)."""
    beta = np.asarray(beta, dtype=float)
    mu = mean_vector(cfg.case, cfg.p)
    Sigma = make_covariance(cfg.cov_type, cfg.p, cfg.s)
    w = beta[1:]
    m = float(mu @ w)
    s = math.sqrt(float(w @ Sigma @ w))
    return 0.5 * (hinge_risk(m + beta[0], s) + hinge_risk(m - beta[0], s))


def run_replication(cfg, method, config=None):
    """One replication; returns ``(InferenceResult, seconds)``.

    ``method="offline"`` draws ``cfg.total_n`` samples and runs the full-data
    pipeline; ``"online"`` streams the same draw in ``cfg.B`` batches and
    only runs inference after the last one.
    """
    if method == "offline":
        data = sample_scenario(ScenarioConfig(cfg.case, cfg.cov_type, cfg.p, n=cfg.total_n, s=cfg.s, seed=cfg.seed))
        t0 = time.perf_counter()
        result = run_offline(data, config)
        return result, time.perf_counter() - t0
    if method == "online":
        if cfg.B is None:
            raise InvalidArgumentError("online replications need B and n_b")
        batches = sample_scenario(cfg)
        t0 = time.perf_counter()
        state = init_state(cfg.p)
        for i, batch in enumerate(batches):
            state, out = update_batch(state, batch, config, infer=i == len(batches) - 1)
        return out.result, time.perf_counter() - t0
    raise InvalidArgumentError(f"unknown method {method!r}")


METRICS = (
    "abias_non",
    "abias_zero",
    "abias_all",
    "cov_non",
    "cov_zero",
    "cov_all",
    "len_non",
    "len_zero",
    "len_all",
    "time",
)


@dataclass
class MetricsReport:
    per_rep: dict

    def mean(self, name):
        vals = self.per_rep[name]
        return float(np.mean(vals)) if len(vals) else float("nan")

    def means(self):
        return {k: self.mean(k) for k in METRICS}

    def __getattr__(self, name):
        if name in METRICS:
            return self.mean(name)
        raise AttributeError(name)


def compute_metrics(results, beta_star, s, times=None):
    """Ten replication metrics; the intercept (index 0) is excluded.

    Nonzero coordinates are ``1..s``, zero ones ``s+1..p``.
    """
    beta_star = np.asarray(beta_star, dtype=float)
    per = {k: [] for k in METRICS}
    if times is not None and len(times) != len(results):
        raise DimensionError("one time per result is required")
    groups = None
    for r, res in enumerate(results):
        if res.estimate.shape != beta_star.shape:
            raise DimensionError(f"result has {res.estimate.size} coordinates, beta_star has {beta_star.size}")
        if groups is None:
            p = beta_star.size - 1
            groups = {
                "non": np.arange(1, s + 1),
                "zero": np.arange(s + 1, p + 1),
                "all": np.arange(1, p + 1),
            }
        bias = np.abs(res.estimate - beta_star)
        cover = ((res.ci_lower < beta_star) & (beta_star < res.ci_upper)).astype(float)
        length = res.ci_upper - res.ci_lower
        for g, idx in groups.items():
            per[f"abias_{g}"].append(float(bias[idx].mean()) if idx.size else float("nan"))
            per[f"cov_{g}"].append(float(cover[idx].mean()) if idx.size else float("nan"))
            per[f"len_{g}"].append(float(length[idx].mean()) if idx.size else float("nan"))
        per["time"].append(float(times[r]) if times is not None else float("nan"))
    return MetricsReport({k: np.array(v) for k, v in per.items()})
