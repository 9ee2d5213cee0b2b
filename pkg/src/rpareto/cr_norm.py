"""Monte-Carlo estimation of ``c_r(theta, alpha) = E[r(W)^alpha]``.

A :class:`NoiseBank` holds the raw standard normals consumed by the field
sampler. Evaluating several parameter values on the same bank gives
positively correlated estimates (common random numbers), which is what
keeps the difference of two log-constants in an acceptance ratio small.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .gauss_field import NumericalError, get_sampler
from .geometry import SiteSet
from .risk import RiskSpec, evaluate_on_fine
from .spectral import ModelParams, drift_from_s0

logger = logging.getLogger(__name__)

DEFAULT_Q = 0.01
DEFAULT_N_MIN = 500
DEFAULT_N_MAX = 50_000
# r(W)^alpha is heavy tailed, so the plug-in variance from the bank itself
# tends to be low; the accuracy target is checked against this multiple of it
DEFAULT_MARGIN = 2.0


@dataclass
class CrEstimate:
    """Estimate of ``log c_r`` with the plug-in variance of the estimator.

    ``variance_heuristic`` is ``Var(r(W)^alpha) / (N * c^2)`` with sample
    plug-ins, i.e. the square of the left-hand side of the sample-size
    criterion.
    """

    log_value: float
    n_used: int
    variance_heuristic: float

    @property
    def sd(self) -> float:
        return float(np.sqrt(self.variance_heuristic))


@dataclass
class NoiseBank:
    noise: np.ndarray
    method: str = "auto"
    satisfied: bool = True
    # per-row log r(w) for every parameter value evaluated on the bank
    log_risk: dict = field(default_factory=dict, repr=False)

    @property
    def rows(self) -> int:
        return self.noise.shape[0]


def new_bank(sites: SiteSet, rows: int, rng: np.random.Generator, method: str = "auto") -> NoiseBank:
    dim = get_sampler(sites, method).noise_dim
    return NoiseBank(rng.standard_normal((int(rows), dim)), method=method)


def log_risk_rows(params: ModelParams, spec: RiskSpec, sites: SiteSet, noise,
                  method: str = "auto") -> np.ndarray:
    """``log r(w_i)`` for the ``W`` draw built from every noise row."""
    # same arithmetic as spectral_from_gaussian, done in place on the fresh field
    w = get_sampler(sites, method).transform(noise, params.variogram)
    k = sites.s0_index
    w -= w[:, k:k + 1]
    w -= drift_from_s0(sites, params)
    w /= params.alpha
    np.exp(w, out=w)
    w[:, k] = 1.0
    with np.errstate(divide="ignore"):
        return np.log(evaluate_on_fine(spec, sites, w))


def _log_mean_exp(a: np.ndarray) -> float:
    # scipy's logsumexp carries noticeable per-call overhead on small arrays
    m = np.max(a)
    return float(m + np.log(np.mean(np.exp(a - m))))


def estimate_from_log_risk(log_r: np.ndarray, alpha: float) -> CrEstimate:
    n = log_r.shape[0]
    a = alpha * log_r
    if n == 0 or not np.any(np.isfinite(a)):
        raise NumericalError("every risk evaluation vanished; log c_r undefined")
    log_c = _log_mean_exp(a)
    if n > 1:
        rel = np.exp(a - log_c)
        var = float(np.var(rel, ddof=1)) / n
    else:
        var = float("inf")
    return CrEstimate(log_value=log_c, n_used=n, variance_heuristic=var)


def estimate_log_cr(params: ModelParams, spec: RiskSpec, sites: SiteSet,
                    noise: NoiseBank) -> CrEstimate:
    """``log((1/N) sum_i r(w_i)^alpha)`` over the rows of ``noise``."""
    if noise.rows < 1:
        raise ValueError("noise bank is empty")
    return estimate_from_log_risk(log_risk_rows(params, spec, sites, noise.noise, noise.method),
                                  params.alpha)


def coupled_log_cr(old: ModelParams, prop: ModelParams, spec: RiskSpec, sites: SiteSet,
                   noise: NoiseBank):
    """Estimates for two parameter values driven by the same noise rows."""
    est_old = estimate_log_cr(old, spec, sites, noise)
    if prop == old:
        return est_old, CrEstimate(est_old.log_value, est_old.n_used, est_old.variance_heuristic)
    return est_old, estimate_log_cr(prop, spec, sites, noise)


class _AdaptiveBank:
    """Noise bank that grows by doubling and keeps per-parameter log risks.

    Rows are kept as a list of chunks so growing never copies old rows.
    """

    def __init__(self, sites, spec, rng, method):
        self.sites, self.spec, self.rng, self.method = sites, spec, rng, method
        self.dim = get_sampler(sites, method).noise_dim
        self.chunks = []
        self.rows = 0
        self.log_r = {}

    def grow_to(self, rows):
        extra = rows - self.rows
        if extra <= 0:
            return
        fresh = self.rng.standard_normal((extra, self.dim))
        for params, parts in self.log_r.items():
            parts.append(log_risk_rows(params, self.spec, self.sites, fresh, self.method))
        self.chunks.append(fresh)
        self.rows = rows

    def log_risk(self, params):
        parts = self.log_r.get(params)
        if parts is None:
            parts = [log_risk_rows(params, self.spec, self.sites, c, self.method)
                     for c in self.chunks]
            self.log_r[params] = parts
        if len(parts) > 1:
            parts[:] = [np.concatenate(parts)]
        return parts[0] if parts else np.empty(0)

    def estimate(self, params):
        return estimate_from_log_risk(self.log_risk(params), params.alpha)

    @property
    def noise(self):
        return np.concatenate(self.chunks) if self.chunks else np.empty((0, self.dim))


def adaptive_estimates(params_list, spec: RiskSpec, sites: SiteSet, rng: np.random.Generator,
                       q: float = DEFAULT_Q, n_min: int = DEFAULT_N_MIN, n_max: int = DEFAULT_N_MAX,
                       method: str = "auto", margin: float = DEFAULT_MARGIN):
    """Grow one shared bank until every estimate meets the accuracy target.

    Returns ``(bank, estimates)`` with one :class:`CrEstimate` per entry of
    ``params_list``. Rows start at ``n_min`` and double (capped at
    ``n_max``) while ``sqrt(margin * Var(r(W)^alpha) / N) / c >= q`` for any
    entry, with plug-in moments.
    """
    if not q > 0 or n_min < 1 or n_min > n_max or margin < 1:
        raise ValueError("need q > 0, 1 <= n_min <= n_max and margin >= 1")
    bank = _AdaptiveBank(sites, spec, rng, method)
    rows = int(n_min)
    while True:
        bank.grow_to(rows)
        ests = [bank.estimate(p) for p in params_list]
        ok = all(np.sqrt(margin * e.variance_heuristic) < q for e in ests)
        if ok or rows >= n_max:
            break
        rows = min(2 * rows, int(n_max))
    if not ok:
        logger.debug("c_r sample size capped at %d rows; accuracy %.3g not reached "
                     "(achieved %.3g)", rows, q, max(e.sd for e in ests))
    log_risk = {p: bank.log_risk(p) for p in bank.log_r}
    return NoiseBank(bank.noise, method=method, satisfied=ok, log_risk=log_risk), ests


def dynamic_n(params, spec: RiskSpec, sites: SiteSet, q: float = DEFAULT_Q,
              n_min: int = DEFAULT_N_MIN, n_max: int = DEFAULT_N_MAX,
              rng: np.random.Generator | None = None, method: str = "auto",
              margin: float = DEFAULT_MARGIN) -> NoiseBank:
    """Noise bank whose size satisfies the plug-in accuracy criterion.

    ``params`` may be a single :class:`ModelParams` or a sequence of them
    (the bank then has to be accurate enough for all). The returned bank
    has ``satisfied=False`` when ``n_max`` rows were not enough.
    """
    plist = [params] if isinstance(params, ModelParams) else list(params)
    bank, ests = adaptive_estimates(plist, spec, sites, rng, q, n_min, n_max, method, margin)
    if not bank.satisfied:
        logger.warning("c_r sample size capped at %d rows; accuracy %.3g not reached "
                       "(achieved %.3g)", bank.rows, q, max(e.sd for e in ests))
    return bank


def coupled_difference_variance(log_r_old, alpha_old, log_r_new, alpha_new) -> float:
    """Plug-in variance of ``log c_old - log c_new`` from coupled rows (delta method)."""
    a = alpha_old * np.asarray(log_r_old)
    b = alpha_new * np.asarray(log_r_new)
    n = a.shape[0]
    if n < 2:
        return float("inf")
    rel = np.exp(a - _log_mean_exp(a)) - np.exp(b - _log_mean_exp(b))
    return float(np.var(rel, ddof=1)) / n
