"""Densities entering the posteriors: log-Gaussian spectral density, Pareto
intensity, priors, and the per-observation likelihood terms."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from ..cr_norm import CrEstimate
from ..gauss_field import VariogramParams, cholesky_jitter, fbf_covariance_matrix, semivariogram
from ..geometry import SiteSet
from ..risk import RiskSpec, evaluate_prepended
from ..spectral import ModelParams

LOG_2PI = math.log(2.0 * math.pi)

logger = logging.getLogger(__name__)


@dataclass
class Observation:
    """Values at ``s0`` and at the coarse sites; ``NaN`` marks a missing value."""

    x0: float
    xs: np.ndarray
    id: int = 0

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float).reshape(-1)
        if not self.x0 > 0:
            raise ValueError(f"observation {self.id}: value at s0 must be positive")
        present = self.xs[~np.isnan(self.xs)]
        if np.any(present <= 0):
            raise ValueError(f"observation {self.id}: observed values must be positive")

    @property
    def ratio(self) -> np.ndarray:
        return self.xs / self.x0


@dataclass
class ObservationArrays:
    """Column view of a list of observations used by the vectorised code."""

    x0: np.ndarray
    xs: np.ndarray
    ids: np.ndarray
    ratios: np.ndarray = field(init=False)
    observed: np.ndarray = field(init=False)

    def __post_init__(self):
        self.ratios = self.xs / self.x0[:, None]
        self.observed = ~np.isnan(self.xs)

    @classmethod
    def from_observations(cls, observations: Sequence[Observation], n_coarse: int):
        if len(observations) == 0:
            return cls(np.zeros(0), np.zeros((0, n_coarse)), np.zeros(0, dtype=int))
        xs = np.stack([o.xs for o in observations])
        if xs.shape[1] != n_coarse:
            raise ValueError(f"observations carry {xs.shape[1]} coarse values, sites have {n_coarse}")
        return cls(np.array([o.x0 for o in observations], dtype=float), xs,
                   np.array([o.id for o in observations]))

    def __len__(self):
        return self.x0.shape[0]

    @property
    def has_missing(self) -> bool:
        return not bool(np.all(self.observed))

    def patterns(self):
        """Map each distinct missingness pattern to the rows that share it."""
        groups = {}
        for i, row in enumerate(self.observed):
            groups.setdefault(row.tobytes(), (row, []))[1].append(i)
        return [(row, np.array(idx, dtype=np.intp)) for row, idx in groups.values()]

    def subset(self, index):
        return ObservationArrays(self.x0[index], self.xs[index], self.ids[index])


def as_arrays(observations, sites: SiteSet) -> ObservationArrays:
    if isinstance(observations, ObservationArrays):
        return observations
    return ObservationArrays.from_observations(list(observations), sites.n_coarse)


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PriorSpec:
    """Normal priors on ``log c`` and ``log alpha``, uniform prior on ``beta``.

    The posterior is a density in ``(log c, beta, log alpha)``; with the
    random-walk proposals acting on the same coordinates no Jacobian terms
    appear in the acceptance ratio.
    """

    log_c_mean: float = 0.0
    log_c_sd: float = 1.5
    log_alpha_mean: float = 0.0
    log_alpha_sd: float = 1.5
    beta_low: float = 0.0
    beta_high: float = 2.0

    def __post_init__(self):
        if not (self.log_c_sd > 0 and self.log_alpha_sd > 0):
            raise ValueError("prior standard deviations must be positive")

    def log_density(self, c, beta, alpha) -> float:
        if not (self.beta_low < beta <= self.beta_high) or c <= 0 or alpha <= 0:
            return -math.inf
        zc = (math.log(c) - self.log_c_mean) / self.log_c_sd
        za = (math.log(alpha) - self.log_alpha_mean) / self.log_alpha_sd
        return (-0.5 * (zc * zc + za * za) - math.log(self.log_c_sd * self.log_alpha_sd) - LOG_2PI
                - math.log(self.beta_high - self.beta_low))

    def sample(self, rng: np.random.Generator) -> ModelParams:
        log_c = rng.normal(self.log_c_mean, self.log_c_sd)
        beta = rng.uniform(self.beta_low, self.beta_high)
        log_a = rng.normal(self.log_alpha_mean, self.log_alpha_sd)
        beta = beta if beta > 0 else self.beta_high
        return ModelParams(math.exp(log_c), beta, math.exp(log_a))


def log_prior(params: ModelParams, prior: PriorSpec) -> float:
    return prior.log_density(params.c, params.beta, params.alpha)


# ---------------------------------------------------------------------------
# spectral and intensity densities
# ---------------------------------------------------------------------------

@lru_cache(maxsize=1024)
def _unit_spectral_factor(sites: SiteSet, beta: float, mask: bytes):
    observed = np.frombuffer(mask, dtype=bool)
    pts = sites.coarse_sites[observed] - sites.s0
    cov = fbf_covariance_matrix(pts, VariogramParams(1.0, beta))
    L = cholesky_jitter(cov, "spectral")
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return L, logdet


def log_spectral_density(xs_ratio, params: ModelParams, sites: SiteSet):
    """Log density of ``W(s_1..s_n)`` at ``xs_ratio``.

    ``log W(s_i)`` is Gaussian with mean ``-gamma(s_i - s0) / alpha`` and
    covariance ``(gamma(s_i - s0) + gamma(s_j - s0) - gamma(s_i - s_j)) / alpha^2``;
    the result includes the Jacobian ``-sum(log x_i)``. Missing entries
    (``NaN``) are marginalised out. A stack of ratio vectors returns one
    value per row.
    """
    x = np.asarray(xs_ratio, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != sites.n_coarse:
        raise ValueError(f"expected {sites.n_coarse} ratios, got {x.shape[1]}")
    observed = ~np.isnan(x)
    if np.any(x[observed] <= 0):
        raise ValueError("spectral density needs positive ratios")
    out = np.zeros(x.shape[0])
    drift = semivariogram(sites.coarse_sites - sites.s0, params.variogram)
    groups = {}
    for i, row in enumerate(observed):
        groups.setdefault(row.tobytes(), []).append(i)
    for mask, rows in groups.items():
        obs = np.frombuffer(mask, dtype=bool)
        k = int(obs.sum())
        if k == 0:
            continue
        L, logdet_unit = _unit_spectral_factor(sites, float(params.beta), mask)
        scale = math.sqrt(params.c) / params.alpha
        y = np.log(x[np.ix_(rows, np.flatnonzero(obs))])
        resid = (y + drift[obs] / params.alpha).T
        z = solve_triangular(L, resid, lower=True) / scale
        quad = np.sum(z * z, axis=0)
        logdet = logdet_unit + 2.0 * k * math.log(scale)
        out[rows] = -0.5 * (quad + logdet + k * LOG_2PI) - y.sum(axis=1)
    return float(out[0]) if single else out


def log_intensity_density(x0_over_u, r_of_ratio, alpha):
    """Log density of ``P / r(w)`` at ``x`` given ``r(w)``:

    ``alpha * r^(-alpha) * x^(-alpha-1)`` on ``x r > 1``, ``-inf`` elsewhere.
    """
    x = np.asarray(x0_over_u, dtype=float)
    r = np.asarray(r_of_ratio, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.log(alpha) - alpha * np.log(r) - (alpha + 1.0) * np.log(x)
    val = np.where(x * r > 1.0, val, -np.inf)
    return float(val) if val.ndim == 0 else val


def observable_risk(data: ObservationArrays, spec: RiskSpec) -> np.ndarray:
    """``x0 * r((1, xs / x0))`` for every observation."""
    if data.has_missing:
        raise ValueError("the observable-risk method needs complete coarse observations")
    if len(data) == 0:
        return np.zeros(0)
    return data.x0 * evaluate_prepended(spec, data.ratios)


def likelihood_terms(params: ModelParams, data: ObservationArrays, u: float,
                     sites: SiteSet) -> np.ndarray:
    """Per-observation ``log alpha - (alpha+1) log(x0/u) + log f_W(s)(xs/x0)``.

    The ``r(w)^(-alpha)`` of the intensity and the ``r(w)^alpha`` of the
    tilted spectral density cancel, so the risk does not appear; the
    normalizing constant is added by the caller.
    """
    if len(data) == 0:
        return np.zeros(0)
    a = params.alpha
    intensity = math.log(a) - (a + 1.0) * np.log(data.x0 / u)
    return intensity + log_spectral_density(data.ratios, params, sites)


def _combine(prior_term, terms, log_cr, extra=None):
    if terms.size == 0:
        return prior_term
    per_obs = terms - log_cr
    if extra is not None:
        per_obs = per_obs + extra
    return prior_term + float(np.sum(per_obs))


def log_posterior_observable(params: ModelParams, observations, u: float, spec: RiskSpec,
                             sites: SiteSet, prior: PriorSpec, cr: CrEstimate) -> float:
    """Unnormalised log posterior when the risk is a function of the coarse data.

    Only observations with ``x0 * r((1, xs/x0)) > u`` contribute.
    """
    lp = log_prior(params, prior)
    if not np.isfinite(lp):
        return -math.inf
    data = as_arrays(observations, sites)
    exceed = observable_risk(data, spec) > u
    sub = data.subset(np.flatnonzero(exceed))
    if len(sub) == 0:
        logger.warning("no exceedances over u=%g; the posterior is the prior", u)
    return _combine(lp, likelihood_terms(params, sub, u, sites), cr.log_value if cr else 0.0)


def log_posterior_latent(params: ModelParams, exceedances, u: float, spec: RiskSpec,
                         sites: SiteSet, prior: PriorSpec, cr: CrEstimate, d) -> float:
    """Unnormalised log posterior for a fixed set of exceedances.

    ``exceedances`` are the observations in ``I(u)``; ``d`` holds the
    estimated conditional exceedance probabilities, one per observation.
    Any ``d_i = 0`` gives ``-inf``.
    """
    lp = log_prior(params, prior)
    if not np.isfinite(lp):
        return -math.inf
    data = as_arrays(exceedances, sites)
    d = np.asarray(d, dtype=float).reshape(-1)
    if d.shape[0] != len(data):
        raise ValueError("one exceedance probability per exceedance is required")
    with np.errstate(divide="ignore"):
        log_d = np.log(d)
    return _combine(lp, likelihood_terms(params, data, u, sites), cr.log_value if cr else 0.0, log_d)
