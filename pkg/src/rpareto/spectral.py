"""Brown-Resnick spectral process, its risk-tilted version and r-Pareto draws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gauss_field import GaussianFieldSample, VariogramParams, get_sampler, semivariogram
from .geometry import SiteSet
from .risk import RiskSpec, evaluate_on_fine


@dataclass(frozen=True)
class ModelParams:
    """Variogram scale ``c``, exponent ``beta`` and tail index ``alpha``."""

    c: float
    beta: float
    alpha: float

    def __post_init__(self):
        VariogramParams(self.c, self.beta)
        if not (self.alpha > 0 and np.isfinite(self.alpha)):
            raise ValueError(f"tail index must be positive, got {self.alpha}")

    @property
    def variogram(self) -> VariogramParams:
        return VariogramParams(self.c, self.beta)

    def as_tuple(self):
        return (self.c, self.beta, self.alpha)


@dataclass
class SpectralSample:
    w: np.ndarray
    s0_index: int

    @property
    def pinned(self) -> bool:
        return bool(np.all(self.w[..., self.s0_index] == 1.0))


def drift_from_s0(sites: SiteSet, params: ModelParams) -> np.ndarray:
    """``gamma(t - s0)`` for every fine site."""
    return semivariogram(sites.fine_sites - sites.s0, params.variogram)


def spectral_from_gaussian(g, sites: SiteSet, params: ModelParams) -> SpectralSample:
    """``w(t) = exp((g(t) - g(s0) - gamma(t - s0)) / alpha)`` on the fine grid.

    ``g`` may be a :class:`GaussianFieldSample`, a vector or a stack of
    vectors (one draw per row).
    """
    values = g.values if isinstance(g, GaussianFieldSample) else g
    values = np.asarray(values, dtype=float)
    k = sites.s0_index
    expo = (values - values[..., k:k + 1] - drift_from_s0(sites, params)) / params.alpha
    w = np.exp(expo)
    w[..., k] = 1.0
    return SpectralSample(w=w, s0_index=k)


def sample_w(sites: SiteSet, params: ModelParams, rng: np.random.Generator, size=None,
             method: str = "auto") -> np.ndarray:
    """Plain draws of ``W`` on the fine grid."""
    sampler = get_sampler(sites, method)
    k = 1 if size is None else int(size)
    g = sampler.sample(params.variogram, rng, size=k)
    w = spectral_from_gaussian(g, sites, params).w
    return w[0] if size is None else w


def sample_w_r(sites: SiteSet, params: ModelParams, spec: RiskSpec, n_steps: int,
               rng: np.random.Generator, size=None, method: str = "auto") -> SpectralSample:
    """Independence Metropolis-Hastings draws of the tilted process ``W^(r)``.

    Proposals are fresh draws of ``W``; a proposal ``w'`` replaces the
    state ``w`` with probability ``min(1, (r(w') / r(w))^alpha)``. With
    ``size`` given, that many independent chains run side by side and the
    final states are returned as rows.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    k = 1 if size is None else int(size)
    w = sample_w(sites, params, rng, size=k, method=method)
    r = evaluate_on_fine(spec, sites, w)
    r = np.atleast_1d(r)
    # restart chains whose initial risk vanishes
    while np.any(r <= 0):
        bad = np.flatnonzero(r <= 0)
        w[bad] = sample_w(sites, params, rng, size=bad.size, method=method)
        r[bad] = evaluate_on_fine(spec, sites, w[bad])
    log_r = np.log(r)
    for _ in range(n_steps):
        prop = sample_w(sites, params, rng, size=k, method=method)
        with np.errstate(divide="ignore"):
            log_rp = np.log(evaluate_on_fine(spec, sites, prop))
        log_v = np.log(rng.random(k))
        accept = log_v < params.alpha * (log_rp - log_r)
        w[accept] = prop[accept]
        log_r[accept] = log_rp[accept]
    return SpectralSample(w=w[0] if size is None else w, s0_index=sites.s0_index)


def sample_pareto(alpha: float, rng: np.random.Generator | None = None, size=None, u=None):
    """Inverse-CDF draw ``U^(-1/alpha)`` with ``U`` uniform on ``(0, 1]``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if u is None:
        u = 1.0 - rng.random(size)
    out = np.asarray(u, dtype=float) ** (-1.0 / alpha)
    return float(out) if out.ndim == 0 else out


def sample_r_pareto(sites: SiteSet, params: ModelParams, spec: RiskSpec, n_burn: int,
                    rng: np.random.Generator, size=None, method: str = "auto",
                    return_parts: bool = False):
    """Draws of the r-Pareto process ``P * W^(r) / r(W^(r))`` on the fine grid.

    Every row comes from its own tilted chain of length ``n_burn`` and an
    independent Pareto factor ``P``, so ``r(output) = P`` (up to rounding).
    With ``return_parts`` the tuple ``(fields, pareto, w)`` is returned.
    """
    k = 1 if size is None else int(size)
    w = sample_w_r(sites, params, spec, n_burn, rng, size=k, method=method).w
    p = sample_pareto(params.alpha, rng, size=k)
    r = evaluate_on_fine(spec, sites, w)
    fields = (p / r)[:, None] * w
    if size is None:
        fields, p, w = fields[0], float(p[0]), w[0]
    return (fields, p, w) if return_parts else fields
