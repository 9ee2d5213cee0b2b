"""Conditional fine-grid simulation given coarse observations.

For an observation ``(x0, xs)`` the spectral process is known at ``s0``
(value 1) and at the observed coarse sites (``xs / x0``). On the log
scale the remaining fine sites are Gaussian given those values; the
tilted law multiplies that density by ``r(w)^alpha``. The inner chain
(Cond-X) uses the untilted conditional law as an independence proposal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..gauss_field import kriging_operator
from ..geometry import SiteSet
from ..risk import RiskSpec, evaluate_on_fine, fine_weights
from ..spectral import ModelParams, drift_from_s0
from .densities import Observation, ObservationArrays, as_arrays

# cap on normals drawn at once when estimating exceedance probabilities
_CHUNK = 2_000_000


@dataclass
class ExceedanceSet:
    """Observations classified as risk exceedances over ``u``."""

    indices: np.ndarray
    u: float
    risks: np.ndarray

    def __len__(self):
        return self.indices.size


class _Group:
    """Observations sharing one missingness pattern, with the pieces of
    their conditional law that depend on the parameters."""

    def __init__(self, sites: SiteSet, observed_mask, rows, data: ObservationArrays):
        self.rows = rows
        self.cond = sites.coarse_in_fine[observed_mask]
        self.log_ratio = np.log(data.ratios[np.ix_(rows, np.flatnonzero(observed_mask))])
        base = np.zeros((rows.size, sites.n_fine))
        base[:, sites.s0_index] = 1.0
        base[:, self.cond] = data.ratios[np.ix_(rows, np.flatnonzero(observed_mask))]
        self.base = base

    def law(self, sites: SiteSet, params: ModelParams):
        """Kriging operator, conditional means of ``log w`` on the free
        sites (one row per observation) and the scaled factor."""
        op = kriging_operator(sites, self.cond, params.variogram, pin=sites.s0_index)
        drift = drift_from_s0(sites, params)
        a = params.alpha
        # field G(t) - G(s0) at the observed sites
        active = a * self.log_ratio + drift[self.cond]
        order = {int(k): j for j, k in enumerate(self.cond)}
        active = active[:, [order[int(k)] for k in op.active]]
        mean_log = (op.free_mean(active) - drift[op.free]) / a
        factor = math.sqrt(params.c) / a * op.unit_chol
        return op.free, mean_log, factor


def _groups(sites, data):
    return [_Group(sites, mask, rows, data) for mask, rows in data.patterns()]


class CondXSampler:
    """Vectorised Cond-X chains for a fixed data set.

    The last state of every chain is kept so the next call can start from
    it (warm start); ``warm_start=False`` re-initialises from the proposal
    law on every call.
    """

    def __init__(self, observations, spec: RiskSpec, sites: SiteSet, warm_start: bool = True):
        self.data = as_arrays(observations, sites)
        self.spec = spec
        self.sites = sites
        self.warm_start = warm_start
        self.groups = _groups(sites, self.data)
        self.state = None

    def run(self, params: ModelParams, n_steps: int, rng: np.random.Generator) -> np.ndarray:
        """Advance every chain ``n_steps`` and return ``x0 * r(w)`` per observation."""
        sites, spec = self.sites, self.spec
        m = len(self.data)
        if self.state is None or not self.warm_start:
            self.state = np.empty((m, sites.n_fine))
            fresh = True
        else:
            fresh = False
        for g in self.groups:
            w = g.base.copy() if fresh else self.state[g.rows]
            free, mean_log, factor = g.law(sites, params)
            if free.size:
                k = g.rows.size
                if fresh:
                    z = rng.standard_normal((k, free.size))
                    w[:, free] = np.exp(mean_log + z @ factor.T)
                log_r = np.log(evaluate_on_fine(spec, sites, w))
                prop = w.copy()
                for _ in range(n_steps):
                    z = rng.standard_normal((k, free.size))
                    prop[:, free] = np.exp(mean_log + z @ factor.T)
                    with np.errstate(divide="ignore"):
                        log_rp = np.log(evaluate_on_fine(spec, sites, prop))
                    log_v = np.log(rng.random(k))
                    acc = log_v < params.alpha * (log_rp - log_r)
                    w[acc] = prop[acc]
                    log_r[acc] = log_rp[acc]
            self.state[g.rows] = w
        return self.data.x0 * evaluate_on_fine(spec, sites, self.state)


def cond_x(obs, params: ModelParams, spec: RiskSpec, sites: SiteSet, n_condx: int,
           rng: np.random.Generator):
    """Conditional risk value ``x0 * r(w)`` after an ``n_condx``-step chain.

    ``obs`` may be a single :class:`Observation` (returns a float) or a
    sequence of them (returns an array; chains run side by side).
    """
    single = isinstance(obs, Observation)
    sampler = CondXSampler([obs] if single else obs, spec, sites, warm_start=False)
    risks = sampler.run(params, n_condx, rng)
    return float(risks[0]) if single else risks


def classify_exceedances(observations, params: ModelParams, spec: RiskSpec, sites: SiteSet,
                         u: float, n_condx: int, rng: np.random.Generator,
                         sampler: CondXSampler | None = None) -> ExceedanceSet:
    """Indices with conditional risk strictly above ``u``."""
    if sampler is None:
        sampler = CondXSampler(observations, spec, sites, warm_start=False)
    risks = sampler.run(params, n_condx, rng)
    return ExceedanceSet(indices=np.flatnonzero(risks > u), u=float(u), risks=risks)


def exceedance_probability(obs, params: ModelParams, spec: RiskSpec, sites: SiteSet, u: float,
                           n_condgauss: int, rng: np.random.Generator):
    """Fraction of untilted conditional draws with ``x0 * r(w) > u``.

    Vectorised over a sequence of observations. The implemented risks are
    monotone, so ``r(w)`` is bounded below by the risk of the observed part
    alone (latent sites set to zero); observations whose bound already
    exceeds ``u`` get ``d = 1`` exactly, and so do fully observed ones get
    their exact indicator. Neither case consumes randomness.
    """
    if n_condgauss < 1:
        raise ValueError("n_condgauss must be >= 1")
    single = isinstance(obs, Observation)
    data = as_arrays([obs] if single else obs, sites)
    out = np.empty(len(data))
    lin = fine_weights(spec, sites)
    for g in _groups(sites, data):
        x0 = data.x0[g.rows]
        lower = x0 * evaluate_on_fine(spec, sites, g.base)
        free, mean_log, factor = g.law(sites, params)
        if free.size == 0:
            out[g.rows] = (lower > u).astype(float)
            continue
        out[g.rows] = 1.0
        todo = np.flatnonzero(~(lower > u))
        step = max(1, _CHUNK // (n_condgauss * free.size))
        for start in range(0, todo.size, step):
            local = todo[start:start + step]
            k = local.size
            z = rng.standard_normal((k * n_condgauss, free.size))
            y = (z @ factor.T).reshape(k, n_condgauss, free.size)
            y += mean_log[local, None, :]
            w_free = np.exp(y, out=y)
            if lin is not None:
                # linear functionals only need the free sites
                r = (g.base[local] @ lin)[:, None] + (w_free.reshape(-1, free.size) @ lin[free]).reshape(
                    k, n_condgauss)
            else:
                w = np.broadcast_to(g.base[local, None, :], (k, n_condgauss, sites.n_fine)).copy()
                w[:, :, free] = w_free
                r = evaluate_on_fine(spec, sites, w)
            out[g.rows[local]] = np.mean(x0[local, None] * r > u, axis=1)
    return float(out[0]) if single else out
