"""Metropolis-Hastings chains over ``(c, beta, alpha)``.

Two samplers share one step structure:

* the observable-risk chain, where the exceedance set is computed once
  from the coarse data;
* the latent-risk chain, which reclassifies the observations with Cond-X
  under the current parameters at every iteration and multiplies each
  exceedance's likelihood by its estimated conditional exceedance
  probability.

Both estimate ``log c_r`` for the current and the proposed parameters on
one shared noise bank, drawn afresh at every iteration.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..cr_norm import (DEFAULT_N_MAX, DEFAULT_N_MIN, DEFAULT_Q, adaptive_estimates,
                       coupled_difference_variance)
from ..gauss_field import NumericalError
from ..geometry import ConfigurationError, SiteSet
from ..risk import RiskSpec
from ..spectral import ModelParams
from .condx import CondXSampler, exceedance_probability
from .densities import (PriorSpec, as_arrays, likelihood_terms, log_prior, observable_risk)

logger = logging.getLogger(__name__)

BOUNDARY_POLICIES = ("reflect", "clamp", "none")
CLAMP_EPS = 1e-6


@dataclass(frozen=True)
class ChainState:
    params: ModelParams
    log_posterior: float
    exceedance_count: int
    accepted: bool


@dataclass(frozen=True)
class ProposalSpec:
    """Random-walk steps on ``log c`` and ``log alpha`` and a uniform
    window of half-width ``beta_half_width`` around ``beta``.

    A step of zero keeps that parameter fixed. ``beta_boundary`` is
    ``reflect`` (symmetric, default), ``clamp`` (pin to the nearest
    margin) or ``none`` (leave out-of-range values to the prior, which
    rejects them).
    """

    log_c_step: float = 0.1
    log_alpha_step: float = 0.1
    beta_half_width: float = 0.1
    beta_boundary: str = "reflect"

    def __post_init__(self):
        if self.log_c_step < 0 or self.log_alpha_step < 0 or self.beta_half_width < 0:
            raise ConfigurationError("proposal steps must be nonnegative")
        if self.beta_half_width >= 1:
            raise ConfigurationError("beta half-width must be < 1")
        if self.beta_boundary not in BOUNDARY_POLICIES:
            raise ConfigurationError(f"unknown beta boundary policy {self.beta_boundary!r}")


def propose(params: ModelParams, proposal: ProposalSpec, rng: np.random.Generator,
            beta_range=(0.0, 2.0)):
    """Draw ``(c, beta, alpha)``; always consumes three variates."""
    z = rng.standard_normal(2)
    v = rng.uniform(-1.0, 1.0)
    c = params.c * math.exp(proposal.log_c_step * z[0])
    alpha = params.alpha * math.exp(proposal.log_alpha_step * z[1])
    beta = params.beta + proposal.beta_half_width * v
    lo, hi = beta_range
    if proposal.beta_boundary == "reflect":
        while not lo < beta <= hi:
            beta = 2 * lo - beta if beta <= lo else 2 * hi - beta
    elif proposal.beta_boundary == "clamp":
        beta = min(max(beta, lo + CLAMP_EPS), hi)
    return c, beta, alpha


def _make_params(c, beta, alpha):
    try:
        return ModelParams(c, beta, alpha)
    except ValueError:
        return None


class _Problem:
    """Shared bookkeeping for the two chain types."""

    def __init__(self, observations, u, spec, sites, prior, proposal, q, n_min, n_max, method):
        self.data = as_arrays(observations, sites)
        self.u, self.spec, self.sites = float(u), spec, sites
        self.prior, self.proposal = prior, proposal
        self.q, self.n_min, self.n_max, self.method = q, n_min, n_max, method
        self.n_numerical_failures = 0
        self.n_zero_d = 0
        self.n_capped = 0
        self.n_banks = 0
        self.coupled_var = []

    def log_posteriors(self, pairs, exceed, rng, d_fn=None):
        """Log posteriors for a list of parameter values with a fixed
        exceedance set; ``log c_r`` estimates share one noise bank."""
        priors = [log_prior(p, self.prior) for p in pairs]
        if exceed.size == 0:
            return priors
        sub = self.data.subset(exceed)
        distinct = list(dict.fromkeys(pairs))
        try:
            bank, ests = adaptive_estimates(distinct, self.spec, self.sites, rng, self.q,
                                            self.n_min, self.n_max, self.method)
        except NumericalError as exc:
            # a proposal whose field cannot be factorised is rejected
            logger.debug("c_r estimation failed: %s", exc)
            self.n_numerical_failures += 1
            if len(distinct) == 1:
                raise
            distinct = distinct[:1]
            bank, ests = adaptive_estimates(distinct, self.spec, self.sites, rng, self.q,
                                         self.n_min, self.n_max, self.method)
        self._record_bank(bank, distinct)
        log_cr = dict(zip(distinct, (e.log_value for e in ests)))
        cache = {}
        out = []
        for p, lp in zip(pairs, priors):
            if p not in log_cr:
                cache[p] = -math.inf
            if p not in cache:
                try:
                    per_obs = likelihood_terms(p, sub, self.u, self.sites) - log_cr[p]
                    if d_fn is not None:
                        d = d_fn(p, sub)
                        with np.errstate(divide="ignore"):
                            per_obs = per_obs + np.log(d)
                        if np.any(d == 0):
                            self.n_zero_d += 1
                    cache[p] = float(np.sum(per_obs))
                except NumericalError as exc:
                    logger.debug("numerical failure at %s: %s", p, exc)
                    self.n_numerical_failures += 1
                    cache[p] = -math.inf
            out.append(lp + cache[p])
        return out

    def _record_bank(self, bank, distinct):
        self.n_banks += 1
        if not bank.satisfied:
            self.n_capped += 1
        if len(distinct) == 2:
            p, q = distinct
            self.coupled_var.append(coupled_difference_variance(
                bank.log_risk[p], p.alpha, bank.log_risk[q], q.alpha))

    def diagnostics(self, states):
        if self.n_capped:
            logger.warning("c_r accuracy target missed in %d of %d noise banks (n_max=%d)",
                           self.n_capped, self.n_banks, self.n_max)
        cv = np.asarray(self.coupled_var)
        return {
            "acceptance_rate": float(np.mean([s.accepted for s in states[1:]])) if len(states) > 1
            else float("nan"),
            "numerical_failures": self.n_numerical_failures,
            "zero_d": self.n_zero_d,
            "cr_banks": self.n_banks,
            "cr_capped": self.n_capped,
            "coupled_log_cr_sd_median": float(np.sqrt(np.median(cv))) if cv.size else float("nan"),
        }

    def step(self, current: ChainState, exceed, rng, d_fn=None, current_lp=None) -> ChainState:
        c, beta, alpha = propose(current.params, self.proposal, rng,
                                 (self.prior.beta_low, self.prior.beta_high))
        prop = _make_params(c, beta, alpha)
        lp_prior = -math.inf if prop is None else log_prior(prop, self.prior)
        if not np.isfinite(lp_prior):
            lp_cur = current.log_posterior if current_lp is None else current_lp
            return ChainState(current.params, lp_cur, int(exceed.size), False)
        lp_cur, lp_prop = self.log_posteriors([current.params, prop], exceed, rng, d_fn)
        log_v = math.log(rng.random())
        if np.isfinite(lp_prop) and (not np.isfinite(lp_cur) or log_v < lp_prop - lp_cur):
            return ChainState(prop, lp_prop, int(exceed.size), True)
        return ChainState(current.params, lp_cur, int(exceed.size), False)


def _finish(prob, states, label, diagnostics):
    diag = prob.diagnostics(states)
    logger.info("%s chain: %d steps, acceptance rate %.3f", label, len(states) - 1,
                diag["acceptance_rate"])
    if diagnostics is not None:
        diagnostics.update(diag)


def run_observable_chain(observations, u: float, spec: RiskSpec, sites: SiteSet,
                         prior: PriorSpec, proposal: ProposalSpec, n_mcmc: int,
                         rng: np.random.Generator, start: ModelParams,
                         q: float = DEFAULT_Q, n_min: int = DEFAULT_N_MIN,
                         n_max: int = DEFAULT_N_MAX, method: str = "auto",
                         diagnostics: dict | None = None):
    """Metropolis-Hastings chain for an observable risk functional.

    The exceedance set ``{i : x0_i r((1, xs_i / x0_i)) > u}`` does not
    depend on the parameters and is computed once. Returns
    ``n_mcmc + 1`` states, the first being ``start``.
    """
    prob = _Problem(observations, u, spec, sites, prior, proposal, q, n_min, n_max, method)
    exceed = np.flatnonzero(observable_risk(prob.data, spec) > prob.u)
    if exceed.size == 0:
        logger.warning("no exceedances over u=%g; the chain samples the prior", u)
    lp0 = prob.log_posteriors([start], exceed, rng)[0]
    states = [ChainState(start, lp0, int(exceed.size), True)]
    for _ in range(int(n_mcmc)):
        states.append(prob.step(states[-1], exceed, rng))
    _finish(prob, states, "observable", diagnostics)
    return states


def mh_step_observable(state: ChainState, observations, u: float, spec: RiskSpec,
                       sites: SiteSet, prior: PriorSpec, proposal: ProposalSpec,
                       rng: np.random.Generator, q: float = DEFAULT_Q,
                       n_min: int = DEFAULT_N_MIN, n_max: int = DEFAULT_N_MAX,
                       method: str = "auto") -> ChainState:
    """One observable-risk Metropolis-Hastings update."""
    prob = _Problem(observations, u, spec, sites, prior, proposal, q, n_min, n_max, method)
    exceed = np.flatnonzero(observable_risk(prob.data, spec) > prob.u)
    return prob.step(state, exceed, rng)


def run_latent_chain(observations, u: float, spec: RiskSpec, sites: SiteSet,
                     prior: PriorSpec, proposal: ProposalSpec, n_mcmc: int,
                     rng: np.random.Generator, start: ModelParams,
                     n_condx: int = 100, n_condgauss: int = 2000,
                     q: float = DEFAULT_Q, n_min: int = DEFAULT_N_MIN,
                     n_max: int = DEFAULT_N_MAX, warm_start: bool = True,
                     method: str = "auto", diagnostics: dict | None = None):
    """Two-step chain for a risk functional that needs the fine grid.

    Every iteration (1) classifies the observations with Cond-X under the
    current parameters, (2) proposes new parameters, (3) evaluates both
    log posteriors on that fixed exceedance set with coupled ``c_r``
    estimates and freshly estimated exceedance probabilities, and (4)
    accepts or rejects. Returns ``n_mcmc + 1`` states.
    """
    prob = _Problem(observations, u, spec, sites, prior, proposal, q, n_min, n_max, method)
    condx = CondXSampler(prob.data, spec, sites, warm_start=warm_start)

    def d_fn(p, sub):
        return exceedance_probability(sub, p, spec, sites, prob.u, n_condgauss, rng)

    def classify(p):
        return np.flatnonzero(condx.run(p, n_condx, rng) > prob.u)

    exceed = classify(start)
    lp0 = prob.log_posteriors([start], exceed, rng, d_fn)[0]
    states = [ChainState(start, lp0, int(exceed.size), True)]
    for _ in range(int(n_mcmc)):
        cur = states[-1]
        exceed = classify(cur.params)
        if exceed.size == 0:
            logger.warning("empty exceedance set; prior-only update")
        states.append(prob.step(cur, exceed, rng, d_fn,
                                current_lp=None if exceed.size else log_prior(cur.params, prior)))
    _finish(prob, states, "latent", diagnostics)
    return states
