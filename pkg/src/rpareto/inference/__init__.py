"""Posterior samplers for r-Pareto models with observable or latent risk."""

from .chains import (ChainState, ProposalSpec, mh_step_observable, propose,
                     run_latent_chain, run_observable_chain)
from .condx import (CondXSampler, ExceedanceSet, classify_exceedances, cond_x,
                    exceedance_probability)
from .densities import (Observation, ObservationArrays, PriorSpec, likelihood_terms,
                        log_intensity_density, log_posterior_latent,
                        log_posterior_observable, log_prior, log_spectral_density,
                        observable_risk)

__all__ = [
    "ChainState", "CondXSampler", "ExceedanceSet", "Observation", "ObservationArrays",
    "PriorSpec", "ProposalSpec", "classify_exceedances", "cond_x", "exceedance_probability",
    "likelihood_terms", "log_intensity_density", "log_posterior_latent",
    "log_posterior_observable", "log_prior", "log_spectral_density", "mh_step_observable",
    "observable_risk", "propose", "run_latent_chain", "run_observable_chain",
]
