"""
Observable-risk posterior on a two-site problem
===============================================

With one observed site besides s0 the posterior over (c, beta) can be
evaluated on a grid in closed form (alpha = 2 is held fixed). We compare
a short Metropolis-Hastings run against it.
"""

import math

import numpy as np
from scipy import stats

from rpareto import FINE_MEAN, ModelParams, build_regular_grid, sample_r_pareto
from rpareto.inference import Observation, PriorSpec, ProposalSpec, run_observable_chain

h, alpha = 1.5, 2.0
sites = build_regular_grid((2, 1), spacing=h, coarse_pattern="all", s0_index=0)
truth = ModelParams(0.3, 1.0, alpha)
fields = sample_r_pareto(sites, truth, FINE_MEAN, 50, np.random.default_rng(3), size=10)
obs = [Observation(f[0], [f[1]], i) for i, f in enumerate(fields)]

# closed form: log W(s1) ~ N(-g / alpha, 2 g / alpha^2) with g = c h^beta
y = np.log(fields[:, 1] / fields[:, 0])
log_c = np.linspace(-6, 2, 801)
beta = np.linspace(0.0025, 2, 400)
g = np.exp(log_c)[:, None] * h ** beta[None, :]
log_cr = np.log((2 + 2 * np.exp(-g / alpha + g / alpha ** 2)) / 4)
dens = sum(stats.norm.logpdf(yi, -g / alpha, np.sqrt(2 * g) / alpha) for yi in y)
dens += -len(y) * log_cr + stats.norm.logpdf(log_c, 0, 1.5)[:, None]
p = np.exp(dens - dens.max())
p /= p.sum()
grid_mean = float((p.sum(1) * log_c).sum())

states = run_observable_chain(obs, 1.0, FINE_MEAN, sites, PriorSpec(),
                              ProposalSpec(log_c_step=1.0, log_alpha_step=0.0,
                                           beta_half_width=0.9),
                              6000, np.random.default_rng(4), truth, n_min=250, n_max=5000)
chain = np.array([math.log(s.params.c) for s in states[1000:]])
print(f"posterior mean of log c: grid {grid_mean:.3f}, chain {chain.mean():.3f}")
print(f"acceptance rate {np.mean([s.accepted for s in states[1:]]):.2f}")
