"""Acceptance suite: one test (or a small group) per acceptance criterion.

Each block is wrapped in ``criterion(...)`` so the terminal summary shows
one PASS/FAIL line per criterion. Oracles are built here from closed forms
or from numpy draws that do not go through the package's samplers.
"""

import json
import math
import os
import time

import numpy as np
import pytest
from scipy import integrate, stats

from conftest import criterion
from rpareto import cli, harness
from rpareto.cr_norm import dynamic_n, estimate_log_cr, new_bank
from rpareto.gauss_field import (VariogramParams, build_conditional, fbf_covariance,
                                 get_sampler, sample_conditional)
from rpareto.geometry import build_regular_grid
from rpareto.inference import (Observation, PriorSpec, ProposalSpec, cond_x,
                               log_intensity_density, log_spectral_density, run_latent_chain,
                               run_observable_chain)
from rpareto.risk import FINE_MEAN, RiskSpec, evaluate_on_fine
from rpareto.spectral import ModelParams, sample_r_pareto, sample_w, sample_w_r

PAPER = ModelParams(3.0, 0.5, 2.0)


def lognormal_w_law(sites, params):
    """Mean and covariance of ``log W`` on the non-``s0`` sites, by hand."""
    others = [i for i in range(sites.n_fine) if i != sites.s0_index]
    rel = sites.fine_sites[others] - sites.s0
    gam = lambda h: params.c * np.linalg.norm(h, axis=-1) ** params.beta
    g0 = gam(rel)
    cov = g0[:, None] + g0[None, :] - gam(rel[:, None, :] - rel[None, :, :])
    return others, -g0 / params.alpha, cov / params.alpha ** 2


def integrated_autocorrelation_time(x):
    """Sokal's windowed estimate (window at five times the running estimate)."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 1.0
    for k in range(1, n):
        tau += 2.0 * acf[k]
        if k >= 5.0 * tau:
            break
    return tau


# ---------------------------------------------------------------------------
# 1. covariance fidelity
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("method", ["circulant", "cholesky"])
def test_c01_covariance_fidelity(method):
    with criterion(1, "covariance fidelity of fBf draws (circulant and dense)"):
        t0 = time.perf_counter()
        sites = build_regular_grid((4, 4), coarse_pattern=2)
        params = PAPER.variogram
        sampler = get_sampler(sites, method)
        assert sampler.method == method
        g = sampler.sample(params, np.random.default_rng(101), size=20_000)
        pts = sites.fine_sites
        target = fbf_covariance(pts[:, None, :], pts[None, :, :], params)
        # the field is pinned at zero: empirical second moments are the covariance
        prod = g[:, :, None] * g[:, None, :]
        emp = prod.mean(axis=0)
        se = prod.std(axis=0, ddof=1) / math.sqrt(g.shape[0])
        z = np.abs(emp - target) / np.where(se > 0, se, 1.0)
        assert np.all(emp[se == 0] == target[se == 0])
        assert z.max() < 4, f"max z {z.max():.2f}"
        assert time.perf_counter() - t0 < 60


# ---------------------------------------------------------------------------
# 2. spectral normalisation
# ---------------------------------------------------------------------------

def test_c02_spectral_normalisation():
    with criterion(2, "E[W(s)^alpha] = 1 at every site, exact at s0"):
        sites = harness.ExperimentConfig().sites()
        n = 10_000
        w = sample_w(sites, PAPER, np.random.default_rng(202), size=n)
        wa = w ** PAPER.alpha
        k = sites.s0_index
        assert np.all(wa[:, k] == 1.0)
        # W(s)^alpha is lognormal with log-variance 2 gamma(s - s0); its
        # standard error is known exactly
        gam = PAPER.c * np.linalg.norm(sites.fine_sites - sites.s0, axis=1) ** PAPER.beta
        se = np.sqrt(np.expm1(2 * gam) / n)
        others = np.arange(sites.n_fine) != k
        z = np.abs(wa.mean(axis=0) - 1.0)[others] / se[others]
        assert z.max() < 4, f"max z {z.max():.2f}"


# ---------------------------------------------------------------------------
# 3. conditioning exactness
# ---------------------------------------------------------------------------

def test_c03_conditioning_exactness():
    with criterion(3, "conditioning reproduces data and matches the two-site closed form"):
        params = PAPER.variogram
        grid = build_regular_grid((5, 5), coarse_pattern=3)
        idx = grid.coarse_in_fine
        vals = np.random.default_rng(303).normal(size=idx.size)
        vals[idx == 0] = 0.0
        cond = build_conditional(grid, idx, vals, params)
        draws = sample_conditional(cond, np.random.default_rng(304), size=2000).values
        assert np.max(np.abs(draws[:, idx] - vals)) < 1e-10

        # two sites (1, 0) and (2.5, 0); field pinned at the coordinate origin
        two = build_regular_grid((2, 1), spacing=1.5, origin=(1.0, 0.0), coarse_pattern="all",
                                 s0_index=0)
        c, b, x = params.c, params.beta, 0.7
        c11 = 2 * c * 1.0 ** b
        c22 = 2 * c * 2.5 ** b
        c12 = c * (1.0 ** b + 2.5 ** b - 1.5 ** b)
        cond = build_conditional(two, [0], [x], params)
        assert abs(cond.mean[1] - c12 / c11 * x) < 1e-10
        assert abs(cond.covariance[1, 1] - (c22 - c12 ** 2 / c11)) < 1e-10
        assert cond.mean[0] == x and cond.covariance[0, 0] == 0.0


# ---------------------------------------------------------------------------
# 4. density normalisation
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("params", [PAPER, ModelParams(0.4, 1.3, 0.8)])
def test_c04_density_normalisation(params):
    with criterion(4, "spectral and intensity densities integrate to one"):
        two = build_regular_grid((2, 1), spacing=1.7, coarse_pattern="all", s0_index=0)
        f = lambda y: math.exp(log_spectral_density(np.array([math.exp(y)]), params, two) + y)
        mass = integrate.quad(f, -60, 60, epsabs=1e-13, epsrel=1e-12, limit=500)[0]
        assert abs(mass - 1.0) < 1e-6
        for r in (0.6, 1.0, 2.5):
            g = lambda x: math.exp(log_intensity_density(x, r, params.alpha))
            mass = integrate.quad(g, 1 / r, np.inf, epsabs=1e-13, epsrel=1e-12, limit=500)[0]
            assert abs(mass - 1.0) < 1e-6


# ---------------------------------------------------------------------------
# 5. tilted law versus importance weighting
# ---------------------------------------------------------------------------

def test_c05_tilt_matches_importance_oracle():
    with criterion(5, "tilted-process draws match the importance-weighting oracle"):
        t0 = time.perf_counter()
        sites = build_regular_grid((2, 2), coarse_pattern="all", s0_index=0)
        far = int(np.argmax(np.linalg.norm(sites.fine_sites - sites.s0, axis=1)))
        near = 1 if far != 1 else 2
        functionals = {
            "log W(far corner)": lambda w: np.log(w[:, far]),
            "1{W(neighbour) > 0.3}": lambda w: (w[:, near] > 0.3).astype(float),
        }
        draws = sample_w_r(sites, PAPER, FINE_MEAN, 1000, np.random.default_rng(505),
                           size=20_000).w

        # oracle: plain W from numpy's multivariate normal, weighted by r(W)^alpha
        others, mean, cov = lognormal_w_law(sites, PAPER)
        rng = np.random.default_rng(506)
        n = 1_000_000
        w = np.ones((n, sites.n_fine))
        w[:, others] = np.exp(rng.multivariate_normal(mean, cov, size=n))
        weight = w.mean(axis=1) ** PAPER.alpha
        weight /= weight.sum()
        for name, h in functionals.items():
            hv = h(w)
            oracle = float(weight @ hv)
            se_oracle = math.sqrt(float(weight ** 2 @ (hv - oracle) ** 2))
            hd = h(draws)
            se_mh = hd.std(ddof=1) / math.sqrt(hd.size)
            z = abs(hd.mean() - oracle) / math.hypot(se_mh, se_oracle)
            assert z < 4, f"{name}: z {z:.2f}"
        assert time.perf_counter() - t0 < 120


# ---------------------------------------------------------------------------
# 6. posterior histogram versus grid evaluation
# ---------------------------------------------------------------------------

def test_c06_posterior_matches_grid_oracle():
    with criterion(6, "observable chain (c, beta) histogram matches the grid posterior"):
        t0 = time.perf_counter()
        h, alpha, u, m = 1.5, 2.0, 1.0, 10
        sites = build_regular_grid((2, 1), spacing=h, coarse_pattern="all", s0_index=0)
        truth = ModelParams(0.3, 1.0, alpha)
        fields = sample_r_pareto(sites, truth, FINE_MEAN, 50, np.random.default_rng(601), size=m)
        obs = [Observation(f[0], [f[1]], i) for i, f in enumerate(fields)]
        y = np.log(fields[:, 1] / fields[:, 0])
        prior = PriorSpec()

        def log_post(log_c, beta):
            # density in (log c, beta); alpha is fixed so the intensity term is constant
            g = np.exp(log_c) * h ** beta
            log_cr = np.log((2 + 2 * np.exp(-g / alpha + g / alpha ** 2)) / 4)
            sd = np.sqrt(2 * g) / alpha
            ll = sum(stats.norm.logpdf(yi, -g / alpha, sd) for yi in y)
            return ll - m * log_cr + stats.norm.logpdf(log_c, prior.log_c_mean, prior.log_c_sd)

        lc = np.linspace(-9.0, 4.0, 4001)
        lc = 0.5 * (lc[1:] + lc[:-1])
        bb = np.linspace(0.0, 2.0, 1001)
        bb = 0.5 * (bb[1:] + bb[:-1])
        dens = log_post(lc[:, None], bb[None, :])
        p = np.exp(dens - dens.max())
        p /= p.sum()
        # 20 x 20 cells with edges at the posterior's marginal ventiles
        cdf_c, cdf_b = np.cumsum(p.sum(1)), np.cumsum(p.sum(0))
        edges_c = np.r_[-np.inf, lc[np.searchsorted(cdf_c, np.arange(1, 20) / 20)], np.inf]
        edges_b = np.r_[0.0, bb[np.searchsorted(cdf_b, np.arange(1, 20) / 20)], 2.0]
        cell = np.zeros((20, 20))
        ic = np.searchsorted(edges_c, lc) - 1
        ib = np.searchsorted(edges_b, bb) - 1
        np.add.at(cell, (ic[:, None], ib[None, :]), p)

        burn, n = 2000, 50_000
        states = run_observable_chain(obs, u, FINE_MEAN, sites, prior,
                                      ProposalSpec(1.0, 0.0, 0.9), burn + n,
                                      np.random.default_rng(602), truth, n_min=250,
                                      n_max=5000)
        x = np.array([[math.log(s.params.c), s.params.beta] for s in states[burn + 1:]])
        assert np.all(x[:, 1] > 0) and np.all([s.params.alpha == alpha for s in states])
        tau = max(integrated_autocorrelation_time(x[:, 0]),
                  integrated_autocorrelation_time(x[:, 1]))
        counts = np.zeros((20, 20))
        np.add.at(counts, (np.searchsorted(edges_c, x[:, 0]) - 1,
                           np.searchsorted(edges_b, x[:, 1], side="left") - 1), 1)
        band = 3 * np.sqrt(n * cell * (1 - cell) * tau)
        worst = np.max(np.abs(counts - n * cell) / band)
        print(f"criterion 6: tau={tau:.2f}, worst |count - expected| / band = {worst:.3f}")
        assert worst < 1, f"worst cell at {worst:.2f} bands"
        assert time.perf_counter() - t0 < 300


# ---------------------------------------------------------------------------
# 7. reduction identity
# ---------------------------------------------------------------------------

def test_c07_reduction_identity():
    with criterion(7, "latent and observable chains coincide when every site is observed"):
        sites = build_regular_grid((3, 3), coarse_pattern="all")
        fields = sample_r_pareto(sites, PAPER, FINE_MEAN, 30, np.random.default_rng(701), size=25)
        obs = [Observation(f[sites.s0_index], f[sites.coarse_in_fine], i)
               for i, f in enumerate(fields)]
        start = ModelParams(2.0, 0.8, 1.5)
        kw = dict(u=1.0, spec=FINE_MEAN, sites=sites, prior=PriorSpec(),
                  proposal=ProposalSpec(), n_mcmc=200, start=start, n_max=2000)
        latent = run_latent_chain(obs, rng=np.random.default_rng(702), n_condx=5,
                                  n_condgauss=50, **kw)
        observable = run_observable_chain(obs, rng=np.random.default_rng(702), **kw)
        assert latent == observable
        assert 0 < sum(s.accepted for s in latent[1:]) < 200

        # the same through the command line harness
        cfg = harness.ExperimentConfig.from_dict({
            "geometry": {"side_counts": [3, 3], "coarse": "all"},
            "data": {"m": 15, "seed": 7},
            "inference": {"n_mcmc": 60, "burn_in": 10, "n_init": 20, "n_condx": 5,
                          "n_condgauss": 50, "n_max": 2000}})
        fits = {m: harness.fit(cfg.with_overrides(method=m)) for m in harness.METHODS}
        assert fits["conditional"].states == fits["approx"].states


# ---------------------------------------------------------------------------
# 8. c_r estimator
# ---------------------------------------------------------------------------

def test_c08_cr_estimator():
    with criterion(8, "c_r estimator: exact point risk, 10^6-draw oracle, sample-size rule"):
        grid = build_regular_grid((5, 5), coarse_pattern=3)
        point = RiskSpec.point(grid.s0_index, grid.n_fine)
        for params in (PAPER, ModelParams(0.5, 1.5, 0.7)):
            est = estimate_log_cr(params, point, grid, new_bank(grid, 100, np.random.default_rng(0)))
            assert est.log_value == 0.0

        two = build_regular_grid((2, 1), spacing=1.3, coarse_pattern="all", s0_index=0)
        params = ModelParams(1.5, 0.7, 1.6)
        est = estimate_log_cr(params, FINE_MEAN, two,
                              new_bank(two, 200_000, np.random.default_rng(801)))
        # oracle from plain lognormal draws of W(s1)
        g = params.c * 1.3 ** params.beta
        w = np.exp(np.random.default_rng(802).normal(-g / params.alpha,
                                                     math.sqrt(2 * g) / params.alpha, 1_000_000))
        ra = ((1 + w) / 2) ** params.alpha
        oracle = math.log(ra.mean())
        se_oracle = ra.std(ddof=1) / math.sqrt(ra.size) / ra.mean()
        z = abs(est.log_value - oracle) / math.hypot(est.sd, se_oracle)
        assert z < 3, f"z {z:.2f}"

        # sample-size rule revalidated on a tenfold fresh sample
        params, q = ModelParams(1.0, 1.0, 1.0), 0.01
        grid = build_regular_grid((3, 3), coarse_pattern=3)
        bank = dynamic_n(params, FINE_MEAN, grid, q=q, rng=np.random.default_rng(803))
        assert bank.satisfied
        n = bank.rows
        fresh = sample_w(grid, params, np.random.default_rng(804), size=10 * n)
        ra = evaluate_on_fine(FINE_MEAN, grid, fresh) ** params.alpha
        assert math.sqrt(np.var(ra, ddof=1) / n) / ra.mean() < q


# ---------------------------------------------------------------------------
# 9. Cond-X law
# ---------------------------------------------------------------------------

def test_c09_condx_law():
    with criterion(9, "Cond-X output law matches the reweighted conditional oracle"):
        t0 = time.perf_counter()
        # s0, one latent site and one observed site on a line
        sites = build_regular_grid((3, 1), coarse_pattern=[(0, 0), (2, 0)], s0_index=(0, 0))
        o = Observation(1.2, [0.3])
        n = 10_000
        out = cond_x([o] * n, PAPER, FINE_MEAN, sites, 100, np.random.default_rng(901))

        # oracle: log W(latent) given log W(observed) from the bivariate normal
        others, mean, cov = lognormal_w_law(sites, PAPER)
        lat, obs_pos = others.index(1), others.index(2)
        y = math.log(o.xs[0] / o.x0)
        cm = mean[lat] + cov[lat, obs_pos] / cov[obs_pos, obs_pos] * (y - mean[obs_pos])
        cv = cov[lat, lat] - cov[lat, obs_pos] ** 2 / cov[obs_pos, obs_pos]
        w1 = np.exp(np.random.default_rng(902).normal(cm, math.sqrt(cv), 100_000))
        risk = o.x0 * (1 + w1 + o.xs[0] / o.x0) / 3
        weight = (risk / o.x0) ** PAPER.alpha
        order = np.argsort(risk)
        risk, cdf = risk[order], np.cumsum(weight[order]) / weight.sum()

        out = np.sort(out)
        ecdf_hi = np.arange(1, n + 1) / n
        at_out = np.interp(out, risk, cdf, left=0.0, right=1.0)
        at_risk_hi = np.searchsorted(out, risk, side="right") / n
        ks = max(np.max(np.abs(ecdf_hi - at_out)), np.max(np.abs(ecdf_hi - 1 / n - at_out)),
                 np.max(np.abs(at_risk_hi - cdf)))
        print(f"criterion 9: Kolmogorov distance {ks:.4f}")
        assert ks < 0.02
        assert time.perf_counter() - t0 < 180


# ---------------------------------------------------------------------------
# 10. desk-scale benchmark direction
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c10_desk_benchmark_direction(tmp_path):
    with criterion(10, "desk benchmark: conditional beats approx on c and alpha (median RMSE)"):
        cfg = harness.ExperimentConfig.load("configs/desk.json")
        g = cfg.geometry
        assert (g.side_counts, g.coarse, cfg.data.m) == ([5, 5], 3, 50)
        assert (cfg.inference.n_mcmc, cfg.inference.burn_in) == (2000, 500)
        assert cfg.benchmark.repetitions == 20
        t0 = time.perf_counter()
        # repetitions are independent; use every core, as on a laptop
        result = harness.benchmark(cfg, threads=os.cpu_count() or 1)
        harness.write_benchmark(result, cfg, tmp_path)
        elapsed = time.perf_counter() - t0
        print(harness.format_rmse_table(result.table))
        t = result.table
        print(f"criterion 10: {elapsed / 60:.1f} min; beta RMSE difference "
              f"(conditional - approx) = {t['conditional']['median']['beta'] - t['approx']['median']['beta']:+.4f}")
        assert not result.failed
        assert t["conditional"]["median"]["c"] < t["approx"]["median"]["c"]
        assert t["conditional"]["median"]["alpha"] < t["approx"]["median"]["alpha"]
        assert elapsed < 2 * 3600


# ---------------------------------------------------------------------------
# 11. determinism
# ---------------------------------------------------------------------------

def _tree(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes()
            for p in sorted(directory.rglob("*")) if p.is_file()}


def test_c11_cli_determinism(tmp_path):
    with criterion(11, "every command is byte-identical across reruns and --threads"):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "geometry": {"side_counts": [4, 4], "coarse": 2},
            "data": {"m": 8, "seed": 3, "burn_in": 50},
            "inference": {"n_mcmc": 30, "burn_in": 5, "n_init": 10, "n_condx": 5,
                          "n_condgauss": 50, "n_min": 100, "n_max": 400},
            "benchmark": {"repetitions": 3}}))
        runs = {}
        for label, threads in (("a", 1), ("b", 1), ("c", 3)):
            base = tmp_path / label
            common = ["--config", str(config), "--threads", str(threads)]
            assert cli.main(["generate", *common, "--out", str(base / "gen")]) == 0
            for method in harness.METHODS:
                assert cli.main(["fit", *common, "--method", method,
                                 "--data", str(base / "gen" / "dataset.csv"),
                                 "--out", str(base / f"fit_{method}")]) == 0
            assert cli.main(["summarize", str(base / "fit_conditional" / "chain.csv"),
                             "--burn-in", "5", "--out", str(base / "summ")]) == 0
            assert cli.main(["benchmark", *common, "--out", str(base / "bench")]) == 0
            runs[label] = _tree(base)
        assert len(runs["a"]) >= 12
        assert runs["a"] == runs["b"] == runs["c"]
