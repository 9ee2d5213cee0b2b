import math

import numpy as np
import pytest

from rpareto.cr_norm import (adaptive_estimates, coupled_log_cr, dynamic_n, estimate_log_cr,
                             log_risk_rows, new_bank)
from rpareto.geometry import build_regular_grid
from rpareto.risk import FINE_MEAN, RiskSpec
from rpareto.spectral import ModelParams, sample_w

PAPER = ModelParams(3.0, 0.5, 2.0)


@pytest.fixture(scope="module")
def two_sites():
    return build_regular_grid((2, 1), coarse_pattern="all", s0_index=0)


@pytest.fixture(scope="module")
def grid3():
    return build_regular_grid((3, 3), coarse_pattern=3)


def two_site_log_cr(p):
    # alpha = 2: E[((1 + W)/2)^2] = (2 + 2 E W) / 4 with W lognormal,
    # log W ~ N(-gamma/alpha, 2 gamma/alpha^2) and gamma = c at unit distance
    assert p.alpha == 2.0
    ew = math.exp(-p.c / p.alpha + p.c / p.alpha ** 2)
    return math.log((2.0 + 2.0 * ew) / 4.0)


def test_closed_form_oracle_value():
    # frozen from an independent 1-D quadrature of the lognormal integral
    assert two_site_log_cr(PAPER) == pytest.approx(-0.30627617444504546, abs=1e-14)


@pytest.mark.parametrize("params", [PAPER, ModelParams(0.2, 1.7, 0.4)])
def test_point_risk_at_s0_is_exactly_zero(grid3, params):
    spec = RiskSpec.point(grid3.s0_index, 9)
    bank = new_bank(grid3, 50, np.random.default_rng(0))
    est = estimate_log_cr(params, spec, grid3, bank)
    assert est.log_value == 0.0 and est.variance_heuristic == 0.0


def test_point_risk_elsewhere_consistent_with_one(grid3):
    spec = RiskSpec.point(0, 9)
    bank = new_bank(grid3, 20_000, np.random.default_rng(1))
    est = estimate_log_cr(ModelParams(1.0, 1.0, 1.5), spec, grid3, bank)
    assert abs(est.log_value) < 4 * est.sd


def test_two_site_fine_mean_matches_closed_form(two_sites):
    bank = new_bank(two_sites, 200_000, np.random.default_rng(2))
    est = estimate_log_cr(PAPER, FINE_MEAN, two_sites, bank)
    assert abs(est.log_value - two_site_log_cr(PAPER)) < 3 * est.sd


def test_empty_bank_rejected(grid3):
    bank = new_bank(grid3, 0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        estimate_log_cr(PAPER, FINE_MEAN, grid3, bank)


def test_coupled_equal_params_bit_identical(grid3):
    bank = new_bank(grid3, 1000, np.random.default_rng(3))
    a, b = coupled_log_cr(PAPER, ModelParams(3.0, 0.5, 2.0), FINE_MEAN, grid3, bank)
    assert a.log_value == b.log_value


def test_alpha_only_change_shares_w_draws(grid3):
    from rpareto.gauss_field import get_sampler
    from rpareto.spectral import spectral_from_gaussian
    bank = new_bank(grid3, 100, np.random.default_rng(4))
    g = get_sampler(grid3).transform(bank.noise, PAPER.variogram)
    p2 = ModelParams(3.0, 0.5, 2.5)
    w1 = spectral_from_gaussian(g, grid3, PAPER).w
    w2 = spectral_from_gaussian(g, grid3, p2).w
    # same Gaussian rows; only the exponent 1/alpha differs
    np.testing.assert_allclose(2.0 * np.log(w1), 2.5 * np.log(w2), atol=1e-12)


def test_coupling_reduces_difference_variance(grid3):
    old, prop = PAPER, ModelParams(3.3, 0.5, 2.0)
    rng = np.random.default_rng(5)
    coupled, indep = [], []
    for _ in range(200):
        bank = new_bank(grid3, 500, rng)
        a, b = coupled_log_cr(old, prop, FINE_MEAN, grid3, bank)
        coupled.append(a.log_value - b.log_value)
        b2 = estimate_log_cr(prop, FINE_MEAN, grid3, new_bank(grid3, 500, rng))
        indep.append(a.log_value - b2.log_value)
    assert np.var(coupled) <= np.var(indep)


def test_dynamic_n_degenerate_risk_stops_at_n_min(grid3):
    spec = RiskSpec.point(grid3.s0_index, 9)
    bank = dynamic_n(PAPER, spec, grid3, q=0.01, n_min=300, n_max=5000,
                     rng=np.random.default_rng(6))
    assert bank.rows == 300 and bank.satisfied


def test_dynamic_n_cap_is_flagged(grid3):
    bank = dynamic_n(PAPER, FINE_MEAN, grid3, q=1e-9, n_min=100, n_max=700,
                     rng=np.random.default_rng(7))
    assert bank.rows == 700 and not bank.satisfied


def test_dynamic_n_revalidated_on_fresh_sample(grid3):
    params, q = ModelParams(1.0, 1.0, 1.0), 0.01
    bank = dynamic_n(params, FINE_MEAN, grid3, q=q, rng=np.random.default_rng(8))
    assert bank.satisfied
    n = bank.rows
    w = sample_w(grid3, params, np.random.default_rng(9), size=10 * n)
    ra = w.mean(axis=1) ** params.alpha
    assert math.sqrt(np.var(ra, ddof=1) / n) / ra.mean() < q


def test_bank_growth_keeps_estimates_consistent(grid3):
    # the adaptive bank and a direct evaluation on the returned rows agree
    rng = np.random.default_rng(10)
    bank, ests = adaptive_estimates([PAPER, ModelParams(2.5, 0.6, 1.8)], FINE_MEAN, grid3, rng,
                                    q=0.05, n_min=200, n_max=3200)
    again = estimate_log_cr(PAPER, FINE_MEAN, grid3, bank)
    assert again.log_value == pytest.approx(ests[0].log_value, abs=1e-12)
