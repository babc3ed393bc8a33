import numpy as np
import pytest

from hetcache import baselines, netmodel
from hetcache.latency import EvalContext
from hetcache.rates import Allocation

TINY = {
    "num_fbs": 2, "users_per_fbs": 1, "users_macro": 1,
    "num_contents": 4, "n_access": 3, "n_backhaul": 3,
    "mc_samples": 6, "min_rate": 5e4, "deadline": 3000.0,
    "size_mu": 0.0, "size_sigma2": 0.5,
    "dc_distance": 500.0, "is_psd_dbm_hz": -160.0,
}


def tiny_scenario(seed=0, **over):
    params = dict(TINY)
    params.update(over)
    return netmodel.build_scenario(params, seed=seed)


def seeded_alloc(scenario, rho=None, theta=None):
    """A deterministic, structurally sane allocation: heuristic association,
    equal powers, round-robin subcarriers, popularity-based shares."""
    sc = scenario
    if rho is None:
        rho = baselines.cmp_placement(sc)
    if theta is None:
        theta = baselines.init_association_cp(sc)
    p_acc, p_bh = baselines.init_powers(sc)
    g_acc, g_bh = baselines.init_gamma_round_robin(sc, theta)
    beta = baselines.init_beta_cp(sc, rho)
    return Allocation(placement=rho, assoc=theta, p_access=p_acc, p_backhaul=p_bh,
                      gamma_access=g_acc, gamma_backhaul=g_bh, beta=beta)


def cp_context(scenario, seed=0, n_draws=None):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    draws = netmodel.sample_draws(scenario, rng, n_draws or scenario.mc_samples)
    return EvalContext(scenario=scenario, draws=draws)


def dp_context(scenario, seed=0):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    draw = netmodel.sample_channel_draw(scenario, rng)
    reqs = netmodel.sample_requests(scenario, rng)
    return EvalContext(scenario=scenario, draws=(draw,), requests=reqs)


@pytest.fixture
def scenario():
    return tiny_scenario(seed=3)


@pytest.fixture
def ctx(scenario):
    return cp_context(scenario, seed=3)
