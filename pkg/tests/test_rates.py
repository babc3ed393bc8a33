import numpy as np
import pytest

from hetcache import rates
from hetcache.netmodel import ChannelDraw
from hetcache.rates import Allocation

from conftest import cp_context, seeded_alloc, tiny_scenario


def manual_rate(alloc, draw, sc, b, u, n):
    """Straight python re-statement of the per-subcarrier SINR rate."""
    interf = 0.0
    for i in range(sc.n_bs):
        if i == b:
            continue
        for j in range(sc.num_users):
            if j == u:
                continue
            interf += (alloc.gamma_access[i, j, n] * alloc.p_access[i, j, n]
                       * draw.h_access[i, u, n])
    sig = sc.noise_power_sub
    num = alloc.p_access[b, u, n] * draw.h_access[b, u, n]
    return sc.bandwidth_sub * np.log2(1 + num / (interf + sig))


def fixed_gain_draw(sc, acc=1.0, bh=1.0):
    return ChannelDraw(h_access=np.full((sc.n_bs, sc.num_users, sc.n_access), acc),
                       h_backhaul=np.full((sc.n_bs, sc.n_backhaul), bh))


class TestAccessRate:
    def test_snr_one_gives_bandwidth(self):
        sc = tiny_scenario(seed=0, bandwidth_sub=312.5e3)
        alloc = Allocation.zeros(sc)
        sigma = sc.noise_power_sub
        alloc.p_access[0, 0, 0] = sigma  # with unit gain: p*h = sigma
        d = fixed_gain_draw(sc)
        r = rates.access_rate_subcarrier(alloc, d, sc, 0, 0, 0)
        assert r == pytest.approx(312_500.0, rel=1e-12)

    def test_zero_power_zero_rate(self, scenario):
        alloc = Allocation.zeros(scenario)
        d = fixed_gain_draw(scenario)
        assert rates.access_rate_subcarrier(alloc, d, scenario, 0, 0, 0) == 0.0

    def test_interference_in_denominator(self):
        sc = tiny_scenario(seed=0)
        alloc = Allocation.zeros(sc)
        sigma = sc.noise_power_sub
        alloc.p_access[0, 0, 0] = 3 * sigma
        # interferer: other BS, other user, active share
        alloc.p_access[1, 1, 0] = 2 * sigma
        alloc.gamma_access[1, 1, 0] = 1.0
        d = fixed_gain_draw(sc)
        r = rates.access_rate_subcarrier(alloc, d, sc, 0, 0, 0)
        assert r == pytest.approx(sc.bandwidth_sub, rel=1e-12)  # SINR = 3/(2+1)

    def test_matches_manual_loop(self, scenario):
        alloc = seeded_alloc(scenario)
        d = cp_context(scenario, seed=1, n_draws=1).draw
        fast = rates.access_rates_all(alloc, d, scenario)
        for b in range(scenario.n_bs):
            for u in range(scenario.num_users):
                for n in range(scenario.n_access):
                    assert fast[b, u, n] == pytest.approx(
                        manual_rate(alloc, d, scenario, b, u, n), rel=1e-11)

    def test_monotone_in_own_power(self, scenario):
        alloc = seeded_alloc(scenario)
        d = cp_context(scenario, seed=2, n_draws=1).draw
        r0 = rates.access_rate_subcarrier(alloc, d, scenario, 0, 0, 0)
        bigger = alloc.with_(p_access=alloc.p_access * 1.5)
        # scaling every power also scales interference; bump only the own link
        alloc.p_access[0, 0, 0] *= 2
        r1 = rates.access_rate_subcarrier(alloc, d, scenario, 0, 0, 0)
        assert r1 > r0

    def test_monotone_in_interfering_power(self, scenario):
        alloc = seeded_alloc(scenario)
        d = cp_context(scenario, seed=2, n_draws=1).draw
        u = 0
        b = int(np.flatnonzero(alloc.assoc[:, u])[0])
        other_b = (b + 1) % scenario.n_bs
        other_u = (u + 1) % scenario.num_users
        alloc.gamma_access[other_b, other_u, 0] = 1.0
        r0 = rates.access_rate_subcarrier(alloc, d, scenario, b, u, 0)
        alloc.p_access[other_b, other_u, 0] *= 10
        r1 = rates.access_rate_subcarrier(alloc, d, scenario, b, u, 0)
        assert r1 < r0


class TestUserRate:
    def test_no_shares_no_rate(self, scenario):
        alloc = seeded_alloc(scenario)
        alloc.gamma_access[:] = 0
        d = fixed_gain_draw(scenario)
        assert rates.user_rate(alloc, d, scenario, 0, 0) == 0.0

    def test_two_identical_subcarriers_add(self):
        sc = tiny_scenario(seed=0, n_access=2)
        alloc = Allocation.zeros(sc)
        sigma = sc.noise_power_sub
        alloc.p_access[0, 0, :] = sigma
        alloc.gamma_access[0, 0, :] = 1.0
        d = fixed_gain_draw(sc)
        assert rates.user_rate(alloc, d, sc, 0, 0) == pytest.approx(
            2 * sc.bandwidth_sub, rel=1e-12)

    def test_matches_per_subcarrier_sum(self, scenario):
        alloc = seeded_alloc(scenario)
        d = cp_context(scenario, seed=5, n_draws=1).draw
        for b in range(scenario.n_bs):
            for u in range(scenario.num_users):
                brute = sum(alloc.gamma_access[b, u, n]
                            * manual_rate(alloc, d, scenario, b, u, n)
                            for n in range(scenario.n_access))
                assert rates.user_rate(alloc, d, scenario, b, u) == pytest.approx(
                    brute, rel=1e-11)


class TestBackhaul:
    def test_snr_one(self, scenario):
        alloc = Allocation.zeros(scenario)
        alloc.p_backhaul[0, 0] = scenario.backhaul_noise_power_sub
        d = fixed_gain_draw(scenario)
        assert rates.backhaul_rate_subcarrier(alloc, d, scenario, 0, 0) == \
            pytest.approx(scenario.bandwidth_sub, rel=1e-12)

    def test_zero_power(self, scenario):
        alloc = Allocation.zeros(scenario)
        d = fixed_gain_draw(scenario)
        assert rates.backhaul_rate_subcarrier(alloc, d, scenario, 0, 0) == 0.0

    def test_interfering_source_hurts(self):
        quiet = tiny_scenario(seed=0, is_psd_dbm_hz=-300.0)
        loud = tiny_scenario(seed=0, is_psd_dbm_hz=-120.0)
        a_q, a_l = Allocation.zeros(quiet), Allocation.zeros(loud)
        a_q.p_backhaul[0, 0] = a_l.p_backhaul[0, 0] = 1.0
        d_q, d_l = fixed_gain_draw(quiet), fixed_gain_draw(loud)
        assert rates.backhaul_rate_subcarrier(a_q, d_q, quiet, 0, 0) > \
            rates.backhaul_rate_subcarrier(a_l, d_l, loud, 0, 0)


class TestErgodic:
    def test_single_draw_equals_instantaneous(self, scenario):
        alloc = seeded_alloc(scenario)
        d = cp_context(scenario, seed=7, n_draws=1).draw
        erg = rates.ergodic_rates(alloc, [d], scenario)
        np.testing.assert_allclose(erg.access,
                                   rates.user_rates_all(alloc, d, scenario))
        assert erg.n_samples == 1

    def test_identical_draws(self, scenario):
        alloc = seeded_alloc(scenario)
        d = cp_context(scenario, seed=7, n_draws=1).draw
        erg = rates.ergodic_rates(alloc, [d] * 5, scenario)
        np.testing.assert_allclose(erg.access,
                                   rates.user_rates_all(alloc, d, scenario))

    def test_matches_streaming_mean(self, scenario):
        # independently coded streaming (Welford) mean as the oracle
        alloc = seeded_alloc(scenario)
        draws = cp_context(scenario, seed=8, n_draws=64).draws
        mean = np.zeros((scenario.n_bs, scenario.num_users))
        for k, d in enumerate(draws, start=1):
            mean += (rates.user_rates_all(alloc, d, scenario) - mean) / k
        erg = rates.ergodic_rates(alloc, draws, scenario)
        np.testing.assert_allclose(erg.access, mean, rtol=1e-10)

    def test_empty_draws_rejected(self, scenario):
        with pytest.raises(ValueError):
            rates.ergodic_rates(seeded_alloc(scenario), [], scenario)


class TestDcSplit:
    def test_reconstructs_rate(self, scenario):
        alloc = seeded_alloc(scenario)
        d = cp_context(scenario, seed=9, n_draws=1).draw
        all_r = rates.access_rates_all(alloc, d, scenario)
        for b in range(scenario.n_bs):
            for u in range(scenario.num_users):
                for n in range(scenario.n_access):
                    f, g = rates.dc_split(alloc, d, scenario, b, u, n)
                    assert f - g == pytest.approx(all_r[b, u, n], rel=1e-12)

    def test_zero_power_f_equals_g(self, scenario):
        alloc = seeded_alloc(scenario)
        alloc.p_access[0, 0, 0] = 0.0
        d = cp_context(scenario, seed=9, n_draws=1).draw
        f, g = rates.dc_split(alloc, d, scenario, 0, 0, 0)
        assert f == pytest.approx(g, rel=1e-14)


class TestGradG:
    def test_no_interference_plug_in(self, scenario):
        alloc = seeded_alloc(scenario)
        alloc.p_access[:] = 0.0
        d = cp_context(scenario, seed=10, n_draws=1).draw
        u = 0
        b = int(np.flatnonzero(alloc.assoc[:, u])[0])
        g = rates.grad_g(alloc, d, scenario, u, 0)
        sigma = scenario.noise_power_sub
        expect = scenario.bandwidth_sub * alloc.gamma_access[:, :, 0] \
            * d.h_access[:, u, None, 0] / (np.log(2) * sigma)
        expect[b, :] = 0.0
        expect[:, u] = 0.0
        np.testing.assert_allclose(g, expect, rtol=1e-12)

    def test_own_bs_entries_zero(self, scenario):
        alloc = seeded_alloc(scenario)
        d = cp_context(scenario, seed=10, n_draws=1).draw
        for u in range(scenario.num_users):
            b = int(np.flatnonzero(alloc.assoc[:, u])[0])
            g = rates.grad_g(alloc, d, scenario, u, 1)
            assert np.all(g[b, :] == 0.0)
            assert np.all(g[:, u] == 0.0)

    def test_matches_finite_differences(self, scenario):
        rng = np.random.default_rng(11)
        failures = 0
        for trial in range(25):
            alloc = seeded_alloc(scenario)
            alloc.p_access[:] = rng.uniform(0.001, 0.2, alloc.p_access.shape)
            d = cp_context(scenario, seed=100 + trial, n_draws=1).draw
            u = int(rng.integers(scenario.num_users))
            n = int(rng.integers(scenario.n_access))
            b = int(np.flatnonzero(alloc.assoc[:, u])[0])
            grad = rates.grad_g(alloc, d, scenario, u, n)
            eps = 1e-6 * float(scenario.p_max_bs.max())
            for _ in range(3):
                i = int(rng.integers(scenario.n_bs))
                j = int(rng.integers(scenario.num_users))
                hi, lo = alloc.copy(), alloc.copy()
                hi.p_access[i, j, n] += eps
                lo.p_access[i, j, n] -= eps
                g_hi = rates.dc_split(hi, d, scenario, b, u, n)[1]
                g_lo = rates.dc_split(lo, d, scenario, b, u, n)[1]
                fd = (g_hi - g_lo) / (2 * eps)
                scale = max(abs(fd), abs(grad[i, j]), 1e-9)
                if abs(fd - grad[i, j]) / scale > 1e-5:
                    failures += 1
        assert failures == 0


class TestSurrogate:
    def test_exact_at_anchor(self, scenario):
        alloc = seeded_alloc(scenario)
        ctx = cp_context(scenario, seed=12, n_draws=4)
        erg = rates.ergodic_rates(alloc, ctx.draws, scenario)
        for u in range(scenario.num_users):
            b = int(np.flatnonzero(alloc.assoc[:, u])[0])
            s = rates.approx_access_rate(alloc, alloc, ctx.draws, scenario, b, u)
            assert s == pytest.approx(erg.access[b, u], rel=1e-12)

    def test_never_exceeds_true_rate(self, scenario):
        rng = np.random.default_rng(13)
        alloc = seeded_alloc(scenario)
        ctx = cp_context(scenario, seed=13, n_draws=4)
        for trial in range(50):
            displaced = alloc.with_(p_access=alloc.p_access *
                                    rng.uniform(0.1, 3.0, alloc.p_access.shape))
            erg = rates.ergodic_rates(displaced, ctx.draws, scenario)
            for u in range(scenario.num_users):
                b = int(np.flatnonzero(alloc.assoc[:, u])[0])
                s = rates.approx_access_rate(displaced, alloc, ctx.draws, scenario, b, u)
                assert s <= erg.access[b, u] + 1e-9

    def test_interference_free_everywhere_exact(self):
        sc = tiny_scenario(seed=0, num_fbs=0, users_per_fbs=0, users_macro=1)
        alloc = seeded_alloc(sc)
        ctx = cp_context(sc, seed=14, n_draws=3)
        rng = np.random.default_rng(2)
        for _ in range(10):
            displaced = alloc.with_(p_access=alloc.p_access *
                                    rng.uniform(0.2, 4.0, alloc.p_access.shape))
            erg = rates.ergodic_rates(displaced, ctx.draws, sc)
            s = rates.approx_access_rate(displaced, alloc, ctx.draws, sc, 0, 0)
            assert s == pytest.approx(erg.access[0, 0], rel=1e-12)
