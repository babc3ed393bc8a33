import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetcache import netmodel
from hetcache.netmodel import (BITS_PER_MBYTE, ScenarioError, build_scenario,
                               pathloss_gain_db, sample_channel_draw,
                               sample_content_sizes, sample_requests,
                               zipf_popularity)

from conftest import tiny_scenario


class TestZipf:
    def test_uniform_case(self):
        np.testing.assert_allclose(zipf_popularity(4, 0.0), [0.25] * 4)

    def test_two_items_harmonic(self):
        np.testing.assert_allclose(zipf_popularity(2, 1.0), [2 / 3, 1 / 3])

    def test_matches_direct_summation(self):
        # independent oracle: plain python loop over 1/c^0.56
        C, z = 1000, 0.56
        total = sum(1.0 / c ** z for c in range(1, C + 1))
        expected_first = (1.0 / 1 ** z) / total
        got = zipf_popularity(C, z)
        assert got[0] == pytest.approx(expected_first, rel=1e-13)
        assert got.sum() == pytest.approx(1.0, abs=1e-12)

    def test_empty_catalog_rejected(self):
        with pytest.raises(ScenarioError):
            zipf_popularity(0, 0.5)

    @given(st.integers(1, 300), st.floats(0.0, 3.0))
    @settings(max_examples=50, deadline=None)
    def test_properties(self, C, z):
        p = zipf_popularity(C, z)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.diff(p) <= 1e-15)  # non-increasing in rank
        assert np.all(p > 0)


class TestContentSizes:
    def test_degenerate_lognormal(self):
        rng = np.random.default_rng(0)
        s = sample_content_sizes(50, 0.0, 1e-12, rng)
        np.testing.assert_allclose(s, BITS_PER_MBYTE, rtol=1e-4)

    def test_mean_matches_closed_form(self):
        # closed-form lognormal mean as the oracle
        rng = np.random.default_rng(1)
        n = 100_000
        s = sample_content_sizes(n, 0.5, 1.5, rng) / BITS_PER_MBYTE
        mean = math.exp(0.5 + 1.5 / 2)
        var = (math.exp(1.5) - 1) * math.exp(2 * 0.5 + 1.5)
        se = math.sqrt(var / n)
        assert abs(s.mean() - mean) < 3 * se + 1 / BITS_PER_MBYTE

    def test_deterministic_given_seed(self):
        a = sample_content_sizes(20, 0.5, 1.5, np.random.default_rng(7))
        b = sample_content_sizes(20, 0.5, 1.5, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_minimum_one_bit(self):
        rng = np.random.default_rng(2)
        s = sample_content_sizes(1000, -30.0, 0.5, rng)
        assert np.all(s >= 1.0)


class TestChannel:
    def test_pathloss_reference_point(self):
        # 1 km, no shadowing, unit fading: loss is exactly 128.1 dB
        g = pathloss_gain_db(np.array([1000.0]), np.array([0.0]))
        assert g[0] == pytest.approx(10 ** -12.81, rel=1e-12)

    def test_doubling_distance(self):
        g1 = pathloss_gain_db(np.array([500.0]), np.array([0.0]))
        g2 = pathloss_gain_db(np.array([1000.0]), np.array([0.0]))
        extra_db = 10 * np.log10(g1[0] / g2[0])
        assert extra_db == pytest.approx(37.6 * math.log10(2), rel=1e-12)

    def test_small_scale_unit_mean(self):
        # factor out the fixed large-scale gain; 1e5 fading samples should
        # average to 1 like the unit-mean exponential oracle
        sc = tiny_scenario(seed=0, users_macro=1, users_per_fbs=0, num_fbs=0,
                           n_access=1000, n_backhaul=1)
        rng = np.random.default_rng(3)
        d0 = np.linalg.norm(sc.bs_positions[0] - sc.user_positions[0])
        large = netmodel.pathloss_gain_db(np.array([max(d0, 1.0)]),
                                          sc.shadow_access_db[0, :1])[0]
        samples = np.concatenate([
            sample_channel_draw(sc, rng).h_access[0, 0, :] / large
            for _ in range(100)])
        n = samples.size
        assert n == 100_000
        se = 1.0 / math.sqrt(n)  # exponential(1) has unit variance
        assert abs(samples.mean() - 1.0) < 3 * se

    def test_distance_clamp_warns(self, caplog):
        with caplog.at_level("WARNING"):
            pathloss_gain_db(np.array([0.0]), np.array([0.0]))
        assert any("clamp" in r.message for r in caplog.records)

    def test_positive_and_finite(self, scenario):
        d = sample_channel_draw(scenario, np.random.default_rng(0))
        assert np.all(d.h_access > 0) and np.all(np.isfinite(d.h_access))
        assert np.all(d.h_backhaul > 0) and np.all(np.isfinite(d.h_backhaul))


class TestRequests:
    def test_single_content(self):
        sc = tiny_scenario(seed=1, num_contents=1)
        r = sample_requests(sc, np.random.default_rng(0))
        assert np.all(r.delta[:, 0] == 1)

    def test_uniform_frequency(self):
        sc = tiny_scenario(seed=1, num_contents=5, zipf=0.0, users_macro=6)
        rng = np.random.default_rng(4)
        n = 20_000
        hits = 0
        users = sc.num_users
        for _ in range(n // users):
            hits += sample_requests(sc, rng).delta[:, 0].sum()
        total = (n // users) * users
        p = 1 / 5
        se = math.sqrt(p * (1 - p) / total)
        assert abs(hits / total - p) < 3 * se

    def test_top_decile_share(self):
        sc = tiny_scenario(seed=1, num_contents=100, zipf=0.56, users_macro=8)
        expected = sum(1 / c ** 0.56 for c in range(1, 11)) / \
            sum(1 / c ** 0.56 for c in range(1, 101))
        rng = np.random.default_rng(5)
        total = hits = 0
        for _ in range(3000):
            r = sample_requests(sc, rng)
            hits += int((r.content_of < 10).sum())
            total += sc.num_users
        se = math.sqrt(expected * (1 - expected) / total)
        assert abs(hits / total - expected) < 3.5 * se

    def test_exactly_one_per_user(self, scenario):
        r = sample_requests(scenario, np.random.default_rng(9))
        assert np.all(r.delta.sum(axis=1) == 1)


class TestScenario:
    def test_same_seed_identical(self):
        a = tiny_scenario(seed=42)
        b = tiny_scenario(seed=42)
        np.testing.assert_array_equal(a.content_sizes, b.content_sizes)
        np.testing.assert_array_equal(a.user_positions, b.user_positions)
        np.testing.assert_array_equal(a.shadow_access_db, b.shadow_access_db)

    def test_popularity_normalized(self, scenario):
        assert scenario.popularity.sum() == pytest.approx(1.0, abs=1e-12)

    def test_geometry_inside_macro_disc(self):
        sc = tiny_scenario(seed=11, num_fbs=6, users_per_fbs=3, users_macro=4)
        assert np.all(np.hypot(*sc.user_positions.T) <= sc.cell_radius_macro + 1e-9)
        assert np.all(np.hypot(*sc.bs_positions.T) <= sc.cell_radius_macro + 1e-9)

    def test_config_roundtrip(self, tmp_path, scenario):
        path = tmp_path / "scenario.json"
        netmodel.scenario_to_config(scenario, str(path))
        again = netmodel.scenario_from_config(str(path))
        np.testing.assert_array_equal(scenario.content_sizes, again.content_sizes)
        np.testing.assert_array_equal(scenario.bs_positions, again.bs_positions)

    def test_unknown_key_rejected(self):
        with pytest.raises(ScenarioError):
            build_scenario({"nope": 1})

    def test_immutability(self, scenario):
        with pytest.raises(ValueError):
            scenario.popularity[0] = 0.5
