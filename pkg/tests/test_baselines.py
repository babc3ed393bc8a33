import numpy as np
import pytest

from hetcache import baselines
from hetcache.netmodel import RequestVector

from conftest import tiny_scenario


def with_sizes(sc, sizes, storage):
    object.__setattr__(sc, "content_sizes", np.asarray(sizes, dtype=float))
    object.__setattr__(sc, "storage_bits", np.asarray(storage, dtype=float))
    return sc


class TestCmp:
    def test_greedy_by_rank(self):
        sc = tiny_scenario(seed=0, num_contents=3)
        with_sizes(sc, [2, 2, 2], [5] * sc.n_bs)
        rho = baselines.cmp_placement(sc)
        np.testing.assert_array_equal(rho[0], [1, 1, 0])

    def test_zero_storage_is_nc(self):
        sc = tiny_scenario(seed=0, num_contents=3)
        with_sizes(sc, [2, 2, 2], [0] * sc.n_bs)
        assert baselines.cmp_placement(sc).sum() == 0

    def test_skip_and_continue(self):
        # enumeration of the two greedy variants: stop-at-misfit would cache
        # {1} only; skip-and-continue caches {1, 3}
        sc = tiny_scenario(seed=0, num_contents=3)
        with_sizes(sc, [4, 3, 1], [5] * sc.n_bs)
        rho = baselines.cmp_placement(sc)
        np.testing.assert_array_equal(rho[0], [1, 0, 1])

    def test_identical_across_bs_given_equal_capacity(self):
        sc = tiny_scenario(seed=1, num_contents=6)
        with_sizes(sc, sc.content_sizes, [sc.content_sizes.sum() * 0.4] * sc.n_bs)
        rho = baselines.cmp_placement(sc)
        for b in range(1, sc.n_bs):
            np.testing.assert_array_equal(rho[b], rho[0])

    def test_respects_storage(self):
        sc = tiny_scenario(seed=2, num_contents=20)
        rho = baselines.cmp_placement(sc)
        assert np.all(rho @ sc.content_sizes <= sc.storage_bits + 1e-9)


class TestRandomPlacements:
    def test_nc_all_zero(self, scenario):
        assert baselines.nc_placement(scenario).sum() == 0

    def test_urc_prc_respect_storage(self):
        sc = tiny_scenario(seed=3, num_contents=12)
        for fn in (baselines.urc_placement, baselines.prc_placement):
            rho = fn(sc, np.random.default_rng(0))
            assert np.all(rho @ sc.content_sizes <= sc.storage_bits + 1e-9)

    def test_urc_fills_until_nothing_fits(self):
        sc = tiny_scenario(seed=0, num_contents=4)
        with_sizes(sc, [1, 1, 1, 1], [2] * sc.n_bs)
        rho = baselines.urc_placement(sc, np.random.default_rng(5))
        assert np.all(rho.sum(axis=1) == 2)

    def test_prc_uniform_popularity_matches_urc_distribution(self):
        # sqrt of a constant is constant: per-draw selection frequencies agree
        sc = tiny_scenario(seed=0, num_contents=5, zipf=0.0)
        with_sizes(sc, np.ones(5), np.full(sc.n_bs, 2.0))
        counts_u = np.zeros(5)
        counts_p = np.zeros(5)
        for s in range(4000):
            counts_u += baselines.urc_placement(sc, np.random.default_rng(s))[0]
            counts_p += baselines.prc_placement(sc, np.random.default_rng(s))[0]
        # chi-square against the uniform expectation 2/5 per item
        exp = 4000 * 2 / 5
        chi_u = float(((counts_u - exp) ** 2 / exp).sum())
        chi_p = float(((counts_p - exp) ** 2 / exp).sum())
        assert chi_u < 18.47  # chi2(4) at 0.1% level
        assert chi_p < 18.47

    def test_prc_frequency_proportional_to_sqrt_popularity(self):
        sc = tiny_scenario(seed=0, num_contents=4, zipf=1.0)
        with_sizes(sc, np.ones(4), np.full(sc.n_bs, 1.0))
        n = 30_000
        counts = np.zeros(4)
        for s in range(n):
            counts += baselines.prc_placement(sc, np.random.default_rng(s))[0]
        w = np.sqrt(sc.popularity)
        expect = w / w.sum()
        got = counts / n
        se = np.sqrt(expect * (1 - expect) / n)
        assert np.all(np.abs(got - expect) < 3.5 * se)


class TestAssociation:
    def test_inside_fbs_disc(self):
        sc = tiny_scenario(seed=4)
        theta = baselines.init_association_cp(sc)
        assert np.all(theta.sum(axis=0) == 1)
        for u in range(sc.num_users):
            d = np.linalg.norm(sc.bs_positions[1:] - sc.user_positions[u], axis=1)
            b = int(np.flatnonzero(theta[:, u])[0])
            if np.any(d <= sc.assoc_radius):
                assert b == 1 + int(np.argmin(np.where(d <= sc.assoc_radius, d, np.inf)))
            else:
                assert b == 0

    def test_outside_all_goes_macro(self):
        sc = tiny_scenario(seed=4, assoc_radius=0.0)
        theta = baselines.init_association_cp(sc)
        assert np.all(theta[0] == 1)

    def test_tie_breaks_low_index(self):
        sc = tiny_scenario(seed=4)
        # force two FBSs equidistant from user 0
        pos = np.array(sc.bs_positions)
        pos[1] = sc.user_positions[0] + [10.0, 0.0]
        pos[2] = sc.user_positions[0] - [10.0, 0.0]
        object.__setattr__(sc, "bs_positions", pos)
        theta = baselines.init_association_cp(sc)
        assert theta[1, 0] == 1

    def test_dp_priority_chain_matches_reimplementation(self):
        rng = np.random.default_rng(6)
        for seed in range(20):
            sc = tiny_scenario(seed=seed, num_fbs=3, users_per_fbs=1, users_macro=2)
            rho = (rng.uniform(size=(sc.n_bs, sc.num_contents)) < 0.4).astype(float)
            delta = np.zeros((sc.num_users, sc.num_contents), dtype=np.int8)
            delta[np.arange(sc.num_users),
                  rng.integers(sc.num_contents, size=sc.num_users)] = 1
            reqs = RequestVector(delta=delta)
            theta = baselines.init_association_dp(sc, rho, reqs)
            # oracle: direct restatement of the four-way rule chain
            for u in range(sc.num_users):
                c = int(reqs.content_of[u])
                d = np.linalg.norm(sc.bs_positions[1:] - sc.user_positions[u], axis=1)
                near = [b for b in range(1, sc.n_bs) if d[b - 1] <= sc.assoc_radius]
                near.sort(key=lambda b: (d[b - 1], b))
                holding = [b for b in near if rho[b, c] > 0]
                if holding:
                    want = holding[0]
                elif rho[0, c] > 0:
                    want = 0
                elif near:
                    want = near[0]
                else:
                    want = 0
                assert theta[want, u] == 1 and theta[:, u].sum() == 1

    def test_dp_nothing_cached_equals_cp_rule(self):
        sc = tiny_scenario(seed=7)
        rho = np.zeros((sc.n_bs, sc.num_contents))
        delta = np.zeros((sc.num_users, sc.num_contents), dtype=np.int8)
        delta[:, 0] = 1
        np.testing.assert_array_equal(
            baselines.init_association_dp(sc, rho, RequestVector(delta=delta)),
            baselines.init_association_cp(sc))

    def test_content_holder_preferred_over_nearest(self):
        sc = tiny_scenario(seed=8, num_fbs=2, users_per_fbs=0, users_macro=1)
        pos = np.array(sc.bs_positions)
        pos[1] = sc.user_positions[0] + [5.0, 0.0]     # nearest, no content
        pos[2] = sc.user_positions[0] + [40.0, 0.0]    # in range, has content
        object.__setattr__(sc, "bs_positions", pos)
        rho = np.zeros((3, sc.num_contents))
        rho[2, 0] = 1
        delta = np.zeros((1, sc.num_contents), dtype=np.int8)
        delta[0, 0] = 1
        theta = baselines.init_association_dp(sc, rho, RequestVector(delta=delta))
        assert theta[2, 0] == 1


class TestPowersAndBeta:
    def test_equal_power_formula(self, scenario):
        p_acc, p_bh = baselines.init_powers(scenario)
        sc = scenario
        assert p_acc[0, 0, 0] == pytest.approx(sc.p_max_bs[0] / (sc.n_access * sc.num_users))
        assert p_bh[1, 2] == pytest.approx(sc.p_max_dc / sc.n_backhaul)

    def test_budgets_hold_with_equality_over_full_grid(self, scenario):
        p_acc, p_bh = baselines.init_powers(scenario)
        sc = scenario
        np.testing.assert_allclose(p_acc.sum(axis=(1, 2)), sc.p_max_bs)
        assert p_bh[0].sum() == pytest.approx(sc.p_max_dc)

    def test_beta_cp_popularity_weighted(self):
        sc = tiny_scenario(seed=0, num_contents=2, zipf=1.0)
        rho = np.zeros((sc.n_bs, 2))
        beta = baselines.init_beta_cp(sc, rho)
        np.testing.assert_allclose(beta[0], [2 / 3, 1 / 3])

    def test_beta_cp_all_cached_row_zero(self):
        sc = tiny_scenario(seed=0, num_contents=2)
        rho = np.ones((sc.n_bs, 2))
        assert baselines.init_beta_cp(sc, rho).sum() == 0

    def test_beta_dp_equal_split(self):
        sc = tiny_scenario(seed=0, num_fbs=0, users_per_fbs=0, users_macro=2,
                           num_contents=3)
        rho = np.zeros((1, 3))
        theta = np.ones((1, 2))
        delta = np.zeros((2, 3), dtype=np.int8)
        delta[0, 0] = 1
        delta[1, 1] = 1
        beta = baselines.init_beta_dp(sc, rho, theta, RequestVector(delta=delta))
        np.testing.assert_allclose(beta[0], [0.5, 0.5, 0.0])

    def test_beta_rows_in_simplex(self, scenario):
        rng = np.random.default_rng(1)
        rho = (rng.uniform(size=(scenario.n_bs, scenario.num_contents)) < 0.5).astype(float)
        for beta in (baselines.init_beta_cp(scenario, rho),):
            assert np.all(beta >= 0)
            assert np.all(beta.sum(axis=1) <= 1 + 1e-12)

    def test_round_robin_anchor_touches_every_user(self, scenario):
        theta = baselines.init_association_cp(scenario)
        g_acc, g_bh = baselines.init_gamma_round_robin(scenario, theta)
        per_user = g_acc.sum(axis=(0, 2))
        assert np.all(per_user[theta.sum(axis=0) > 0] >= 1)
        assert np.all(g_acc.sum(axis=1) <= 1 + 1e-12)
        assert np.all(g_bh.sum(axis=0) <= 1 + 1e-12)
