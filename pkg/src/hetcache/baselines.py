"""Heuristic cache placements (CMP/URC/PRC/NC) and the initialization rules
for association, powers, and backhaul shares in both phases.
"""

from __future__ import annotations

import numpy as np

from .netmodel import RequestVector, Scenario

PLACEMENT_NAMES = ("cmp", "urc", "prc", "nc")


def cmp_placement(scenario: Scenario) -> np.ndarray:
    """Cache most popular: greedy in rank order per BS, skipping items that do
    not fit and continuing down the ranking (first-fit by rank)."""
    sc = scenario
    rho = np.zeros((sc.n_bs, sc.num_contents))
    order = np.argsort(-sc.popularity, kind="stable")  # rank order; stable on ties
    for b in range(sc.n_bs):
        free = sc.storage_bits[b]
        for c in order:
            if sc.content_sizes[c] <= free:
                rho[b, c] = 1.0
                free -= sc.content_sizes[c]
    return rho


def urc_placement(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    """Uniform random caching: independent uniform draws without replacement
    per BS until no remaining content fits."""
    sc = scenario
    rho = np.zeros((sc.n_bs, sc.num_contents))
    for b in range(sc.n_bs):
        free = sc.storage_bits[b]
        for c in rng.permutation(sc.num_contents):
            if sc.content_sizes[c] <= free:
                rho[b, c] = 1.0
                free -= sc.content_sizes[c]
    return rho


def prc_placement(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    """Popular random caching: draw without replacement with probability
    proportional to sqrt(popularity), renormalized over the remaining pool."""
    sc = scenario
    rho = np.zeros((sc.n_bs, sc.num_contents))
    base_w = np.sqrt(sc.popularity)
    for b in range(sc.n_bs):
        free = sc.storage_bits[b]
        pool = list(range(sc.num_contents))
        while pool and any(sc.content_sizes[c] <= free for c in pool):
            w = base_w[pool]
            c = pool[rng.choice(len(pool), p=w / w.sum())]
            pool.remove(c)
            if sc.content_sizes[c] <= free:
                rho[b, c] = 1.0
                free -= sc.content_sizes[c]
    return rho


def nc_placement(scenario: Scenario) -> np.ndarray:
    """No caching."""
    return np.zeros((scenario.n_bs, scenario.num_contents))


def make_placement(name: str, scenario: Scenario,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    if name == "cmp":
        return cmp_placement(scenario)
    if name == "urc":
        return urc_placement(scenario, rng or np.random.default_rng(0))
    if name == "prc":
        return prc_placement(scenario, rng or np.random.default_rng(0))
    if name == "nc":
        return nc_placement(scenario)
    raise ValueError(f"unknown placement strategy {name!r}")


def _fbs_distances(scenario: Scenario, u: int) -> np.ndarray:
    return np.linalg.norm(scenario.bs_positions[1:] - scenario.user_positions[u], axis=1)


def init_association_cp(scenario: Scenario) -> np.ndarray:
    """Nearest FBS within the association radius, else the MBS. Ties break to
    the lowest BS index."""
    sc = scenario
    theta = np.zeros((sc.n_bs, sc.num_users))
    for u in range(sc.num_users):
        d = _fbs_distances(sc, u)
        near = np.flatnonzero(d <= sc.assoc_radius)
        if near.size:
            theta[1 + near[np.argmin(d[near])], u] = 1.0
        else:
            theta[0, u] = 1.0
    return theta


def init_association_dp(scenario: Scenario, rho: np.ndarray,
                        requests: RequestVector) -> np.ndarray:
    """Information-centric association: content-holding nearest FBS in range,
    else content-holding MBS, else nearest FBS in range, else MBS."""
    sc = scenario
    theta = np.zeros((sc.n_bs, sc.num_users))
    wanted = requests.content_of
    for u in range(sc.num_users):
        d = _fbs_distances(sc, u)
        near = np.flatnonzero(d <= sc.assoc_radius)
        holders = near[rho[1 + near, wanted[u]] > 0] if near.size else near
        if holders.size:
            theta[1 + holders[np.argmin(d[holders])], u] = 1.0
        elif rho[0, wanted[u]] > 0:
            theta[0, u] = 1.0
        elif near.size:
            theta[1 + near[np.argmin(d[near])], u] = 1.0
        else:
            theta[0, u] = 1.0
    return theta


def init_powers(scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Equal split: P_b^max/(N_Ac U) per access slot, P_DC^max/N_BH per
    backhaul slot."""
    sc = scenario
    p_acc = np.broadcast_to(
        sc.p_max_bs[:, None, None] / (sc.n_access * sc.num_users),
        (sc.n_bs, sc.num_users, sc.n_access)).copy()
    p_bh = np.full((sc.n_bs, sc.n_backhaul), sc.p_max_dc / sc.n_backhaul)
    return p_acc, p_bh


def init_gamma_round_robin(scenario: Scenario, theta: np.ndarray
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic subcarrier anchor: access subcarriers are partitioned
    across the BSs that serve anyone (interference-free start), and each BS
    cycles its share over its associated users (lowest index first). Backhaul
    subcarriers cycle over the BSs. Serves as the linearization anchor for
    the first relaxed subcarrier solve, which may re-introduce reuse."""
    sc = scenario
    g_acc = np.zeros((sc.n_bs, sc.num_users, sc.n_access))
    pairs = [(b, u) for b in range(sc.n_bs)
             for u in np.flatnonzero(theta[b] > 0)]
    for n in range(sc.n_access):
        if not pairs:
            break
        b, u = pairs[n % len(pairs)]
        g_acc[b, u, n] = 1.0
    g_bh = np.zeros((sc.n_bs, sc.n_backhaul))
    for n in range(sc.n_backhaul):
        g_bh[n % sc.n_bs, n] = 1.0
    return g_acc, g_bh


def init_beta_cp(scenario: Scenario, rho: np.ndarray) -> np.ndarray:
    """Backhaul shares proportional to popularity over un-cached contents;
    all-zero row when everything is cached."""
    w = (1.0 - rho) * scenario.popularity[None, :]
    denom = w.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        beta = np.where(denom > 0, w / np.where(denom > 0, denom, 1.0), 0.0)
    return beta


def init_beta_dp(scenario: Scenario, rho: np.ndarray, theta: np.ndarray,
                 requests: RequestVector) -> np.ndarray:
    """Equal shares over the un-cached requested contents of each cell
    (each such content is fetched once per period)."""
    # pending[b, c] = number of users of cell b requesting un-cached content c
    pending = np.einsum("uc,bu->bc", requests.delta.astype(float), theta) * (1.0 - rho)
    num = np.minimum(pending, 1.0)
    denom = pending.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        beta = np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), 0.0)
    return beta
