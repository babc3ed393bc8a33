"""Rate mathematics: per-subcarrier SINR rates under worst-case interference,
ergodic (CDI-averaged) rates, the difference-of-concave split, its gradient, and
the linearized concave rate surrogate used by the SCA steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .netmodel import ChannelDraw, Scenario

LN2 = np.log(2.0)


@dataclass
class Allocation:
    """One full decision point.

    placement   (B+1, C) binary: content cached at BS
    assoc       (B+1, U) binary: user association
    p_access    (B+1, U, N_Ac) W
    p_backhaul  (B+1, N_BH) W
    gamma_access    (B+1, U, N_Ac) in [0,1]
    gamma_backhaul  (B+1, N_BH) in [0,1]
    beta        (B+1, C) backhaul rate shares
    relaxed     True while gamma entries may be fractional
    """

    placement: np.ndarray
    assoc: np.ndarray
    p_access: np.ndarray
    p_backhaul: np.ndarray
    gamma_access: np.ndarray
    gamma_backhaul: np.ndarray
    beta: np.ndarray
    relaxed: bool = False

    def copy(self) -> "Allocation":
        return Allocation(*(np.array(getattr(self, f)) for f in (
            "placement", "assoc", "p_access", "p_backhaul",
            "gamma_access", "gamma_backhaul", "beta")), relaxed=self.relaxed)

    def with_(self, **kw) -> "Allocation":
        out = self.copy()
        for k, v in kw.items():
            setattr(out, k, np.array(v) if isinstance(v, np.ndarray) else v)
        return out

    @staticmethod
    def zeros(scenario: Scenario) -> "Allocation":
        B1, U, C = scenario.n_bs, scenario.num_users, scenario.num_contents
        return Allocation(
            placement=np.zeros((B1, C)),
            assoc=np.zeros((B1, U)),
            p_access=np.zeros((B1, U, scenario.n_access)),
            p_backhaul=np.zeros((B1, scenario.n_backhaul)),
            gamma_access=np.zeros((B1, U, scenario.n_access)),
            gamma_backhaul=np.zeros((B1, scenario.n_backhaul)),
            beta=np.zeros((B1, C)),
        )


@dataclass(frozen=True)
class ErgodicRates:
    """CDI-averaged rates: access (B+1, U), backhaul (B+1,), both bit/s."""

    access: np.ndarray
    backhaul: np.ndarray
    n_samples: int


def interference(alloc: Allocation, draw: ChannelDraw) -> np.ndarray:
    """Worst-case inter-cell interference I[b, u, n] = sum_{i!=b, j!=u} g p h_{i,u}."""
    gp = alloc.gamma_access * alloc.p_access                      # (B, U, N)
    total = np.einsum("ijn,iun->un", gp, draw.h_access)           # sum over all (i, j)
    own_bs = np.einsum("ijn,iun->iun", gp, draw.h_access)         # i = b terms, any j
    same_user = np.einsum("iun,iun->un", gp, draw.h_access)       # j = u terms, any i
    own_link = gp * draw.h_access                                 # i = b and j = u
    return total[None, :, :] - own_bs - same_user[None, :, :] + own_link


def access_rates_all(alloc: Allocation, draw: ChannelDraw,
                     scenario: Scenario) -> np.ndarray:
    """Instantaneous per-subcarrier access rates (B+1, U, N_Ac), bit/s (Eq.-1 form)."""
    sigma = scenario.noise_power_sub
    inr = interference(alloc, draw) + sigma
    snr = alloc.p_access * draw.h_access / inr
    return scenario.bandwidth_sub * np.log2(1.0 + snr)


def access_rate_subcarrier(alloc: Allocation, draw: ChannelDraw, scenario: Scenario,
                           b: int, u: int, n: int) -> float:
    return float(access_rates_all(alloc, draw, scenario)[b, u, n])


def user_rates_all(alloc: Allocation, draw: ChannelDraw, scenario: Scenario) -> np.ndarray:
    """gamma-weighted user rates (B+1, U), bit/s."""
    return np.einsum("bun,bun->bu", alloc.gamma_access,
                     access_rates_all(alloc, draw, scenario))


def user_rate(alloc: Allocation, draw: ChannelDraw, scenario: Scenario,
              b: int, u: int) -> float:
    return float(user_rates_all(alloc, draw, scenario)[b, u])


def backhaul_rates_all(alloc: Allocation, draw: ChannelDraw,
                       scenario: Scenario) -> np.ndarray:
    """Instantaneous per-subcarrier backhaul rates (B+1, N_BH), bit/s."""
    snr = alloc.p_backhaul * draw.h_backhaul / scenario.backhaul_noise_power_sub
    return scenario.bandwidth_sub * np.log2(1.0 + snr)


def backhaul_rate_subcarrier(alloc: Allocation, draw: ChannelDraw, scenario: Scenario,
                             b: int, n: int) -> float:
    return float(backhaul_rates_all(alloc, draw, scenario)[b, n])


def bs_backhaul_rates_all(alloc: Allocation, draw: ChannelDraw,
                          scenario: Scenario) -> np.ndarray:
    return np.einsum("bn,bn->b", alloc.gamma_backhaul,
                     backhaul_rates_all(alloc, draw, scenario))


def bs_backhaul_rate(alloc: Allocation, draw: ChannelDraw, scenario: Scenario,
                     b: int) -> float:
    return float(bs_backhaul_rates_all(alloc, draw, scenario)[b])


def ergodic_rates(alloc: Allocation, draws: Sequence[ChannelDraw],
                  scenario: Scenario) -> ErgodicRates:
    """Arithmetic mean of user and BS backhaul rates over the draw set."""
    if len(draws) == 0:
        raise ValueError("ergodic rates need at least one channel draw")
    acc = np.zeros((scenario.n_bs, scenario.num_users))
    bh = np.zeros(scenario.n_bs)
    for d in draws:
        acc += user_rates_all(alloc, d, scenario)
        bh += bs_backhaul_rates_all(alloc, d, scenario)
    return ErgodicRates(access=acc / len(draws), backhaul=bh / len(draws),
                        n_samples=len(draws))


def dc_split(alloc: Allocation, draw: ChannelDraw, scenario: Scenario,
             b: int, u: int, n: int) -> tuple[float, float]:
    """Concave pair (f, g) with f - g equal to the per-subcarrier access rate."""
    sigma = scenario.noise_power_sub
    inr = interference(alloc, draw)[b, u, n] + sigma
    ws = scenario.bandwidth_sub
    f = ws * np.log2(inr + alloc.p_access[b, u, n] * draw.h_access[b, u, n])
    g = ws * np.log2(inr)
    return float(f), float(g)


def grad_g(alloc: Allocation, draw: ChannelDraw, scenario: Scenario,
           u: int, n: int, b: int | None = None) -> np.ndarray:
    """Gradient of the subtracted concave term w.r.t. all access powers.

    Returns (B+1, U); zero on the serving-BS row and on the user's own column.
    The serving BS defaults to the one `assoc` marks for u.
    """
    if b is None:
        served = np.flatnonzero(alloc.assoc[:, u])
        b = int(served[0]) if served.size else 0
    sigma = scenario.noise_power_sub
    denom = interference(alloc, draw)[b, u, n] + sigma
    out = scenario.bandwidth_sub * alloc.gamma_access[:, :, n] * draw.h_access[:, u, None, n] \
        / (LN2 * denom)
    out = np.array(out)
    out[b, :] = 0.0
    out[:, u] = 0.0
    return out


def approx_access_rate(alloc_t: Allocation, alloc_prev: Allocation,
                       draws: Sequence[ChannelDraw], scenario: Scenario,
                       b: int, u: int) -> float:
    """Concave surrogate of the ergodic access rate at `alloc_t`, anchored at
    `alloc_prev`: mean over draws of sum_n gamma * (f(p_t) - g(p_prev) -
    grad_g(p_prev) . (p_t - p_prev)). Exact at the anchor, never above the
    true rate elsewhere.
    """
    if len(draws) == 0:
        raise ValueError("surrogate needs at least one channel draw")
    sigma = scenario.noise_power_sub
    ws = scenario.bandwidth_sub
    dp = alloc_t.p_access - alloc_prev.p_access
    gam = alloc_prev.gamma_access
    total = 0.0
    for d in draws:
        h_u = d.h_access[:, u, :]                                  # (B+1, N)
        inr_prev = interference(alloc_prev, d)[b, u, :] + sigma    # (N,)
        # interference displacement: sum over i != b, j != u of gamma dp h
        d_inr = (np.einsum("ijn,ijn,in->n", gam, dp, h_u)
                 - np.einsum("jn,jn->n", gam[b], dp[b]) * h_u[b]
                 - np.einsum("in,in,in->n", gam[:, u, :], dp[:, u, :], h_u)
                 + gam[b, u, :] * dp[b, u, :] * h_u[b])
        f_t = ws * np.log2(inr_prev + d_inr + alloc_t.p_access[b, u, :] * h_u[b])
        g_prev = ws * np.log2(inr_prev)
        g_lin = d_inr * ws / (LN2 * inr_prev)  # grad_g(p_prev) . dp, per subcarrier
        total += float(np.dot(gam[b, u, :], f_t - g_prev - g_lin))
    return total / len(draws)
