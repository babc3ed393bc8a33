"""Latency objectives and constraint checking for both phases and both
fairness schemes.

The caching phase scores an allocation against the popularity distribution and
ergodic rates; the delivery phase scores it against one request vector and one
CSI draw. The backhaul term of a cached content is 0 by convention even when
its backhaul share is 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import rates as rates_mod
from .netmodel import ChannelDraw, RequestVector, Scenario
from .rates import Allocation, ErgodicRates

log = logging.getLogger(__name__)

SLACK_TOL = 1e-9  # absolute constraint tolerance, natural units


class InfeasibleAllocationError(ValueError):
    """A latency term has a zero denominator that the allocation required."""


@dataclass(frozen=True)
class EvalContext:
    """Everything an evaluation needs besides the allocation itself.

    CP solves carry the CDI draw set; DP solves carry exactly one draw plus
    the realized requests.
    """

    scenario: Scenario
    draws: tuple[ChannelDraw, ...]
    requests: RequestVector | None = None

    @property
    def draw(self) -> ChannelDraw:
        return self.draws[0]


@dataclass
class LatencyReport:
    access_s: np.ndarray      # (U,)
    backhaul_s: np.ndarray    # (U,)
    phase: str                # "cp" | "dp"
    scheme: str               # "pf" | "mmf"
    weights: np.ndarray
    warnings: list[str] = field(default_factory=list)

    @property
    def total_s(self) -> np.ndarray:
        return self.access_s + self.backhaul_s

    @property
    def weighted_total(self) -> float:
        return float(np.dot(self.weights, self.total_s))

    @property
    def max_latency(self) -> float:
        return float(np.max(self.total_s)) if self.total_s.size else 0.0

    def to_csv_rows(self, run_id: str) -> list[str]:
        """One CSV row per user: run_id, phase, scheme, user, access, backhaul, total."""
        return [f"{run_id},{self.phase},{self.scheme},{u},{self.access_s[u]:.12g},"
                f"{self.backhaul_s[u]:.12g},{self.total_s[u]:.12g}"
                for u in range(self.access_s.size)]


CSV_HEADER = "run_id,phase,scheme,user,access_s,backhaul_s,total_s"


def _user_latency(scenario: Scenario, alloc: Allocation, acc_rate: np.ndarray,
                  bh_rate: np.ndarray, demand: np.ndarray, u: int,
                  warnings: list[str] | None = None) -> tuple[float, float]:
    """Access and backhaul latency of user u for per-content demand weights.

    demand is popularity (CP) or the user's binary request row (DP).
    """
    sc = scenario
    served = np.flatnonzero(alloc.assoc[:, u])
    if served.size == 0:
        if warnings is not None:
            warnings.append(f"user {u} unassociated; latency 0")
        return 0.0, 0.0
    access = backhaul = 0.0
    for b in served:
        mass = float(demand.sum())
        if mass > 0.0:
            if acc_rate[b, u] <= 0.0:
                raise InfeasibleAllocationError(
                    f"user {u} at BS {b} has zero access rate but positive demand")
            access += float(np.dot(demand, sc.content_sizes)) / acc_rate[b, u]
        miss = demand * (1.0 - alloc.placement[b])
        for c in np.flatnonzero(miss > 0):
            denom = alloc.beta[b, c] * bh_rate[b]
            if denom <= 0.0:
                raise InfeasibleAllocationError(
                    f"backhaul share*rate is zero for BS {b}, user {u}, content {c}")
            backhaul += miss[c] * sc.content_sizes[c] / denom
    return access, backhaul


def avg_latency_user(alloc: Allocation, ergodic: ErgodicRates, scenario: Scenario,
                     u: int) -> tuple[float, float]:
    """CP latency of user u (access_s, backhaul_s), popularity-averaged (Eq.-3 form)."""
    return _user_latency(scenario, alloc, ergodic.access, ergodic.backhaul,
                         scenario.popularity, u)


def delivery_latency_user(alloc: Allocation, draw: ChannelDraw, requests: RequestVector,
                          scenario: Scenario, u: int) -> tuple[float, float]:
    """DP latency of user u for its realized request and one CSI draw."""
    acc = rates_mod.user_rates_all(alloc, draw, scenario)
    bh = rates_mod.bs_backhaul_rates_all(alloc, draw, scenario)
    return _user_latency(scenario, alloc, acc, bh, requests.delta[u].astype(float), u)


def latency_report(alloc: Allocation, ctx: EvalContext, phase: str,
                   scheme: str = "pf") -> LatencyReport:
    sc = ctx.scenario
    warnings: list[str] = []
    access = np.zeros(sc.num_users)
    backhaul = np.zeros(sc.num_users)
    if phase == "cp":
        erg = rates_mod.ergodic_rates(alloc, ctx.draws, sc)
        for u in range(sc.num_users):
            access[u], backhaul[u] = _user_latency(
                sc, alloc, erg.access, erg.backhaul, sc.popularity, u, warnings)
    elif phase == "dp":
        if ctx.requests is None:
            raise ValueError("delivery-phase evaluation needs a request vector")
        acc = rates_mod.user_rates_all(alloc, ctx.draw, sc)
        bh = rates_mod.bs_backhaul_rates_all(alloc, ctx.draw, sc)
        for u in range(sc.num_users):
            access[u], backhaul[u] = _user_latency(
                sc, alloc, acc, bh, ctx.requests.delta[u].astype(float), u, warnings)
    else:
        raise ValueError(f"unknown phase {phase!r}")
    for w in warnings:
        log.warning("%s", w)
    return LatencyReport(access_s=access, backhaul_s=backhaul, phase=phase,
                         scheme=scheme, weights=np.array(sc.weights), warnings=warnings)


def objective(alloc: Allocation, ctx: EvalContext, scheme: str, phase: str) -> float:
    """PF: weighted total latency; MMF: worst per-user latency."""
    rep = latency_report(alloc, ctx, phase, scheme)
    return rep.weighted_total if scheme == "pf" else rep.max_latency


@dataclass
class Violation:
    constraint: str
    index: tuple
    slack: float  # negative means violated

    def __str__(self):
        return f"{self.constraint}{self.index}: slack {self.slack:.3e}"


@dataclass
class FeasibilityVerdict:
    feasible: bool
    violations: list[Violation]
    slacks: dict[str, float]  # minimum slack per constraint family

    def __bool__(self):
        return self.feasible


def check_feasibility(alloc: Allocation, ctx: EvalContext, phase: str,
                      scheme: str = "pf", tol: float = SLACK_TOL) -> FeasibilityVerdict:
    """Evaluate every constraint of the phase's problem and return slacks.

    Deadline/min-rate use ergodic rates in the CP and single-draw rates in the
    DP; power sums are deterministic because powers and shares do not depend
    on the draw.
    """
    sc = ctx.scenario
    violations: list[Violation] = []
    slacks: dict[str, float] = {}

    def record(name: str, slack_arr, indices=None):
        arr = np.atleast_1d(np.asarray(slack_arr, dtype=float))
        slacks[name] = min(slacks.get(name, np.inf), float(arr.min())) if arr.size else \
            slacks.get(name, np.inf)
        bad = np.flatnonzero(arr < -tol)
        for k in bad:
            idx = (int(k),) if indices is None else tuple(np.array(indices)[k])
            violations.append(Violation(name, idx, float(arr[k])))

    record("storage", sc.storage_bits - alloc.placement @ sc.content_sizes)
    record("association", 1.0 - alloc.assoc.sum(axis=0))
    record("gamma_theta_coupling",
           (sc.n_access * alloc.assoc - alloc.gamma_access.sum(axis=2)).ravel())
    record("ofdma_access", (1.0 - alloc.gamma_access.sum(axis=1)).ravel())
    record("ofdma_backhaul", 1.0 - alloc.gamma_backhaul.sum(axis=0))
    record("beta_simplex", 1.0 - alloc.beta.sum(axis=1))
    record("beta_box", np.concatenate([alloc.beta.ravel(), 1.0 - alloc.beta.ravel()]))
    record("power_nonneg", np.concatenate([alloc.p_access.ravel(),
                                           alloc.p_backhaul.ravel()]))
    record("bs_power", sc.p_max_bs - np.einsum(
        "bun,bun->b", alloc.gamma_access, alloc.p_access))
    record("dc_power", sc.p_max_dc - float(np.sum(alloc.gamma_backhaul * alloc.p_backhaul)))
    if not alloc.relaxed:
        for name, arr in (("binary_gamma_access", alloc.gamma_access),
                          ("binary_gamma_backhaul", alloc.gamma_backhaul),
                          ("binary_assoc", alloc.assoc),
                          ("binary_placement", alloc.placement)):
            record(name, -np.abs(arr * (1.0 - arr)).ravel())

    if phase == "cp":
        erg = rates_mod.ergodic_rates(alloc, ctx.draws, sc)
        acc_rate, bh_rate = erg.access, erg.backhaul
        demand = [sc.popularity] * sc.num_users
    else:
        if ctx.requests is None:
            raise ValueError("delivery-phase check needs a request vector")
        acc_rate = rates_mod.user_rates_all(alloc, ctx.draw, sc)
        bh_rate = rates_mod.bs_backhaul_rates_all(alloc, ctx.draw, sc)
        demand = [ctx.requests.delta[u].astype(float) for u in range(sc.num_users)]

    record("min_rate", acc_rate.sum(axis=0) - sc.min_rate)
    deadline_slack = np.empty(sc.num_users)
    for u in range(sc.num_users):
        try:
            a, b = _user_latency(sc, alloc, acc_rate, bh_rate, demand[u], u)
            deadline_slack[u] = sc.deadline - (a + b)
        except InfeasibleAllocationError:
            deadline_slack[u] = -np.inf
    record("deadline", deadline_slack)

    return FeasibilityVerdict(feasible=not violations, violations=violations,
                              slacks=slacks)
