"""Alternating optimization over the three variable blocks: placement /
association / backhaul shares (a mixed-binary convex program via the
logarithmic binary-product transformation), transmit powers (SCA), and
subcarrier shares (SCA plus rounding).

Every block step is accepted only if the true objective did not increase, so
the outer objective trace is non-increasing by construction; a violation
would indicate a solver bug and raises.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import baselines, latency as latency_mod, rates as rates_mod, sca
from .convex import ConvexProgram, LogGroup, ScalarFn, linear_fn, solve_midcp
from .latency import EvalContext, LatencyReport
from .netmodel import Scenario
from .rates import Allocation

log = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-7  # relative slack allowed on the outer descent


class InfeasibleScenarioError(RuntimeError):
    """No feasible starting allocation exists for this instance."""


class MonotonicityError(AssertionError):
    """The outer objective increased beyond solver slack (solver bug)."""


@dataclass
class AOConfig:
    scheme: str = "pf"            # pf | mmf
    phase: str = "cp"             # cp | dp
    tol_outer: float = 1e-4
    max_outer: int = 20
    log_eps_factor: float = 1e-12  # epsilon = factor * min content size
    sca_tol: float = 1e-4
    sca_max_iter: int = 12
    inner_tol: float = 1e-6
    midcp_gap: float = 1e-4
    midcp_node_budget: int = 100_000
    pin_theta: bool = False       # keep the heuristic association in all steps

    def __post_init__(self):
        if self.tol_outer <= 0 or self.sca_tol <= 0 or self.inner_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class AOResult:
    alloc: Allocation
    report: LatencyReport
    objective: float
    trace: list
    iterations: int
    status: str
    step_log: list = field(default_factory=list)


def _log_eps(scenario: Scenario, cfg: AOConfig) -> float:
    return cfg.log_eps_factor * float(scenario.content_sizes.min())


def _placement_program(ctx: EvalContext, alloc: Allocation, scheme: str,
                       phase: str, cfg: AOConfig):
    """Assemble the placement / association / shares step as a mixed-binary
    convex program (Eq.-9-style log form for the binary products).

    In the CP the placement is free; in the DP it is fixed and only shares
    and association remain. Users pinned to one BS by their current
    subcarriers share one backhaul-latency auxiliary per (BS, content).
    """
    sc = ctx.scenario
    demand = sca._demand(ctx, phase)
    if phase == "cp":
        erg = rates_mod.ergodic_rates(alloc, ctx.draws, sc)
        acc_rate, bh_rate = erg.access, erg.backhaul
    else:
        acc_rate = rates_mod.user_rates_all(alloc, ctx.draw, sc)
        bh_rate = rates_mod.bs_backhaul_rates_all(alloc, ctx.draw, sc)
    ln_eps = np.log(_log_eps(sc, cfg))

    # association presolve: shares pin theta, zero rate forbids it
    g_sum = alloc.gamma_access.sum(axis=2)
    forced = (g_sum > 1e-12)
    allowed = (acc_rate > 0)
    if cfg.pin_theta:
        forced = np.array(alloc.assoc > 0)
        allowed = forced.copy()
    free_pairs = [(b, u) for b in range(sc.n_bs) for u in range(sc.num_users)
                  if allowed[b, u] and not forced[b, u]
                  and not forced[:, u].any()]
    theta_fixed = forced.astype(float)

    place_free = []
    if phase == "cp":
        for b in range(sc.n_bs):
            for c in range(sc.num_contents):
                if sc.content_sizes[c] <= sc.storage_bits[b]:
                    place_free.append((b, c))
    movable = set(place_free)
    # (b, c) pairs that may need a backhaul share
    miss_mass = np.einsum("bu,uc->bc", theta_fixed, demand)
    bh_items = []
    for b in range(sc.n_bs):
        for c in range(sc.num_contents):
            if miss_mass[b, c] > 0 and ((b, c) in movable
                                        or alloc.placement[b, c] == 0):
                bh_items.append((b, c))
        if bh_rate[b] <= 0 and any(bb == b for bb, _ in bh_items):
            raise latency_mod.InfeasibleAllocationError(
                f"BS {b} has demand but zero backhaul rate")

    idx = 0
    i_rho = {}
    for pc in place_free:
        i_rho[pc] = idx
        idx += 1
    i_theta = {}
    for p in free_pairs:
        i_theta[p] = idx
        idx += 1
    i_beta = {}
    i_y = {}
    for bc in bh_items:
        i_beta[bc] = idx
        idx += 1
        i_y[bc] = idx
        idx += 1
    iv = idx if scheme == "mmf" else None
    n = idx + (1 if scheme == "mmf" else 0)

    cons: list[ScalarFn] = []
    # storage per BS over the free placements plus any fixed bulk
    if phase == "cp":
        for b in range(sc.n_bs):
            ids = [i_rho[(bb, c)] for (bb, c) in place_free if bb == b]
            sizes = [sc.content_sizes[c] for (bb, c) in place_free if bb == b]
            if ids:
                cons.append(linear_fn(n, ids, sizes, -sc.storage_bits[b],
                                      name=f"storage[{b}]"))
    # association: at most one BS per user over the free pairs
    for u in range(sc.num_users):
        ids = [i_theta[(b, uu)] for (b, uu) in free_pairs if uu == u]
        if ids:
            cons.append(linear_fn(n, ids, [1.0] * len(ids),
                                  theta_fixed[:, u].sum() - 1.0,
                                  name=f"assoc[{u}]"))

    # log-form coupling y * beta * R_bh >= s * eps^(exponent)
    for (b, c) in bh_items:
        lin_idx, lin_val = [], []
        const = np.log(sc.content_sizes[c]) - np.log(bh_rate[b])
        if phase == "cp" and (b, c) in i_rho:
            lin_idx.append(i_rho[(b, c)])
            lin_val.append(ln_eps)
        # exponent (1 - theta) vanishes for pinned users; free-theta pairs are
        # handled conservatively by requiring the constraint outright
        cons.append(ScalarFn(
            n=n, lin_idx=lin_idx, lin_val=lin_val, const=const,
            groups=[LogGroup(cols=[i_y[(b, c)], i_beta[(b, c)]],
                             A=np.eye(2), offs=np.zeros(2), wts=np.ones(2))],
            name=f"logtrick[{b},{c}]"))
    # share simplex per BS
    for b in range(sc.n_bs):
        ids = [i_beta[(bb, c)] for (bb, c) in bh_items if bb == b]
        if ids:
            cons.append(linear_fn(n, ids, [1.0] * len(ids), -1.0,
                                  name=f"beta_simplex[{b}]"))

    # per-user latency functional: access consts + theta terms + y terms
    def user_latency_terms(u):
        ids, vals, const = [], [], 0.0
        for b in range(sc.n_bs):
            mass = float(demand[u] @ sc.content_sizes)
            if theta_fixed[b, u] > 0:
                const += mass / acc_rate[b, u]
                for c in np.flatnonzero(demand[u] > 0):
                    if (b, int(c)) in i_y:
                        ids.append(i_y[(b, int(c))])
                        vals.append(float(demand[u, c]))
            elif (b, u) in i_theta:
                ids.append(i_theta[(b, u)])
                vals.append(mass / acc_rate[b, u])
        return ids, vals, const

    obj_idx, obj_val, obj_const = [], [], 0.0
    for u in range(sc.num_users):
        ids, vals, const = user_latency_terms(u)
        if not ids and const == 0.0:
            continue
        if scheme == "mmf":
            cons.append(linear_fn(n, ids + [iv], vals + [-1.0], const,
                                  name=f"lat_v[{u}]"))
        else:
            cons.append(linear_fn(n, ids, vals, const - sc.deadline,
                                  name=f"deadline[{u}]"))
        w = sc.weights[u]
        obj_idx.extend(ids)
        obj_val.extend(w * v for v in vals)
        obj_const += w * const

    if scheme == "mmf":
        objective = linear_fn(n, [iv], [1.0], name="v")
    else:
        objective = linear_fn(n, obj_idx, obj_val, obj_const,
                              name="weighted_latency")

    lower = np.zeros(n)
    upper = np.full(n, np.inf)
    for pc, k in i_rho.items():
        upper[k] = 1.0
    for p, k in i_theta.items():
        upper[k] = 1.0
    for bc, k in i_beta.items():
        upper[k] = 1.0
    if iv is not None:
        upper[iv] = sc.deadline
    binaries = np.array(sorted(list(i_rho.values()) + list(i_theta.values())),
                        dtype=int)
    prog = ConvexProgram(n=n, objective=objective, constraints=cons,
                         lower=lower, upper=upper, binary_idx=binaries)
    meta = dict(i_rho=i_rho, i_theta=i_theta, i_beta=i_beta, i_y=i_y, iv=iv,
                theta_fixed=theta_fixed, bh_items=bh_items, bh_rate=bh_rate)
    return prog, meta


def _placement_start(prog: ConvexProgram, meta: dict, alloc: Allocation,
                     sc: Scenario, cfg: AOConfig) -> np.ndarray:
    """Interior start near the incoming block values."""
    x = np.zeros(prog.n)
    for (b, c), k in meta["i_rho"].items():
        x[k] = 0.02 + 0.96 * float(alloc.placement[b, c])
    for (b, u), k in meta["i_theta"].items():
        x[k] = 0.5
    ln_eps = np.log(_log_eps(sc, cfg))
    beta_floor = 1e-9
    items_per_bs: dict[int, list] = {}
    for (b, c) in meta["bh_items"]:
        items_per_bs.setdefault(b, []).append(c)
    for b, cs in items_per_bs.items():
        share = 0.9 / max(len(cs), 1)
        for c in cs:
            k = meta["i_beta"][(b, c)]
            x[k] = max(float(alloc.beta[b, c]) * 0.9, beta_floor, share * 0.05)
        total = sum(x[meta["i_beta"][(b, c)]] for c in cs)
        if total > 0.95:
            for c in cs:
                x[meta["i_beta"][(b, c)]] *= 0.95 / total
    for (b, c), k in meta["i_y"].items():
        expo = (1.0 - x[meta["i_rho"][(b, c)]]) if (b, c) in meta["i_rho"] else 1.0
        need = sc.content_sizes[c] * np.exp((1.0 - expo) * ln_eps) \
            / (x[meta["i_beta"][(b, c)]] * meta["bh_rate"][b])
        x[k] = need * 1.5
    if meta["iv"] is not None:
        x[meta["iv"]] = sc.deadline * 0.999
    return x


def _apply_placement(alloc: Allocation, x: np.ndarray, meta: dict,
                     sc: Scenario) -> Allocation:
    out = alloc.copy()
    if meta["i_rho"]:
        for (b, c), k in meta["i_rho"].items():
            out.placement[b, c] = float(np.round(x[k]))
    out.assoc = np.array(meta["theta_fixed"])
    for (b, u), k in meta["i_theta"].items():
        if np.round(x[k]) > 0:
            out.assoc[b, u] = 1.0
    out.beta = np.zeros_like(out.beta)
    for (b, c), k in meta["i_beta"].items():
        if out.placement[b, c] == 0:
            out.beta[b, c] = min(max(x[k], 0.0), 1.0)
    return out


def step_placement_cp(ctx: EvalContext, alloc: Allocation, scheme: str,
                      cfg: AOConfig | None = None, diag: list | None = None
                      ) -> tuple[Allocation, dict]:
    """Optimize (placement, shares, association) for fixed powers and
    subcarriers; keeps the incoming triple when the candidate does not
    improve the true objective."""
    cfg = cfg or AOConfig(scheme=scheme, phase="cp")
    prog, meta = _placement_program(ctx, alloc, scheme, "cp", cfg)
    start = _placement_start(prog, meta, alloc, ctx.scenario, cfg)
    res = solve_midcp(prog, tol=cfg.inner_tol, gap=cfg.midcp_gap,
                      node_budget=cfg.midcp_node_budget, start=start)
    info = {"status": res.status, "nodes": res.nodes, "gap": res.gap,
            "accepted": False}
    if diag is not None:
        diag.append(("placement", res.status, res.nodes, res.objective))
    if res.status == "infeasible" or not np.isfinite(res.objective):
        return alloc, info
    cand = _apply_placement(alloc, res.x, meta, ctx.scenario)
    old = latency_mod.objective(alloc, ctx, scheme, "cp")
    try:
        new = latency_mod.objective(cand, ctx, scheme, "cp")
    except latency_mod.InfeasibleAllocationError:
        return alloc, info
    if new <= old * (1 + MONOTONE_SLACK) + 1e-15 and \
            latency_mod.check_feasibility(cand, ctx, "cp", scheme).feasible:
        info["accepted"] = True
        return cand, info
    return alloc, info


def step_beta_theta_dp(ctx: EvalContext, alloc: Allocation, scheme: str,
                       cfg: AOConfig | None = None, diag: list | None = None
                       ) -> tuple[Allocation, dict]:
    """Delivery-phase block step: placement fixed, optimize shares and
    association for the realized requests."""
    cfg = cfg or AOConfig(scheme=scheme, phase="dp")
    prog, meta = _placement_program(ctx, alloc, scheme, "dp", cfg)
    start = _placement_start(prog, meta, alloc, ctx.scenario, cfg)
    res = solve_midcp(prog, tol=cfg.inner_tol, gap=cfg.midcp_gap,
                      node_budget=cfg.midcp_node_budget, start=start)
    info = {"status": res.status, "nodes": res.nodes, "gap": res.gap,
            "accepted": False}
    if diag is not None:
        diag.append(("beta_theta", res.status, res.nodes, res.objective))
    if res.status == "infeasible" or not np.isfinite(res.objective):
        return alloc, info
    cand = _apply_placement(alloc, res.x, meta, ctx.scenario)
    old = latency_mod.objective(alloc, ctx, scheme, "dp")
    try:
        new = latency_mod.objective(cand, ctx, scheme, "dp")
    except latency_mod.InfeasibleAllocationError:
        return alloc, info
    if new <= old * (1 + MONOTONE_SLACK) + 1e-15 and \
            latency_mod.check_feasibility(cand, ctx, "dp", scheme).feasible:
        info["accepted"] = True
        return cand, info
    return alloc, info


def initialize(ctx: EvalContext, phase: str, scheme: str,
               rho: np.ndarray | None = None,
               cfg: AOConfig | None = None) -> Allocation:
    """Feasible starting allocation per the heuristic initialization rules:
    nearest-FBS (CP) or information-centric (DP) association, most-popular
    placement (CP), equal powers, demand-based shares, then one relaxed
    subcarrier solve to obtain a feasible binary assignment."""
    cfg = cfg or AOConfig(scheme=scheme, phase=phase)
    sc = ctx.scenario
    if phase == "cp":
        theta = baselines.init_association_cp(sc)
        rho = baselines.cmp_placement(sc) if rho is None else np.array(rho)
        beta = baselines.init_beta_cp(sc, rho)
    else:
        if rho is None:
            raise ValueError("delivery phase needs the caching-phase placement")
        rho = np.array(rho)
        theta = baselines.init_association_cp(sc) if cfg.pin_theta else \
            baselines.init_association_dp(sc, rho, ctx.requests)
        beta = baselines.init_beta_dp(sc, rho, theta, ctx.requests)
    p_acc, p_bh = baselines.init_powers(sc)
    g_acc, g_bh = baselines.init_gamma_round_robin(sc, theta)
    alloc = Allocation(placement=rho, assoc=theta, p_access=p_acc,
                       p_backhaul=p_bh, gamma_access=g_acc, gamma_backhaul=g_bh,
                       beta=beta)
    try:
        res = sca.sca_subcarrier(ctx, alloc, scheme, phase, tol=cfg.sca_tol,
                                 max_iter=cfg.sca_max_iter,
                                 inner_tol=cfg.inner_tol, strict=False)
    except Exception as exc:
        raise InfeasibleScenarioError(f"initialization failed: {exc}") from exc
    verdict = latency_mod.check_feasibility(res.alloc, ctx, phase, scheme)
    if not verdict.feasible:
        raise InfeasibleScenarioError(
            f"no feasible initial allocation: {verdict.violations[:3]}")
    return res.alloc


def solve(ctx: EvalContext, scheme: str, phase: str,
          cfg: AOConfig | None = None, rho: np.ndarray | None = None,
          diag: list | None = None) -> AOResult:
    """Full alternating optimization for one problem instance."""
    cfg = cfg or AOConfig(scheme=scheme, phase=phase)
    alloc = initialize(ctx, phase, scheme, rho=rho, cfg=cfg)
    obj = latency_mod.objective(alloc, ctx, scheme, phase)
    trace = [obj]
    step_log = []
    status = "max-outer"
    for it in range(cfg.max_outer):
        if phase == "cp":
            alloc, info = step_placement_cp(ctx, alloc, scheme, cfg, diag)
        else:
            alloc, info = step_beta_theta_dp(ctx, alloc, scheme, cfg, diag)
        step_log.append(("block", it, info))

        r_pow = sca.sca_power(ctx, alloc, scheme, phase, tol=cfg.sca_tol,
                              max_iter=cfg.sca_max_iter,
                              inner_tol=cfg.inner_tol, diag=diag)
        alloc = r_pow.alloc
        r_gam = sca.sca_subcarrier(ctx, alloc, scheme, phase, tol=cfg.sca_tol,
                                   max_iter=cfg.sca_max_iter,
                                   inner_tol=cfg.inner_tol, diag=diag)
        alloc = r_gam.alloc

        new_obj = latency_mod.objective(alloc, ctx, scheme, phase)
        if new_obj > obj * (1 + MONOTONE_SLACK) + 1e-15:
            raise MonotonicityError(
                f"objective rose from {obj:.9g} to {new_obj:.9g} at outer {it}")
        trace.append(new_obj)
        change = abs(obj - new_obj) / max(abs(obj), 1e-12)
        obj = new_obj
        if change <= cfg.tol_outer:
            status = "converged"
            break
    verdict = latency_mod.check_feasibility(alloc, ctx, phase, scheme)
    if not verdict.feasible:
        raise MonotonicityError(
            f"final allocation infeasible: {verdict.violations[:3]}")
    report = latency_mod.latency_report(alloc, ctx, phase, scheme)
    return AOResult(alloc=alloc, report=report, objective=obj, trace=trace,
                    iterations=len(trace) - 1, status=status, step_log=step_log)
