"""Successive convex approximation for the power and subcarrier subproblems.

Both subproblems are assembled as `ConvexProgram`s after the epigraph
transformation: every fractional latency term s/(rate) is replaced by a
reciprocal pair coupled through a product-at-least-one constraint in log
form, and the non-concave access rates are replaced by their linearized
difference-of-concave surrogate anchored at the previous iterate. Because
each rate appears monotonically in every constraint, one rate auxiliary per
served (BS, user) pair (and one per backhaul-active BS) carries all of the
per-content couplings exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import latency as latency_mod
from . import rates as rates_mod
from .convex import ConvexProgram, InfeasibleRoundingError, LogGroup, ScalarFn, \
    _strictly_feasible, linear_fn, relax_and_round, solve_dcp
from .latency import EvalContext
from .rates import Allocation

log = logging.getLogger(__name__)

LN2 = np.log(2.0)
ACCEPT_SLACK = 1e-7     # relative slack for the monotone-descent guard
DEFAULT_SCA_TOL = 1e-5
DEFAULT_SCA_ITERS = 30
DEFAULT_INNER_TOL = 1e-7


@dataclass
class EpigraphVars:
    """Epigraph values at an accepted solution, natural units.

    access: (b, u) -> (rate bound bit/s, reciprocal-latency bound s per bit
    of mean content). backhaul: b -> (rate bound, reciprocal). v is the
    min-max bound when the scheme is mmf.
    """

    access: dict
    backhaul: dict
    v: float | None = None

    def max_product_gap(self) -> float:
        """max |x_hat * x - 1| over all reciprocal pairs (0 after tightening)."""
        gaps = [abs(r * t - 1.0) for r, t in self.access.values()]
        gaps += [abs(r * t - 1.0) for r, t in self.backhaul.values()]
        return max(gaps) if gaps else 0.0


@dataclass
class ScaResult:
    alloc: Allocation
    trace: list
    epigraph: EpigraphVars | None
    status: str
    surrogate_objective: float = np.nan


def _demand(ctx: EvalContext, phase: str) -> np.ndarray:
    """(U, C) per-user demand weights: popularity in CP, requests in DP."""
    sc = ctx.scenario
    if phase == "cp":
        return np.tile(sc.popularity, (sc.num_users, 1))
    if ctx.requests is None:
        raise ValueError("delivery phase needs requests")
    return ctx.requests.delta.astype(float)


def _served_pairs(alloc: Allocation) -> list[tuple[int, int]]:
    bs, us = np.nonzero(alloc.assoc > 0)
    return list(zip(bs.tolist(), us.tolist()))


class _PowerModel:
    """Index maps and draw-dependent coefficients for the power subproblem,
    built once per SCA run; only the linearization is refreshed per iterate."""

    def __init__(self, ctx: EvalContext, alloc: Allocation, phase: str,
                 scheme: str):
        sc = ctx.scenario
        self.ctx, self.phase, self.scheme = ctx, phase, scheme
        self.sc = sc
        self.p_scale = float(max(sc.p_max_bs.max(), sc.p_max_dc))
        self.r_scale = sc.bandwidth_sub
        self.demand = _demand(ctx, phase)
        self.pairs = [(b, u) for (b, u) in _served_pairs(alloc)]
        self.gamma_a = np.array(alloc.gamma_access)
        self.gamma_b = np.array(alloc.gamma_backhaul)

        sb, su, sn = np.nonzero(self.gamma_a > 0)
        self.slots = np.stack([sb, su, sn], axis=1)
        self.slot_of = {(b, u, n): k for k, (b, u, n) in enumerate(self.slots.tolist())}
        bb, bn = np.nonzero(self.gamma_b > 0)
        self.bh_slots = np.stack([bb, bn], axis=1)

        # per-user expected content bits and per-(b,u) 1/beta-weighted miss bits
        self.mean_bits = self.demand @ sc.content_sizes               # (U,)
        miss = self.demand[None, :, :] * (1.0 - alloc.placement[:, None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            per_beta = np.where(miss > 0, sc.content_sizes[None, None, :]
                                / np.maximum(alloc.beta[:, None, :], 1e-300), 0.0)
        self.miss_bits = np.einsum("buc,buc->bu", miss, per_beta)     # (B+1, U)
        if np.any(~np.isfinite(self.miss_bits)):
            raise latency_mod.InfeasibleAllocationError(
                "un-cached demand with zero backhaul share")
        self.bh_active = sorted({b for (b, u) in self.pairs
                                 if self.miss_bits[b, u] > 0})
        for b in self.bh_active:
            if self.bh_slots.size == 0 or not np.any(self.bh_slots[:, 0] == b):
                raise latency_mod.InfeasibleAllocationError(
                    f"BS {b} needs backhaul but holds no backhaul subcarrier")

        # variable layout
        n_sl, n_bh = len(self.slots), len(self.bh_slots)
        self.iq = np.arange(n_sl)
        self.iqb = n_sl + np.arange(n_bh)
        off = n_sl + n_bh
        self.ir = {p: off + i for i, p in enumerate(self.pairs)}
        off += len(self.pairs)
        self.it = {p: off + i for i, p in enumerate(self.pairs)}
        off += len(self.pairs)
        self.irb = {b: off + i for i, b in enumerate(self.bh_active)}
        off += len(self.bh_active)
        self.irhat = {b: off + i for i, b in enumerate(self.bh_active)}
        off += len(self.bh_active)
        self.iv = off if scheme == "mmf" else None
        self.n = off + (1 if scheme == "mmf" else 0)

        self._build_rate_coefficients(ctx, alloc)

    def _build_rate_coefficients(self, ctx: EvalContext, alloc: Allocation):
        """Anchor-independent pieces of every rate surrogate."""
        sc = self.sc
        sigma = sc.noise_power_sub
        S = len(ctx.draws)
        self.S = S
        self.pair_rows = {}
        for (b, u) in self.pairs:
            subs = [n for n in range(sc.n_access) if self.gamma_a[b, u, n] > 0]
            if not subs and sc.min_rate[u] > 0:
                raise latency_mod.InfeasibleAllocationError(
                    f"served user {u} holds no access subcarrier")
            own = [self.slot_of[(b, u, n)] for n in subs]
            intf = {n: [k for k, (i, j, m) in enumerate(self.slots.tolist())
                        if m == n and i != b and j != u] for n in subs}
            cols = sorted(set(own) | {k for lst in intf.values() for k in lst})
            colpos = {c: i for i, c in enumerate(cols)}
            rows_A, rows_int, w = [], [], []
            for n in subs:
                for s, d in enumerate(ctx.draws):
                    a = np.zeros(len(cols))
                    ai = np.zeros(len(cols))
                    for k in intf[n]:
                        i = self.slots[k, 0]
                        coef = self.gamma_a[tuple(self.slots[k])] * \
                            d.h_access[i, u, n] * self.p_scale / sigma
                        a[colpos[k]] += coef
                        ai[colpos[k]] += coef
                    a[colpos[self.slot_of[(b, u, n)]]] += \
                        d.h_access[b, u, n] * self.p_scale / sigma
                    rows_A.append(a)
                    rows_int.append(ai)
                    w.append(self.gamma_a[b, u, n] * sc.bandwidth_sub
                             / (S * self.r_scale * LN2))
            self.pair_rows[(b, u)] = dict(
                cols=np.array(cols, dtype=int),
                A=np.array(rows_A) if rows_A else np.zeros((0, len(cols))),
                A_int=np.array(rows_int) if rows_int else np.zeros((0, len(cols))),
                w=np.array(w))
        sigma_bh = sc.backhaul_noise_power_sub
        self.bh_rows = {}
        for b in self.bh_active:
            ks = [k for k, (i, n) in enumerate(self.bh_slots.tolist()) if i == b]
            rows_A, w = [], []
            for k in ks:
                n = int(self.bh_slots[k, 1])
                for d in ctx.draws:
                    a = np.zeros(len(ks))
                    a[ks.index(k)] = d.h_backhaul[b, n] * self.p_scale / sigma_bh
                    rows_A.append(a)
                    w.append(self.gamma_b[b, n] * sc.bandwidth_sub
                             / (S * self.r_scale * LN2))
            self.bh_rows[b] = dict(cols=self.iqb[ks], A=np.array(rows_A)
                                   if rows_A else np.zeros((0, len(ks))),
                                   w=np.array(w))

    def pack_powers(self, alloc: Allocation) -> np.ndarray:
        q = np.zeros(self.n)
        for k, (b, u, n) in enumerate(self.slots.tolist()):
            q[self.iq[k]] = alloc.p_access[b, u, n] / self.p_scale
        for k, (b, n) in enumerate(self.bh_slots.tolist()):
            q[self.iqb[k]] = alloc.p_backhaul[b, n] / self.p_scale
        return q

    def unpack(self, x: np.ndarray, template: Allocation) -> Allocation:
        out = template.copy()
        for k, (b, u, n) in enumerate(self.slots.tolist()):
            out.p_access[b, u, n] = max(x[self.iq[k]], 0.0) * self.p_scale
        for k, (b, n) in enumerate(self.bh_slots.tolist()):
            out.p_backhaul[b, n] = max(x[self.iqb[k]], 0.0) * self.p_scale
        return out

    def build(self, anchor: Allocation) -> ConvexProgram:
        """Assemble the convex subproblem linearized at `anchor`."""
        sc = self.sc
        n = self.n
        q_anchor = self.pack_powers(anchor)
        cons: list[ScalarFn] = []

        for (b, u), rw in self.pair_rows.items():
            if rw["A"].shape[0] == 0:
                continue
            cols_q = self.iq[rw["cols"]]
            inr = rw["A_int"] @ q_anchor[cols_q] + 1.0
            lin_coef = (rw["w"] / inr) @ rw["A_int"]
            const = float(rw["w"] @ (np.log(inr)
                                     - (rw["A_int"] @ q_anchor[cols_q]) / inr))
            cons.append(ScalarFn(
                n=n, lin_idx=np.concatenate([[self.ir[(b, u)]], cols_q]),
                lin_val=np.concatenate([[1.0], lin_coef]), const=const,
                groups=[LogGroup(cols=cols_q, A=rw["A"],
                                 offs=np.ones(rw["A"].shape[0]), wts=rw["w"])],
                name=f"rate_link[{b},{u}]"))
            cons.append(ScalarFn(
                n=n, groups=[LogGroup(cols=[self.ir[(b, u)], self.it[(b, u)]],
                                      A=np.eye(2), offs=np.zeros(2),
                                      wts=np.ones(2))],
                name=f"recip[{b},{u}]"))
        for b in self.bh_active:
            rw = self.bh_rows[b]
            cons.append(ScalarFn(
                n=n, lin_idx=[self.irb[b]], lin_val=[1.0],
                groups=[LogGroup(cols=rw["cols"], A=rw["A"],
                                 offs=np.ones(rw["A"].shape[0]), wts=rw["w"])],
                name=f"bh_link[{b}]"))
            cons.append(ScalarFn(
                n=n, groups=[LogGroup(cols=[self.irb[b], self.irhat[b]],
                                      A=np.eye(2), offs=np.zeros(2),
                                      wts=np.ones(2))],
                name=f"bh_recip[{b}]"))

        # minimum rate per served user
        for u in range(sc.num_users):
            ids = [self.ir[(b, uu)] for (b, uu) in self.pairs if uu == u]
            if ids:
                cons.append(linear_fn(n, ids, [-1.0] * len(ids),
                                      sc.min_rate[u] / self.r_scale,
                                      name=f"min_rate[{u}]"))

        # per-user latency functional, deadline, and the objective
        obj_idx, obj_val = [], []
        for u in range(sc.num_users):
            idx, val = [], []
            for (b, uu) in self.pairs:
                if uu != u:
                    continue
                idx.append(self.it[(b, u)])
                val.append(self.mean_bits[u] / self.r_scale)
                if self.miss_bits[b, u] > 0:
                    idx.append(self.irhat[b])
                    val.append(self.miss_bits[b, u] / self.r_scale)
            if not idx:
                continue
            if self.scheme == "mmf":
                cons.append(linear_fn(n, idx + [self.iv], val + [-1.0], 0.0,
                                      name=f"lat_v[{u}]"))
            else:
                cons.append(linear_fn(n, idx, val, -sc.deadline,
                                      name=f"deadline[{u}]"))
            for i, v in zip(idx, val):
                obj_idx.append(i)
                obj_val.append(sc.weights[u] * v)

        if self.scheme == "mmf":
            objective = linear_fn(n, [self.iv], [1.0], name="v")
        else:
            objective = linear_fn(n, obj_idx, obj_val, name="weighted_latency")

        # power budgets over the gamma-weighted slots
        for b in range(sc.n_bs):
            ks = [k for k, (i, _, _) in enumerate(self.slots.tolist()) if i == b]
            if ks:
                cons.append(linear_fn(
                    n, self.iq[ks],
                    [self.gamma_a[tuple(self.slots[k])] for k in ks],
                    -sc.p_max_bs[b] / self.p_scale, name=f"p_bs[{b}]"))
        if len(self.bh_slots):
            cons.append(linear_fn(
                n, self.iqb,
                [self.gamma_b[tuple(s)] for s in self.bh_slots.tolist()],
                -sc.p_max_dc / self.p_scale, name="p_dc"))

        lower = np.zeros(n)
        upper = np.full(n, np.inf)
        if self.iv is not None:
            upper[self.iv] = sc.deadline
        return ConvexProgram(n=n, objective=objective, constraints=cons,
                             lower=lower, upper=upper)

    def start_point(self, anchor: Allocation, margin: float = 1e-3) -> np.ndarray:
        """Strictly feasible start derived from a feasible anchor. The margin
        keeps slacks away from the barrier walls; callers shrink it when the
        anchor is tight. Powers inherited from a previous solve may sit at
        numerical zero, which wrecks the Newton conditioning, so they are
        floored in proportion to the margin."""
        x = np.zeros(self.n)
        q = self.pack_powers(anchor) * (1.0 - 0.01 * margin)
        floor = 1e-4 * margin
        nq = len(self.iq) + len(self.iqb)
        q[:nq] = np.maximum(q[:nq], floor)
        x[:len(q)] = q[:len(q)]
        sr = self.surrogate_rates(x, anchor)  # surrogate as the constraints see it
        for (b, u) in self.pairs:
            rate = max(sr[("a", b, u)], 1e-12)
            x[self.ir[(b, u)]] = rate * (1.0 - margin)
            x[self.it[(b, u)]] = (1.0 + margin) / x[self.ir[(b, u)]]
        worst = 0.0
        for b in self.bh_active:
            rate = max(sr[("b", b)], 1e-12)
            x[self.irb[b]] = rate * (1.0 - margin)
            x[self.irhat[b]] = (1.0 + margin) / x[self.irb[b]]
        for u in range(self.sc.num_users):
            t_terms = sum(x[self.it[(b, uu)]] * self.mean_bits[u] / self.r_scale
                          + (x[self.irhat[b]] * self.miss_bits[b, u] / self.r_scale
                             if self.miss_bits[b, u] > 0 else 0.0)
                          for (b, uu) in self.pairs if uu == u)
            worst = max(worst, t_terms)
        if self.iv is not None:
            x[self.iv] = min(worst * (1.0 + margin) + 1e-12,
                             0.5 * (worst + self.sc.deadline),
                             self.sc.deadline * (1.0 - 1e-12))
        return x

    def surrogate_rates(self, x: np.ndarray, anchor: Allocation) -> dict:
        """Surrogate rate values at x (scaled), per pair and per backhaul BS."""
        q_anchor = self.pack_powers(anchor)
        out = {}
        for (b, u), rw in self.pair_rows.items():
            cols_q = self.iq[rw["cols"]]
            if rw["A"].shape[0] == 0:
                out[("a", b, u)] = 0.0
                continue
            inr0 = rw["A_int"] @ q_anchor[cols_q] + 1.0
            f = rw["w"] @ np.log(rw["A"] @ x[cols_q] + 1.0)
            g_lin = rw["w"] @ (np.log(inr0)
                               + (rw["A_int"] @ (x[cols_q] - q_anchor[cols_q])) / inr0)
            out[("a", b, u)] = float(f - g_lin)
        for b in self.bh_active:
            rw = self.bh_rows[b]
            out[("b", b)] = float(rw["w"] @ np.log(rw["A"] @ x[rw["cols"]] + 1.0)) \
                if rw["A"].shape[0] else 0.0
        return out

    def tightened_epigraph(self, x: np.ndarray, anchor: Allocation
                           ) -> tuple[EpigraphVars, float, np.ndarray]:
        """Exact epigraph values at x: reciprocal pairs set to equality.

        Returns the report, the surrogate objective (seconds), and per-user
        surrogate latencies.
        """
        sr = self.surrogate_rates(x, anchor)
        sc = self.sc
        acc, bh = {}, {}
        lat = np.zeros(sc.num_users)
        for (b, u) in self.pairs:
            r = max(sr[("a", b, u)], 1e-300) * self.r_scale
            acc[(b, u)] = (r, 1.0 / r)
            lat[u] += self.mean_bits[u] / r
        for b in self.bh_active:
            r = max(sr[("b", b)], 1e-300) * self.r_scale
            bh[b] = (r, 1.0 / r)
            for (bb, u) in self.pairs:
                if bb == b and self.miss_bits[b, u] > 0:
                    lat[u] += self.miss_bits[b, u] / r
        if self.scheme == "mmf":
            obj = float(lat.max()) if lat.size else 0.0
            v = obj
        else:
            obj = float(sc.weights @ lat)
            v = None
        return EpigraphVars(access=acc, backhaul=bh, v=v), obj, lat


def build_power_subproblem(ctx: EvalContext, alloc_prev: Allocation, scheme: str,
                           phase: str) -> ConvexProgram:
    """The convex power subproblem anchored at `alloc_prev` (epigraph form,
    linearized rates). Variable blocks are listed in ``blocks``."""
    model = _PowerModel(ctx, alloc_prev, phase, scheme)
    prog = model.build(alloc_prev)
    prog.blocks = {"p_access_slots": model.iq, "p_backhaul_slots": model.iqb,
                   "rate_access": np.array(sorted(model.ir.values())),
                   "recip_access": np.array(sorted(model.it.values())),
                   "rate_backhaul": np.array(sorted(model.irb.values())),
                   "recip_backhaul": np.array(sorted(model.irhat.values())),
                   "v": np.array([model.iv] if model.iv is not None else [])}
    prog._model = model
    return prog


def _true_objective(alloc: Allocation, ctx: EvalContext, scheme: str,
                    phase: str) -> float:
    return latency_mod.objective(alloc, ctx, scheme, phase)


def _pick_start(model, prog: ConvexProgram, anchor: Allocation) -> np.ndarray:
    """Largest wall margin that keeps the anchor-derived start feasible."""
    for margin in (3e-2, 1e-3, 1e-5, 1e-8):
        x = model.start_point(anchor, margin)
        if _strictly_feasible(prog, x):
            return x
    return model.start_point(anchor, 1e-9)  # phase-I handles the rest


def sca_power(ctx: EvalContext, alloc0: Allocation, scheme: str, phase: str,
              tol: float = DEFAULT_SCA_TOL, max_iter: int = DEFAULT_SCA_ITERS,
              inner_tol: float = DEFAULT_INNER_TOL,
              diag: list | None = None) -> ScaResult:
    """Iterate: linearize at the previous powers, solve, accept while the true
    objective does not increase. Every accepted iterate is feasible for the
    untransformed problem; the returned trace is non-increasing."""
    model = _PowerModel(ctx, alloc0, phase, scheme)
    current = alloc0.copy()
    obj = _true_objective(current, ctx, scheme, phase)
    trace = [obj]
    epi = None
    sur_obj = np.nan
    status = "converged"
    for it in range(max_iter):
        prog = model.build(current)
        # the anchor's powers carry the warm information; the auxiliaries are
        # re-centered analytically (warm barrier points hug the walls)
        res = solve_dcp(prog, start=_pick_start(model, prog, current),
                        tol=inner_tol)
        if res.status == "infeasible":
            status = "inner-infeasible"
            log.warning("power SCA iteration %d: inner solver infeasible", it)
            break
        cand = model.unpack(res.x, current)
        cand_obj = _true_objective(cand, ctx, scheme, phase)
        if diag is not None:
            diag.append(("sca_power", it, cand_obj, res.kkt_residual, res.status))
        if cand_obj > obj * (1.0 + ACCEPT_SLACK) + 1e-15:
            status = "converged" if cand_obj - obj <= tol * max(abs(obj), 1e-12) \
                else "no-descent"
            break
        epi, sur_obj, _ = model.tightened_epigraph(res.x, current)
        rel_change = abs(obj - cand_obj) / max(abs(obj), 1e-12)
        current, obj = cand, cand_obj
        trace.append(obj)
        if rel_change <= tol:
            break
    return ScaResult(alloc=current, trace=trace, epigraph=epi, status=status,
                     surrogate_objective=sur_obj)


class _GammaModel:
    """Relaxed subcarrier subproblem: power-sharing rate form in the shares,
    exact at binary points, linearized interference at the anchor."""

    def __init__(self, ctx: EvalContext, alloc: Allocation, phase: str,
                 scheme: str):
        sc = ctx.scenario
        self.ctx, self.phase, self.scheme, self.sc = ctx, phase, scheme, sc
        self.r_scale = sc.bandwidth_sub
        self.demand = _demand(ctx, phase)
        self.pairs = _served_pairs(alloc)
        self.p_access = np.array(alloc.p_access)
        self.p_backhaul = np.array(alloc.p_backhaul)

        self.mean_bits = self.demand @ sc.content_sizes
        miss = self.demand[None, :, :] * (1.0 - alloc.placement[:, None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            per_beta = np.where(miss > 0, sc.content_sizes[None, None, :]
                                / np.maximum(alloc.beta[:, None, :], 1e-300), 0.0)
        self.miss_bits = np.einsum("buc,buc->bu", miss, per_beta)
        if np.any(~np.isfinite(self.miss_bits)):
            raise latency_mod.InfeasibleAllocationError(
                "un-cached demand with zero backhaul share")
        self.bh_active = sorted({b for (b, u) in self.pairs
                                 if self.miss_bits[b, u] > 0})

        # gamma variables: every (pair, subcarrier); backhaul: active BSs x n
        self.g_index = {}
        idx = 0
        for (b, u) in self.pairs:
            for n in range(sc.n_access):
                self.g_index[(b, u, n)] = idx
                idx += 1
        self.gb_index = {}
        for b in self.bh_active:
            for n in range(sc.n_backhaul):
                self.gb_index[(b, n)] = idx
                idx += 1
        self.ir = {p: idx + i for i, p in enumerate(self.pairs)}
        idx += len(self.pairs)
        self.it = {p: idx + i for i, p in enumerate(self.pairs)}
        idx += len(self.pairs)
        self.irb = {b: idx + i for i, b in enumerate(self.bh_active)}
        idx += len(self.bh_active)
        self.irhat = {b: idx + i for i, b in enumerate(self.bh_active)}
        idx += len(self.bh_active)
        self.iv = idx if scheme == "mmf" else None
        self.n = idx + (1 if scheme == "mmf" else 0)

        self._build_coefficients(ctx)

    def _build_coefficients(self, ctx: EvalContext):
        sc = self.sc
        sigma = sc.noise_power_sub
        S = len(ctx.draws)
        self.S = S
        self.pair_rows = {}
        for (b, u) in self.pairs:
            cols = [self.g_index[(b, u, n)] for n in range(sc.n_access)]
            intf_cols = {}
            for (i, j) in self.pairs:
                if i == b or j == u:
                    continue
                for n in range(sc.n_access):
                    intf_cols.setdefault(n, []).append((i, j))
            all_cols = sorted(set(cols) | {
                self.g_index[(i, j, n)] for n, lst in intf_cols.items()
                for (i, j) in lst})
            colpos = {c: k for k, c in enumerate(all_cols)}
            rows_A, rows_int, w = [], [], []
            for n in range(sc.n_access):
                for d in ctx.draws:
                    a = np.zeros(len(all_cols))
                    ai = np.zeros(len(all_cols))
                    for (i, j) in intf_cols.get(n, []):
                        coef = self.p_access[i, j, n] * d.h_access[i, u, n] / sigma
                        a[colpos[self.g_index[(i, j, n)]]] += coef
                        ai[colpos[self.g_index[(i, j, n)]]] += coef
                    a[colpos[self.g_index[(b, u, n)]]] += \
                        self.p_access[b, u, n] * d.h_access[b, u, n] / sigma
                    rows_A.append(a)
                    rows_int.append(ai)
                    w.append(sc.bandwidth_sub / (S * self.r_scale * LN2))
            self.pair_rows[(b, u)] = dict(cols=np.array(all_cols, dtype=int),
                                          A=np.array(rows_A),
                                          A_int=np.array(rows_int),
                                          w=np.array(w))
        # backhaul rate is linear in its shares
        sigma_bh = sc.backhaul_noise_power_sub
        self.bh_coef = {}
        for b in self.bh_active:
            coefs = np.zeros(sc.n_backhaul)
            for n in range(sc.n_backhaul):
                vals = [sc.bandwidth_sub * np.log2(
                    1.0 + self.p_backhaul[b, n] * d.h_backhaul[b, n] / sigma_bh)
                    for d in ctx.draws]
                coefs[n] = float(np.mean(vals)) / self.r_scale
            self.bh_coef[b] = coefs

    def pack_gamma(self, alloc: Allocation) -> np.ndarray:
        x = np.zeros(self.n)
        for (b, u, n), k in self.g_index.items():
            x[k] = alloc.gamma_access[b, u, n]
        for (b, n), k in self.gb_index.items():
            x[k] = alloc.gamma_backhaul[b, n]
        return x

    def unpack(self, x: np.ndarray, template: Allocation) -> Allocation:
        out = template.copy()
        out.gamma_access = np.zeros_like(out.gamma_access)
        out.gamma_backhaul = np.zeros_like(out.gamma_backhaul)
        for (b, u, n), k in self.g_index.items():
            out.gamma_access[b, u, n] = min(max(x[k], 0.0), 1.0)
        for (b, n), k in self.gb_index.items():
            out.gamma_backhaul[b, n] = min(max(x[k], 0.0), 1.0)
        out.relaxed = True
        return out

    def build(self, anchor: Allocation) -> ConvexProgram:
        sc = self.sc
        n = self.n
        g_anchor = self.pack_gamma(anchor)
        cons: list[ScalarFn] = []
        for (b, u), rw in self.pair_rows.items():
            cols = rw["cols"]
            inr = rw["A_int"] @ g_anchor[cols] + 1.0
            lin_coef = (rw["w"] / inr) @ rw["A_int"]
            const = float(rw["w"] @ (np.log(inr)
                                     - (rw["A_int"] @ g_anchor[cols]) / inr))
            cons.append(ScalarFn(
                n=n, lin_idx=np.concatenate([[self.ir[(b, u)]], cols]),
                lin_val=np.concatenate([[1.0], lin_coef]), const=const,
                groups=[LogGroup(cols=cols, A=rw["A"],
                                 offs=np.ones(rw["A"].shape[0]), wts=rw["w"])],
                name=f"rate_link[{b},{u}]"))
            cons.append(ScalarFn(
                n=n, groups=[LogGroup(cols=[self.ir[(b, u)], self.it[(b, u)]],
                                      A=np.eye(2), offs=np.zeros(2),
                                      wts=np.ones(2))],
                name=f"recip[{b},{u}]"))
        for b in self.bh_active:
            idx = [self.gb_index[(b, n)] for n in range(sc.n_backhaul)]
            cons.append(ScalarFn(
                n=n, lin_idx=np.array([self.irb[b]] + idx),
                lin_val=np.concatenate([[1.0], -self.bh_coef[b]]),
                name=f"bh_link[{b}]"))
            cons.append(ScalarFn(
                n=n, groups=[LogGroup(cols=[self.irb[b], self.irhat[b]],
                                      A=np.eye(2), offs=np.zeros(2),
                                      wts=np.ones(2))],
                name=f"bh_recip[{b}]"))

        for u in range(sc.num_users):
            ids = [self.ir[(b, uu)] for (b, uu) in self.pairs if uu == u]
            if ids:
                cons.append(linear_fn(n, ids, [-1.0] * len(ids),
                                      sc.min_rate[u] / self.r_scale,
                                      name=f"min_rate[{u}]"))

        obj_idx, obj_val = [], []
        for u in range(sc.num_users):
            idx, val = [], []
            for (b, uu) in self.pairs:
                if uu != u:
                    continue
                idx.append(self.it[(b, u)])
                val.append(self.mean_bits[u] / self.r_scale)
                if self.miss_bits[b, u] > 0:
                    idx.append(self.irhat[b])
                    val.append(self.miss_bits[b, u] / self.r_scale)
            if not idx:
                continue
            if self.scheme == "mmf":
                cons.append(linear_fn(n, idx + [self.iv], val + [-1.0], 0.0,
                                      name=f"lat_v[{u}]"))
            else:
                cons.append(linear_fn(n, idx, val, -sc.deadline,
                                      name=f"deadline[{u}]"))
            for i, v in zip(idx, val):
                obj_idx.append(i)
                obj_val.append(sc.weights[u] * v)
        objective = linear_fn(n, [self.iv], [1.0], name="v") if self.scheme == "mmf" \
            else linear_fn(n, obj_idx, obj_val, name="weighted_latency")

        # OFDMA exclusivity
        for b in range(sc.n_bs):
            for nn in range(sc.n_access):
                ids = [self.g_index[(bb, u, nn)] for (bb, u) in self.pairs if bb == b]
                if ids:
                    cons.append(linear_fn(n, ids, [1.0] * len(ids), -1.0,
                                          name=f"ofdma_a[{b},{nn}]"))
        for nn in range(sc.n_backhaul):
            ids = [self.gb_index[(b, nn)] for b in self.bh_active]
            if ids:
                cons.append(linear_fn(n, ids, [1.0] * len(ids), -1.0,
                                      name=f"ofdma_b[{nn}]"))

        # power budgets with fixed powers
        for b in range(sc.n_bs):
            ids, coefs = [], []
            for (bb, u) in self.pairs:
                if bb != b:
                    continue
                for nn in range(sc.n_access):
                    ids.append(self.g_index[(b, u, nn)])
                    coefs.append(self.p_access[b, u, nn])
            if ids:
                cons.append(linear_fn(n, ids, coefs, -sc.p_max_bs[b],
                                      name=f"p_bs[{b}]"))
        ids = list(self.gb_index.values())
        if ids:
            coefs = [self.p_backhaul[b, nn] for (b, nn) in self.gb_index]
            cons.append(linear_fn(n, ids, coefs, -sc.p_max_dc, name="p_dc"))

        n_gamma = len(self.g_index) + len(self.gb_index)
        lower = np.zeros(n)
        upper = np.concatenate([np.ones(n_gamma), np.full(n - n_gamma, np.inf)])
        if self.iv is not None:
            upper[self.iv] = sc.deadline
        return ConvexProgram(n=n, objective=objective, constraints=cons,
                             lower=lower, upper=upper)

    def surrogate_rates(self, x: np.ndarray, anchor: Allocation) -> dict:
        """Anchor-linearized surrogate rate values at x (scaled)."""
        g0 = self.pack_gamma(anchor)
        out = {}
        for (b, u), rw in self.pair_rows.items():
            cols = rw["cols"]
            inr0 = rw["A_int"] @ g0[cols] + 1.0
            f = rw["w"] @ np.log(rw["A"] @ x[cols] + 1.0)
            g_lin = rw["w"] @ (np.log(inr0)
                               + (rw["A_int"] @ (x[cols] - g0[cols])) / inr0)
            out[("a", b, u)] = float(f - g_lin)
        for b in self.bh_active:
            idx = [self.gb_index[(b, nn)] for nn in range(self.sc.n_backhaul)]
            out[("b", b)] = float(self.bh_coef[b] @ x[idx])
        return out

    def start_point(self, anchor: Allocation, margin: float = 1e-3) -> np.ndarray:
        """Blend the (typically binary) anchor strictly inside the box."""
        x = np.zeros(self.n)
        g = self.pack_gamma(anchor)
        n_gamma = len(self.g_index) + len(self.gb_index)
        blend = max(2e-4, 0.2 * margin)
        x[:n_gamma] = g[:n_gamma] * (1.0 - 2.0 * blend) + blend * 1e-2
        sr = self.surrogate_rates(x, anchor)
        for (b, u) in self.pairs:
            rate = max(sr[("a", b, u)], 1e-12)
            x[self.ir[(b, u)]] = rate * (1.0 - margin)
            x[self.it[(b, u)]] = (1.0 + margin) / x[self.ir[(b, u)]]
        for b in self.bh_active:
            rate = max(sr[("b", b)], 1e-12)
            x[self.irb[b]] = rate * (1.0 - margin)
            x[self.irhat[b]] = (1.0 + margin) / x[self.irb[b]]
        worst = 0.0
        for u in range(self.sc.num_users):
            t_terms = sum(x[self.it[(b, uu)]] * self.mean_bits[u] / self.r_scale
                          + (x[self.irhat[b]] * self.miss_bits[b, u] / self.r_scale
                             if self.miss_bits[b, u] > 0 else 0.0)
                          for (b, uu) in self.pairs if uu == u)
            worst = max(worst, t_terms)
        if self.iv is not None:
            x[self.iv] = min(worst * (1.0 + margin) + 1e-12,
                             0.5 * (worst + self.sc.deadline),
                             self.sc.deadline * (1.0 - 1e-12))
        return x

    def relaxed_objective(self, x: np.ndarray, anchor: Allocation) -> float:
        """Tightened surrogate objective at a relaxed point, seconds."""
        sc = self.sc
        sr = self.surrogate_rates(x, anchor)
        lat = np.zeros(sc.num_users)
        for (b, u) in self.pairs:
            r = max(sr[("a", b, u)], 1e-300) * self.r_scale
            lat[u] += self.mean_bits[u] / r
            if self.miss_bits[b, u] > 0:
                rb = max(sr[("b", b)], 1e-300) * self.r_scale
                lat[u] += self.miss_bits[b, u] / rb
        if self.scheme == "mmf":
            return float(lat.max()) if lat.size else 0.0
        return float(sc.weights @ lat)


def build_subcarrier_subproblem(ctx: EvalContext, alloc_prev: Allocation,
                                scheme: str, phase: str) -> ConvexProgram:
    """The relaxed subcarrier subproblem anchored at `alloc_prev`."""
    model = _GammaModel(ctx, alloc_prev, phase, scheme)
    prog = model.build(alloc_prev)
    prog._model = model
    return prog


def sca_subcarrier(ctx: EvalContext, alloc0: Allocation, scheme: str, phase: str,
                   tol: float = DEFAULT_SCA_TOL, max_iter: int = DEFAULT_SCA_ITERS,
                   inner_tol: float = DEFAULT_INNER_TOL, strict: bool = True,
                   diag: list | None = None) -> ScaResult:
    """SCA over relaxed shares followed by rounding with repair.

    With ``strict`` the anchor must be feasible and the result never worsens
    the true objective (otherwise the incoming shares are kept). The
    non-strict mode is used once at initialization, where the anchor is a
    heuristic assignment that need not meet the minimum rates yet.
    """
    model = _GammaModel(ctx, alloc0, phase, scheme)
    current = alloc0.copy()
    have_true0 = strict
    obj = _true_objective(current, ctx, scheme, phase) if strict else np.inf
    relaxed_trace = []
    status = "converged"
    x_best = None
    anchor = current
    prev_rel = np.inf
    for it in range(max_iter):
        prog = model.build(anchor)
        res = solve_dcp(prog, start=_pick_start(model, prog, anchor),
                        tol=inner_tol)
        if res.status == "infeasible":
            status = "inner-infeasible"
            if x_best is None and strict:
                return ScaResult(alloc=current, trace=[obj], epigraph=None,
                                 status=status)
            break
        rel_obj = model.relaxed_objective(res.x, anchor)
        if relaxed_trace and rel_obj > relaxed_trace[-1] * (1 + ACCEPT_SLACK) + 1e-15:
            if rel_obj - relaxed_trace[-1] <= tol * max(abs(relaxed_trace[-1]), 1e-12):
                status = "converged"  # solver jitter at the fixpoint
            else:
                status = "no-descent"
            break
        relaxed_trace.append(rel_obj)
        x_best = res.x
        anchor = model.unpack(res.x, current)
        if prev_rel - rel_obj <= tol * max(abs(rel_obj), 1e-12):
            break
        prev_rel = rel_obj
    if x_best is None:
        return ScaResult(alloc=current, trace=[obj] if strict else [],
                         epigraph=None, status=status)

    relaxed_alloc = model.unpack(x_best, current)
    try:
        rounded, report = relax_and_round(relaxed_alloc, ctx, phase)
    except InfeasibleRoundingError as exc:
        if strict:
            log.warning("rounding failed, keeping previous shares: %s", exc)
            return ScaResult(alloc=current, trace=[obj], epigraph=None,
                             status="rounding-failed")
        raise
    verdict = latency_mod.check_feasibility(rounded, ctx, phase, scheme)
    if not verdict.feasible:
        if strict:
            return ScaResult(alloc=current, trace=[obj], epigraph=None,
                             status="rounded-infeasible")
        raise InfeasibleRoundingError(
            f"initial subcarrier assignment infeasible: {verdict.violations[:3]}")
    new_obj = _true_objective(rounded, ctx, scheme, phase)
    if have_true0 and new_obj > obj * (1 + ACCEPT_SLACK) + 1e-15:
        return ScaResult(alloc=current, trace=[obj], epigraph=None,
                         status="rounding-worse")
    trace = ([obj] if have_true0 else []) + [new_obj]
    return ScaResult(alloc=rounded, trace=trace, epigraph=None, status=status,
                     surrogate_objective=relaxed_trace[-1] if relaxed_trace else np.nan)
