"""Monte Carlo experiment driver: outer draws refresh the caching-phase
parameters (topology, sizes, CDI), inner periods redraw requests and CSI and
run the matching delivery solve. Seeds are hierarchical so any subset of runs
reproduces independently; records are emitted in a deterministic order so
parallel execution never changes the output bytes.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import ao, baselines, latency as latency_mod, netmodel
from .latency import EvalContext
from .netmodel import Scenario

log = logging.getLogger(__name__)

STRATEGIES = ("ftacps-pf", "ftacps-mmf", "cmp", "urc", "prc", "nc",
              "fixed-theta-pf", "fixed-theta-mmf")
SWEEP_AXES = ("none", "cache_size_pct", "zipf", "users_per_fbs")

#: desk-scale defaults: a full experiment runs in minutes
DESK_SCENARIO = {
    "num_fbs": 3, "users_per_fbs": 2, "users_macro": 2,
    "num_contents": 20, "n_access": 8, "n_backhaul": 8,
    "mc_samples": 50, "deadline": 600.0, "min_rate": 1e5,
    "dc_distance": 500.0, "is_psd_dbm_hz": -160.0,
    "cache_pct_fbs": 0.06, "cache_pct_mbs": 0.12,
    "size_mu": 0.0, "size_sigma2": 0.8,
}

RUNS_HEADER = ("outer,period,strategy,sweep_axis,sweep_value,seed_outer,"
               "seed_period,failed,total_latency_s,max_latency_s,"
               "mean_access_s,mean_backhaul_s,cp_objective_s,cp_iters,"
               "dp_iters,user_access_s,user_backhaul_s,user_total_s")

SUMMARY_HEADER = ("sweep_axis,sweep_value,strategy,n_runs,n_failed,"
                  "pooled_mean_total_s,pooled_se_total_s,outer_mean_total_s,"
                  "pooled_mean_max_s,pooled_mean_backhaul_s,n_outer,n_periods")


@dataclass
class ExperimentSpec:
    scenario: dict = field(default_factory=dict)
    sweep_axis: str = "none"
    sweep_values: list = field(default_factory=lambda: [None])
    strategies: list = field(default_factory=lambda: ["cmp", "nc"])
    n_outer: int = 2
    n_periods: int = 3
    master_seed: int = 0
    solver: dict = field(default_factory=dict)   # AOConfig overrides

    def __post_init__(self):
        if not self.strategies:
            raise ValueError("experiment needs at least one strategy")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")
        if self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.sweep_axis!r}")
        if self.n_outer < 1 or self.n_periods < 1:
            raise ValueError("counts must be positive")
        if self.sweep_axis == "none":
            self.sweep_values = [None]

    @staticmethod
    def from_file(path: str) -> "ExperimentSpec":
        with open(path) as fh:
            return ExperimentSpec(**json.load(fh))

    @staticmethod
    def desk(**over) -> "ExperimentSpec":
        spec = dict(scenario=dict(DESK_SCENARIO), strategies=["nc", "cmp"],
                    n_outer=2, n_periods=3, master_seed=7)
        spec.update(over)
        return ExperimentSpec(**spec)


@dataclass
class RunRecord:
    outer: int
    period: int
    strategy: str
    sweep_axis: str
    sweep_value: object
    seed_outer: int
    seed_period: int
    failed: bool
    total_latency_s: float
    max_latency_s: float
    mean_access_s: float
    mean_backhaul_s: float
    cp_objective_s: float
    cp_iters: int
    dp_iters: int
    per_user_access: tuple
    per_user_backhaul: tuple
    wall_time_s: float = 0.0  # diagnostics only, never written to runs.csv

    def csv_row(self) -> str:
        def f(x):
            return f"{x:.12g}"
        users_a = "|".join(f(v) for v in self.per_user_access)
        users_b = "|".join(f(v) for v in self.per_user_backhaul)
        users_t = "|".join(f(a + b) for a, b in zip(self.per_user_access,
                                                    self.per_user_backhaul))
        sweep = "" if self.sweep_value is None else f"{self.sweep_value:g}"
        return ",".join([
            str(self.outer), str(self.period), self.strategy, self.sweep_axis,
            sweep, str(self.seed_outer), str(self.seed_period),
            "1" if self.failed else "0", f(self.total_latency_s),
            f(self.max_latency_s), f(self.mean_access_s),
            f(self.mean_backhaul_s), f(self.cp_objective_s),
            str(self.cp_iters), str(self.dp_iters), users_a, users_b, users_t])


def _scenario_params(spec: ExperimentSpec, sweep_value) -> dict:
    params = dict(DESK_SCENARIO)
    params.update(spec.scenario)
    if spec.sweep_axis == "cache_size_pct":
        params["cache_pct_fbs"] = float(sweep_value)
    elif spec.sweep_axis == "zipf":
        params["zipf"] = float(sweep_value)
    elif spec.sweep_axis == "users_per_fbs":
        params["users_per_fbs"] = int(sweep_value)
    return params


def _ao_config(spec: ExperimentSpec, scheme: str, phase: str,
               pin_theta: bool) -> ao.AOConfig:
    defaults = dict(tol_outer=1e-3, max_outer=6, sca_tol=1e-3, sca_max_iter=8,
                    inner_tol=1e-6, midcp_gap=5e-3, midcp_node_budget=300)
    defaults.update(spec.solver)
    return ao.AOConfig(scheme=scheme, phase=phase, pin_theta=pin_theta,
                       **defaults)


def _strategy_plan(strategy: str) -> tuple[str | None, str, bool]:
    """(cp solver scheme or None for heuristic placement, dp scheme, pin_theta)."""
    if strategy == "ftacps-pf":
        return "pf", "pf", False
    if strategy == "ftacps-mmf":
        return "mmf", "mmf", False
    if strategy == "fixed-theta-pf":
        return "pf", "pf", True
    if strategy == "fixed-theta-mmf":
        return "mmf", "mmf", True
    return None, "pf", False  # heuristic placements deliver under PF


def _run_cell(spec: ExperimentSpec, sweep_value, outer: int,
              strategy: str) -> list[RunRecord]:
    """One (sweep point, outer draw, strategy) cell: CP stage + all periods.

    Seeds derive from (master, outer) only, so sweeps and strategies see
    common random numbers.
    """
    began = time.perf_counter()
    seed_outer = int(np.random.default_rng(
        np.random.SeedSequence([spec.master_seed, 1000 + outer])).integers(2**31))
    params = _scenario_params(spec, sweep_value)
    scenario = netmodel.build_scenario(params, seed=seed_outer)
    cp_rng = np.random.default_rng(np.random.SeedSequence(
        [spec.master_seed, outer, 2]))
    draws = netmodel.sample_draws(scenario, cp_rng, scenario.mc_samples)
    cp_ctx = EvalContext(scenario=scenario, draws=draws)

    cp_scheme, dp_scheme, pin_theta = _strategy_plan(strategy)
    cp_obj = float("nan")
    cp_iters = 0
    cp_failed = False
    if cp_scheme is None:
        placement_rng = np.random.default_rng(np.random.SeedSequence(
            [spec.master_seed, outer, 3]))
        rho = baselines.make_placement(strategy, scenario, placement_rng)
    else:
        cfg = _ao_config(spec, cp_scheme, "cp", pin_theta)
        try:
            cp_res = ao.solve(cp_ctx, cp_scheme, "cp", cfg=cfg)
            rho = cp_res.alloc.placement
            cp_obj = cp_res.objective
            cp_iters = cp_res.iterations
        except Exception as exc:  # noqa: BLE001 - a failed cell must not kill the sweep
            log.warning("CP solve failed (outer %d, %s): %s", outer, strategy, exc)
            rho = baselines.cmp_placement(scenario)
            cp_failed = True

    records = []
    for period in range(spec.n_periods):
        seed_period = int(np.random.default_rng(np.random.SeedSequence(
            [spec.master_seed, outer, 10 + period])).integers(2**31))
        rng = np.random.default_rng(np.random.SeedSequence(
            [spec.master_seed, outer, period, 4]))
        draw = netmodel.sample_channel_draw(scenario, rng)
        requests = netmodel.sample_requests(scenario, rng)
        dp_ctx = EvalContext(scenario=scenario, draws=(draw,), requests=requests)
        cfg = _ao_config(spec, dp_scheme, "dp", pin_theta)
        failed = cp_failed
        try:
            dp_res = ao.solve(dp_ctx, dp_scheme, "dp", cfg=cfg, rho=rho)
            rep = dp_res.report
            dp_iters = dp_res.iterations
        except Exception as exc:  # noqa: BLE001
            log.warning("DP solve failed (outer %d period %d, %s): %s",
                        outer, period, strategy, exc)
            failed = True
            rep = None
            dp_iters = 0
        if rep is None:
            rec = RunRecord(outer, period, strategy, spec.sweep_axis, sweep_value,
                            seed_outer, seed_period, True, float("nan"),
                            float("nan"), float("nan"), float("nan"), cp_obj,
                            cp_iters, 0, (), ())
        else:
            rec = RunRecord(
                outer, period, strategy, spec.sweep_axis, sweep_value,
                seed_outer, seed_period, failed,
                float(np.dot(scenario.weights, rep.total_s)),
                rep.max_latency, float(rep.access_s.mean()),
                float(rep.backhaul_s.mean()), cp_obj, cp_iters, dp_iters,
                tuple(rep.access_s), tuple(rep.backhaul_s))
        rec.wall_time_s = time.perf_counter() - began
        records.append(rec)
    return records


def run_experiment(spec: ExperimentSpec, out_dir: str | None = None,
                   threads: int | None = None) -> list[RunRecord]:
    """Execute the full grid and optionally write runs.csv / summary.csv /
    diagnostics.log under `out_dir`. Deterministic for a fixed spec."""
    cells = [(sv, outer, strat) for sv in spec.sweep_values
             for outer in range(spec.n_outer) for strat in spec.strategies]
    if threads is None:
        threads = int(os.environ.get("HETCACHE_THREADS", "1"))
    records: list[RunRecord] = []
    if threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_run_cell, spec, sv, outer, strat)
                       for (sv, outer, strat) in cells]
            for fut in futures:
                records.extend(fut.result())
    else:
        for (sv, outer, strat) in cells:
            records.extend(_run_cell(spec, sv, outer, strat))
    records.sort(key=lambda r: (str(r.sweep_value), r.strategy, r.outer, r.period))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "runs.csv"), "w") as fh:
            fh.write(RUNS_HEADER + "\n")
            for r in records:
                fh.write(r.csv_row() + "\n")
        with open(os.path.join(out_dir, "summary.csv"), "w") as fh:
            fh.write(summarize_csv(records, spec))
        with open(os.path.join(out_dir, "diagnostics.log"), "a") as fh:
            for r in records:
                fh.write(f"{r.sweep_value},{r.strategy},{r.outer},{r.period},"
                         f"wall={r.wall_time_s:.3f}s\n")
    return records


def summarize(records: list[RunRecord], spec: ExperimentSpec) -> list[dict]:
    """Group by (sweep point, strategy): pooled means/SEs plus per-outer means."""
    groups: dict[tuple, list[RunRecord]] = {}
    for r in records:
        groups.setdefault((str(r.sweep_value), r.strategy), []).append(r)
    rows = []
    for (sv, strat) in sorted(groups):
        rs = groups[(sv, strat)]
        ok = [r for r in rs if not r.failed]
        totals = np.array([r.total_latency_s for r in ok])
        outer_means = []
        for outer in sorted({r.outer for r in ok}):
            sub = [r.total_latency_s for r in ok if r.outer == outer]
            if sub:
                outer_means.append(float(np.mean(sub)))
        rows.append(dict(
            sweep_axis=spec.sweep_axis, sweep_value=sv, strategy=strat,
            n_runs=len(rs), n_failed=len(rs) - len(ok),
            pooled_mean_total_s=float(totals.mean()) if totals.size else float("nan"),
            pooled_se_total_s=float(totals.std(ddof=1) / np.sqrt(totals.size))
            if totals.size > 1 else 0.0,
            outer_mean_total_s=float(np.mean(outer_means)) if outer_means
            else float("nan"),
            pooled_mean_max_s=float(np.mean([r.max_latency_s for r in ok]))
            if ok else float("nan"),
            pooled_mean_backhaul_s=float(np.mean([r.mean_backhaul_s for r in ok]))
            if ok else float("nan"),
            n_outer=spec.n_outer, n_periods=spec.n_periods))
    return rows


def summarize_csv(records: list[RunRecord], spec: ExperimentSpec) -> str:
    out = io.StringIO()
    out.write(SUMMARY_HEADER + "\n")
    for row in summarize(records, spec):
        out.write(",".join([
            row["sweep_axis"], str(row["sweep_value"]), row["strategy"],
            str(row["n_runs"]), str(row["n_failed"]),
            f"{row['pooled_mean_total_s']:.12g}",
            f"{row['pooled_se_total_s']:.12g}",
            f"{row['outer_mean_total_s']:.12g}",
            f"{row['pooled_mean_max_s']:.12g}",
            f"{row['pooled_mean_backhaul_s']:.12g}",
            str(row["n_outer"]), str(row["n_periods"])]) + "\n")
    return out.getvalue()


def load_runs_csv(path: str) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(fh))
