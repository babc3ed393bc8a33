"""Command-line interface: single-instance solves, experiment sweeps,
complexity estimates, and the random-instance invariant suite.

Exit codes: 0 success, 1 infeasible instance, 2 bad input.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import ao, complexity, harness, latency as latency_mod, netmodel, rates
from .latency import CSV_HEADER, EvalContext

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INFEASIBLE, EXIT_BAD_INPUT = 0, 1, 2


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hetcache",
                                description="cache placement and delivery-phase "
                                            "resource allocation")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one instance")
    s.add_argument("--config", help="scenario JSON (defaults otherwise)")
    s.add_argument("--scheme", choices=["pf", "mmf"], default="pf")
    s.add_argument("--phase", choices=["cp", "dp"], default="cp")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="directory for the latency CSV")

    e = sub.add_parser("experiment", help="run an experiment spec")
    e.add_argument("--spec", help="experiment spec JSON (bundled desk spec "
                                  "otherwise)")
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, help="override the master seed")

    c = sub.add_parser("complexity", help="constraint counts and IPM estimate")
    c.add_argument("--problem", choices=list(complexity.PROBLEMS), default="cp-pf")
    c.add_argument("--num-fbs", type=int, default=15)
    c.add_argument("--num-users", type=int, default=85)
    c.add_argument("--num-contents", type=int, default=1000)
    c.add_argument("--n-access", type=int, default=64)
    c.add_argument("--n-backhaul", type=int, default=64)
    c.add_argument("--t0", type=float, default=1.0)
    c.add_argument("--rho", type=float, default=1e-3)
    c.add_argument("--xi", type=float, default=10.0)

    v = sub.add_parser("validate", help="invariant suite on random instances")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--instances", type=int, default=5)
    return p


def _cmd_solve(args) -> int:
    try:
        if args.config:
            scenario = netmodel.scenario_from_config(args.config)
        else:
            params = dict(harness.DESK_SCENARIO)
            scenario = netmodel.build_scenario(params, seed=args.seed)
    except (OSError, json.JSONDecodeError, netmodel.ScenarioError) as exc:
        print(f"error: bad scenario config: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 5]))
    draws = netmodel.sample_draws(scenario, rng, scenario.mc_samples)
    if args.phase == "cp":
        ctx = EvalContext(scenario=scenario, draws=draws)
        rho = None
    else:
        from . import baselines
        draw = netmodel.sample_channel_draw(scenario, rng)
        requests = netmodel.sample_requests(scenario, rng)
        ctx = EvalContext(scenario=scenario, draws=(draw,), requests=requests)
        rho = baselines.cmp_placement(scenario)
    try:
        res = ao.solve(ctx, args.scheme, args.phase, rho=rho)
    except ao.InfeasibleScenarioError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(f"status={res.status} objective_s={res.objective:.6g} "
          f"outer_iterations={res.iterations}")
    for i, v in enumerate(res.trace):
        print(f"  outer {i}: {v:.6g}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "latency.csv")
        with open(path, "w") as fh:
            fh.write(CSV_HEADER + "\n")
            for row in res.report.to_csv_rows(f"solve-{args.seed}"):
                fh.write(row + "\n")
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_experiment(args) -> int:
    try:
        if args.spec:
            spec = harness.ExperimentSpec.from_file(args.spec)
        else:
            spec = harness.ExperimentSpec.desk()
        if args.seed is not None:
            spec.master_seed = args.seed
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        print(f"error: bad experiment spec: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    records = harness.run_experiment(spec, out_dir=args.out)
    failed = sum(r.failed for r in records)
    print(f"{len(records)} runs ({failed} failed) -> {args.out}/runs.csv")
    print(harness.summarize_csv(records, spec), end="")
    return EXIT_OK if failed < len(records) else EXIT_INFEASIBLE


def _cmd_complexity(args) -> int:
    try:
        print(f"problem {args.problem} (B={args.num_fbs}, U={args.num_users}, "
              f"C={args.num_contents}, N_Ac={args.n_access}, N_BH={args.n_backhaul})")
        for step, label in (("t1", "placement/shares"), ("t2", "powers"),
                            ("t3", "subcarriers")):
            count = complexity.constraint_count(
                f"{args.problem}-{step}", args.num_fbs, args.num_users,
                args.num_contents, args.n_access, args.n_backhaul)
            est = complexity.ipm_complexity(count, args.t0, args.rho, args.xi)
            print(f"  {step} ({label}): constraints={count} ipm_iterations={est:.3f}")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    return EXIT_OK


def _cmd_validate(args) -> int:
    """Spot-check the core invariants on random tiny instances."""
    from . import baselines
    rng = np.random.default_rng(args.seed)
    bad = 0
    for k in range(args.instances):
        seed = int(rng.integers(2**31))
        params = dict(harness.DESK_SCENARIO)
        params.update(num_fbs=2, users_per_fbs=1, users_macro=1, num_contents=5,
                      n_access=3, n_backhaul=3, mc_samples=4)
        sc = netmodel.build_scenario(params, seed=seed)
        inst_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        draws = netmodel.sample_draws(sc, inst_rng, sc.mc_samples)
        ctx = EvalContext(scenario=sc, draws=draws)
        theta = baselines.init_association_cp(sc)
        rho = baselines.cmp_placement(sc)
        p_acc, p_bh = baselines.init_powers(sc)
        g_acc, g_bh = baselines.init_gamma_round_robin(sc, theta)
        alloc = rates.Allocation(placement=rho, assoc=theta, p_access=p_acc,
                                 p_backhaul=p_bh, gamma_access=g_acc,
                                 gamma_backhaul=g_bh,
                                 beta=baselines.init_beta_cp(sc, rho))
        checks = []
        d = draws[0]
        f, g = rates.dc_split(alloc, d, sc, 0, 0, 0)
        r = rates.access_rate_subcarrier(alloc, d, sc, 0, 0, 0)
        checks.append(("dc-split", abs((f - g) - r) <= 1e-9 * max(abs(r), 1.0)))
        u = 0
        b = int(np.flatnonzero(theta[:, u])[0])
        sur = rates.approx_access_rate(alloc, alloc, draws, sc, b, u)
        erg = rates.ergodic_rates(alloc, draws, sc)
        checks.append(("surrogate-anchor",
                       abs(sur - erg.access[b, u]) <= 1e-9 * max(erg.access[b, u], 1.0)))
        verdict = latency_mod.check_feasibility(alloc, ctx, "cp")
        checks.append(("beta-simplex", verdict.slacks["beta_simplex"] >= -1e-12))
        checks.append(("placement-storage", verdict.slacks["storage"] >= -1e-12))
        for name, ok in checks:
            if not ok:
                bad += 1
                print(f"instance {k} ({seed}): FAIL {name}")
    print(f"validate: {args.instances} instances, {bad} failures")
    return EXIT_OK if bad == 0 else EXIT_INFEASIBLE


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "solve":
        return _cmd_solve(args)
    if args.command == "experiment":
        return _cmd_experiment(args)
    if args.command == "complexity":
        return _cmd_complexity(args)
    if args.command == "validate":
        return _cmd_validate(args)
    return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
