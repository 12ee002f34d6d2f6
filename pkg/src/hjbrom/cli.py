"""Command-line interface: offline builds, online queries, experiment tables."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, model, pipeline

logger = logging.getLogger(__name__)


def _load_config(path, benchmark):
    cfg = bench.default_config(benchmark)
    if path:
        overrides = json.loads(Path(path).read_text())
        cfg = pipeline.PipelineConfig.from_dict({**cfg.to_dict(), **overrides})
    return cfg


def _write_csv(path, rows, fieldnames=None):
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    logger.info("wrote %d rows to %s", len(rows), path)


def _cmd_offline(args):
    cfg = _load_config(args.config, args.benchmark)
    case = bench.get_benchmark(args.benchmark, args.resolution)
    bundle = pipeline.offline_build(case, cfg, args.seed)
    pipeline.save_bundle(bundle, args.out)
    print(f"offline bundle written to {args.out}")
    for phase, seconds in bundle.timings.items():
        print(f"  {phase}: {seconds:.2f} s")


def _cmd_online(args):
    bundle = pipeline.load_bundle(args.bundle)
    case = bundle.case
    mu = np.array([float(v) for v in args.mu.split(",")])
    x0s = model.sample_initial(case.ensemble, args.num_ics, args.seed)
    result = pipeline.online_query(bundle, mu, list(x0s), bundle.config)

    lqr_policy = pipeline.lqr_controller(case, mu)
    rows = []
    for i, x0 in enumerate(x0s):
        unc = model.simulate(case.system, x0, None, mu, case.stepper, bundle.config.sim_t_end)
        lqr = model.simulate(case.system, x0, lqr_policy, mu, case.stepper, bundle.config.sim_t_end)
        rows.append(
            {
                **{f"mu{k}": mu[k] for k in range(mu.size)},
                "ic": i,
                "J_uncontrolled": model.discounted_cost(case.system, case.cost, unc),
                "J_lqr": model.discounted_cost(case.system, case.cost, lqr),
                "J_hjb": result.costs[i],
            }
        )
    if args.report:
        _write_csv(args.report, rows)
    print(f"box {result.box_index}, PI iterations {result.pi_iterations}, "
          f"full-order evals in PI: {result.full_evals_in_pi}")
    for row in rows:
        print(f"  ic {row['ic']}: J_unc={row['J_uncontrolled']:.4g} "
              f"J_lqr={row['J_lqr']:.4g} J_hjb={row['J_hjb']:.4g}")


def _cmd_evaluate(args):
    if args.table == "1":
        rows = bench.run_table1(seed=args.seed)
        _write_csv(args.out, rows)
    elif args.table == "2":
        rows = bench.run_burgers_ratio(seed=args.seed)
        for row in rows:
            row.pop("ratios", None)
        _write_csv(args.out, rows)
    elif args.table == "heat-ratio":
        mus = [2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
        rows = bench.run_heat_ratio(mus, seed=args.seed)
        _write_csv(args.out, rows)
    elif args.table == "speedup":
        rows = []
        for name in args.benchmarks.split(","):
            cfg = bench.default_config(name)
            case = bench.get_benchmark(name)
            bundle = pipeline.offline_build(case, cfg, args.seed)
            rng = np.random.default_rng(args.seed)
            mus = case.domain.lower + rng.random((args.num_mus, case.domain.dim)) * (
                case.domain.upper - case.domain.lower
            )
            ratios, details = pipeline.measure_speedup(bundle, mus, reps=3)
            for ratio, det in zip(ratios, details):
                rows.append({"benchmark": name, "mu": det["mu"], "ratio": ratio,
                             "with_tables": det["with_tables"],
                             "without_tables": det["without_tables"]})
            print(f"{name}: median speedup {np.median(ratios):.2f}x")
        _write_csv(args.out, rows)
    else:
        raise SystemExit(f"unknown table {args.table}")


def _cmd_simulate(args):
    case = bench.get_benchmark(args.benchmark, args.resolution)
    mu = np.array([float(v) for v in args.mu.split(",")]) if args.mu else case.domain.barycenter()
    x0s = model.sample_initial(case.ensemble, args.num_ics, args.seed)
    t_end = args.t_end or case.sim_t_end

    if args.controller == "none":
        policy = None
    elif args.controller == "lqr":
        policy = pipeline.lqr_controller(case, mu)
    else:
        cfg = _load_config(args.config, args.benchmark)
        bundle = (
            pipeline.load_bundle(args.bundle)
            if args.bundle
            else pipeline.offline_build(case, cfg, args.seed)
        )
        result = pipeline.online_query(bundle, mu, [], cfg)
        from . import hjb as hjb_mod

        basis = bundle.partition.bases[result.box_index]
        policy = hjb_mod.feedback_policy(
            result.field, basis, case.system, case.cost, case.controls,
            mu, cfg.sl_config(case.cost.discount),
        )

    rows = []
    for i, x0 in enumerate(x0s):
        traj = model.simulate(case.system, x0, policy, mu, case.stepper, t_end)
        cost = model.discounted_cost(case.system, case.cost, traj)
        rows.append({"ic": i, "cost": cost, "final_norm": float(np.linalg.norm(traj.states[-1]))})
        print(f"ic {i}: cost {cost:.6g}, final state norm {rows[-1]['final_norm']:.4g}")
    if args.report:
        _write_csv(args.report, rows)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="hjbrom", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("offline", help="run the offline stage and persist the bundle")
    p.add_argument("--benchmark", required=True, choices=["test1", "test2", "test3"])
    p.add_argument("--config", default=None, help="JSON file overriding pipeline defaults")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=None)
    p.set_defaults(func=_cmd_offline)

    p = sub.add_parser("online", help="serve one parameter from a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--mu", required=True, help="comma-separated parameter values")
    p.add_argument("--num-ics", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None, help="CSV output path")
    p.set_defaults(func=_cmd_online)

    p = sub.add_parser("evaluate", help="reproduce the reported experiment tables")
    p.add_argument("--bundle", default=None)
    p.add_argument("--table", required=True, choices=["1", "2", "speedup", "heat-ratio"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--benchmarks", default="test2,test3", help="speedup table benchmarks")
    p.add_argument("--num-mus", type=int, default=10)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("simulate", help="closed-loop simulation with a chosen controller")
    p.add_argument("--benchmark", required=True, choices=["test1", "test2", "test3"])
    p.add_argument("--controller", default="none", choices=["none", "lqr", "hjb"])
    p.add_argument("--mu", default=None)
    p.add_argument("--num-ics", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-end", type=float, default=None)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--bundle", default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_simulate)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
