"""Command-line entry points: run experiments, solve NUM, generate topologies."""

from __future__ import annotations

import argparse
import json
import sys

from .baselines import num_solve
from .harness import ExperimentConfig, build_graph, run_experiment
from .topology import (
    MBPS,
    bundled_topology,
    dump_topology,
    generate_random_topology,
    load_sessions,
    load_topology,
    make_sessions,
)


def _load_graph(name: str):
    from pathlib import Path
    if Path(name).exists():
        return load_topology(name)
    return bundled_topology(name)


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.out:
        from dataclasses import replace
        cfg = replace(cfg, out_dir=args.out)
    if args.workers:
        from dataclasses import replace
        cfg = replace(cfg, workers=args.workers)
    results = run_experiment(cfg)
    summaries = [rec.summary(cfg.eval_span) for _, rec in sorted(results.items())]
    print(json.dumps(summaries, indent=1))
    return 0


def cmd_solve_num(args) -> int:
    g = _load_graph(args.topology)
    if args.sessions:
        sessions = load_sessions(args.sessions, g)
    else:
        sessions = make_sessions(g, args.k, (args.window[0] * MBPS,
                                             args.window[1] * MBPS),
                                 seed=args.seed)
    sol = num_solve(g, sessions)
    d = sol.diagnostics
    doc = {
        "objective": sol.objective,
        "throughput_mbps": [x / MBPS for x in sol.throughput],
        "split_ratios": [list(f / max(f.sum(), 1e-300)) for f in sol.flows],
        "degenerate": [bool(b) for b in sol.degenerate],
        "certificate": {
            "converged": d.converged,
            "iterations": d.iterations,
            "max_capacity_violation": d.max_capacity_violation,
            "max_demand_violation": d.max_demand_violation,
            "stationarity": d.stationarity,
            "complementary_slackness": d.complementary_slackness,
            "duality_gap": d.duality_gap,
        },
    }
    print(json.dumps(doc, indent=1))
    return 0 if d.converged else 1


def cmd_gen_topology(args) -> int:
    g = generate_random_topology(args.nodes, args.links, args.seed,
                                 capacity=args.capacity_mbps * MBPS)
    dump_topology(g, args.out)
    print(f"wrote {args.out}: {len(g.nodes)} nodes, {len(g.links)} links")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="telab", description="Packet-level traffic-engineering lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("-c", "--config", required=True)
    p_run.add_argument("--out", help="output directory for per-run CSVs")
    p_run.add_argument("--workers", type=int, help="parallel run workers")
    p_run.set_defaults(func=cmd_run)

    p_num = sub.add_parser("solve-num", help="solve the NUM program and print "
                                             "the solution with its certificate")
    p_num.add_argument("--topology", required=True,
                       help="bundled name (nsfnet|arpanet|random20) or file")
    p_num.add_argument("--sessions", help="session document path")
    p_num.add_argument("--k", type=int, default=20)
    p_num.add_argument("--window", type=float, nargs=2, default=(10.0, 30.0),
                       metavar=("LO_MBPS", "HI_MBPS"))
    p_num.add_argument("--seed", type=int, default=0)
    p_num.set_defaults(func=cmd_solve_num)

    p_gen = sub.add_parser("gen-topology", help="generate a random topology document")
    p_gen.add_argument("--nodes", type=int, required=True)
    p_gen.add_argument("--links", type=int, required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--capacity-mbps", type=float, default=100.0)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen_topology)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
