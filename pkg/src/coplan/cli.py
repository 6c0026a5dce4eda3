"""Command line: ``python3 -m coplan {generate,train,solve,bench,report} ...``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys

from . import bench
from . import io as instance_io
from .envs import OnlineArrivalConfig, generate_cvrp_offline, generate_cvrp_online, make_env
from .envs import generate_pmsp_offline, generate_pmsp_online


def _seeds(text: str) -> list:
    """``"0:50"`` (half open range), ``"3"`` or ``"1,4,9"``."""
    if ":" in text:
        lo, hi = text.split(":")
        return list(range(int(lo), int(hi)))
    return [int(s) for s in text.split(",")]


def _float_or_inf(text: str) -> float:
    return math.inf if text in ("inf", "none") else float(text)


def _generate(args) -> int:
    online = args.mode == "online"
    if args.problem == "cvrp":
        gen = generate_cvrp_online if online else generate_cvrp_offline
        kw = {} if args.velocity is None else {"velocity": args.velocity}
        inst = gen(args.n, args.capacity, args.seed, **kw)
    else:
        if online:
            cfg = OnlineArrivalConfig(args.intervals, args.interval_length, args.expected_jobs, args.c, args.m,
                                      flipped=args.flipped)
            inst = generate_pmsp_online(cfg, args.seed)
        else:
            inst = generate_pmsp_offline(args.n, args.m, args.c, args.seed)
    if args.out:
        instance_io.save_instance(args.out, inst)
    else:
        print(instance_io.dumps(inst))
    return 0


def _train(args) -> int:
    from .dqn import DqnConfig, train, write_metrics
    from .nn.qnet import QNetConfig, save_checkpoint

    overrides = {}
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
    net_kw = overrides.pop("qnet", {})
    online = args.mode == "online"
    if args.problem == "cvrp":
        dqn_cfg = DqnConfig.cvrp(**overrides)
        net_cfg = QNetConfig.cvrp(**net_kw)
        gen = generate_cvrp_online if online else generate_cvrp_offline

        def make_instance(i):
            return gen(args.n, args.capacity, args.seed * 1_000_003 + i)
    else:
        dqn_cfg = DqnConfig.pmsp(**({"gamma": 0.9} if online else {}), **overrides)
        net_cfg = QNetConfig.pmsp(args.c, **net_kw)
        cfg = OnlineArrivalConfig(args.intervals, args.interval_length, args.expected_jobs, args.c, args.m)

        def make_instance(i):
            s = args.seed * 1_000_003 + i
            return generate_pmsp_online(cfg, s) if online else generate_pmsp_offline(args.n, args.m, args.c, s)

    res = train(make_instance, net_cfg, dqn_cfg, seed=args.seed,
                progress=lambda row: logging.info("%s", row))
    save_checkpoint(args.out, net_cfg, res.params, {"best_eval": res.best_eval, "seed": args.seed})
    if args.metrics:
        write_metrics(args.metrics, res.log)
    print(json.dumps({"checkpoint": args.out, "best_eval": res.best_eval, "episodes": res.episodes}))
    return 0


def _solve(args) -> int:
    if args.instance:
        inst = instance_io.load_instance(args.instance)
        problem = "cvrp" if inst.__class__.__name__.startswith("Cvrp") else "pmsp"
    else:
        suite = bench.SUITES[args.suite]
        inst, problem = suite.instance(args.seed), suite.problem
    spec = args.policy
    if spec == "mcts":
        spec = f"mcts:{args.heuristic}"
    flags = bench.SearchFlags(args.time_budget, args.rollouts, args.k, args.beta, args.preemption)
    policy = bench.build_policy(spec, problem, flags)
    env = make_env(inst)
    policy.reset(env, args.seed)
    actions = []
    while not env.done:
        a = policy(env)
        env.step(a)
        actions.append(a)
    out = {"policy": spec, "objective": env.objective(), "decisions": len(actions),
           "actions": bench.format_actions(actions), "instance_sha256": instance_io.instance_hash(inst)}
    text = json.dumps(out, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def _bench(args) -> int:
    suite = bench.SUITES[args.suite]
    policies = args.policies.split(",")
    flags = bench.SearchFlags(args.budget_seconds, args.rollouts, args.k, args.beta, args.preemption)
    records = bench.run_suite(suite, policies, _seeds(args.seeds), flags, jobs=args.jobs)
    bench.write_csv(args.out, records)
    report = bench.build_report(records, args.reference)
    if args.summary:
        bench.write_summary(args.summary, records, report, {"suite": args.suite, "seeds": args.seeds})
    print(report.table())
    failed = [r for r in records if r.status != "ok"]
    if failed:
        print(f"{len(failed)} failed run(s)", file=sys.stderr)
        return 1
    return 0


def _report(args) -> int:
    records = bench.read_csv(args.csv)
    report = bench.build_report(records, args.reference)
    print(report.table())
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report.to_json(), fh, indent=2, sort_keys=True, default=str)
    return 1 if any(r.status != "ok" for r in records) else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coplan", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a random instance as JSON")
    g.add_argument("problem", choices=["cvrp", "pmsp"])
    g.add_argument("--n", type=int, default=20)
    g.add_argument("--capacity", type=int, default=30)
    g.add_argument("--velocity", type=float, default=None)
    g.add_argument("--m", type=int, default=3)
    g.add_argument("--c", type=int, default=5)
    g.add_argument("--intervals", type=int, default=16)
    g.add_argument("--interval-length", type=float, default=130.0)
    g.add_argument("--expected-jobs", type=float, default=80.0)
    g.add_argument("--flipped", action="store_true", help="class frequencies 1/(c+1-i)")
    g.add_argument("--mode", choices=["offline", "online"], default="offline")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=_generate)

    t = sub.add_parser("train", help="train a Q-network with DQN")
    t.add_argument("--problem", choices=["cvrp", "pmsp"], required=True)
    t.add_argument("--mode", choices=["offline", "online"], default="offline")
    t.add_argument("--config", help="JSON with DqnConfig fields and an optional 'qnet' object")
    t.add_argument("--n", type=int, default=5)
    t.add_argument("--capacity", type=int, default=30)
    t.add_argument("--m", type=int, default=2)
    t.add_argument("--c", type=int, default=3)
    t.add_argument("--intervals", type=int, default=16)
    t.add_argument("--interval-length", type=float, default=130.0)
    t.add_argument("--expected-jobs", type=float, default=80.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--metrics", help="metrics CSV path")
    t.set_defaults(func=_train)

    s = sub.add_parser("solve", help="run one policy on one instance")
    s.add_argument("--instance", help="instance JSON (default: --suite/--seed)")
    s.add_argument("--suite", default="vrp20", choices=sorted(bench.SUITES))
    s.add_argument("--problem", choices=["cvrp", "pmsp"], help="informational; inferred from the instance")
    s.add_argument("--policy", default="mcts")
    s.add_argument("--heuristic", default="distance", help="random|distance|wspt|qnet:<checkpoint>")
    s.add_argument("--time-budget", "--budget-seconds", dest="time_budget", type=float, default=None)
    s.add_argument("--rollouts", type=int, default=1000)
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--beta", type=float, default=1.4)
    s.add_argument("--preemption", type=_float_or_inf, default=math.inf)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=_solve)

    b = sub.add_parser("bench", help="paired benchmark over seeds")
    b.add_argument("--suite", required=True, choices=sorted(bench.SUITES))
    b.add_argument("--policies", required=True, help="comma separated policy specs")
    b.add_argument("--seeds", default="0:50")
    b.add_argument("--seed", type=int, default=None, help="single seed (overrides --seeds)")
    b.add_argument("--reference", default=None)
    b.add_argument("--budget-seconds", type=float, default=None)
    b.add_argument("--rollouts", type=int, default=1000)
    b.add_argument("--k", type=int, default=None)
    b.add_argument("--beta", type=float, default=1.4)
    b.add_argument("--preemption", type=_float_or_inf, default=math.inf)
    b.add_argument("--jobs", type=int, default=1, help="parallel workers")
    b.add_argument("--out", required=True, help="long CSV")
    b.add_argument("--summary", help="JSON summary with timings")
    b.set_defaults(func=_bench)

    r = sub.add_parser("report", help="rebuild the comparison table from a bench CSV")
    r.add_argument("csv")
    r.add_argument("--reference", default=None)
    r.add_argument("--out")
    r.set_defaults(func=_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "seed", None) is not None and args.command == "bench":
        args.seeds = str(args.seed)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
