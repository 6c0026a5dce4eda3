"""Seeded, paired benchmark runs and the relative-advantage report.

Every policy of a suite sees the same instance for a given seed (checked by
the instance sha256).  Results go to a long CSV with one row per
(seed, policy); wall-clock timings are kept out of the CSV so that repeated
runs are byte-identical, and are written to the JSON summary instead.
"""
from __future__ import annotations

import csv
import io as _io
import json
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import io as instance_io
from .baselines import make_heuristic, make_policy
from .envs import OnlineArrivalConfig, generate_cvrp_offline, generate_cvrp_online, make_env
from .envs import generate_pmsp_offline, generate_pmsp_online
from .mcts import MctsPolicy, SearchConfig
from .mdp import NOOP, RNG_ALGORITHM, Action

log = logging.getLogger(__name__)

CSV_COLUMNS = ["suite", "problem", "policy", "seed", "instance_sha256", "status", "objective",
               "decisions", "actions"]


def relative_advantage(values, reference) -> float:
    """``mean_i (v_i - ref_i) / ref_i`` over paired instances."""
    a = np.asarray(values, dtype=float)
    r = np.asarray(reference, dtype=float)
    if a.shape != r.shape:
        raise ValueError("values and reference must be paired (equal lengths)")
    if a.size == 0:
        raise ValueError("no paired values")
    if np.any(r == 0):
        raise ZeroDivisionError("reference value of zero")
    return float(np.mean((a - r) / r))


# -------------------------------------------------------------------- suites
@dataclass(frozen=True)
class Suite:
    name: str
    problem: str
    online: bool
    size: int
    capacity: int = 0
    machines: int = 0
    classes: int = 0
    arrivals: Optional[OnlineArrivalConfig] = None

    def instance(self, seed: int):
        if self.problem == "cvrp":
            gen = generate_cvrp_online if self.online else generate_cvrp_offline
            return gen(self.size, self.capacity, seed)
        if self.online:
            return generate_pmsp_online(self.arrivals, seed)
        return generate_pmsp_offline(self.size, self.machines, self.classes, seed)


SUITES = {
    "vrp20": Suite("vrp20", "cvrp", False, 20, capacity=30),
    "vrp50": Suite("vrp50", "cvrp", False, 50, capacity=40),
    "vrp100": Suite("vrp100", "cvrp", False, 100, capacity=50),
    "ovrp20": Suite("ovrp20", "cvrp", True, 20, capacity=30),
    "ovrp50": Suite("ovrp50", "cvrp", True, 50, capacity=40),
    "ovrp100": Suite("ovrp100", "cvrp", True, 100, capacity=50),
    "pms80": Suite("pms80", "pmsp", False, 80, machines=3, classes=5),
    "opms3": Suite("opms3", "pmsp", True, 80, machines=3, classes=5,
                   arrivals=OnlineArrivalConfig(16, 130.0, 80.0, 5, 3)),
    "opms10": Suite("opms10", "pmsp", True, 80, machines=10, classes=5,
                    arrivals=OnlineArrivalConfig(60, 10.0, 80.0, 5, 10)),
    # desk-scale suites
    "vrp5": Suite("vrp5", "cvrp", False, 5, capacity=30),
    "vrp6": Suite("vrp6", "cvrp", False, 6, capacity=30),
    "pms8": Suite("pms8", "pmsp", False, 8, machines=2, classes=3),
    "pms5": Suite("pms5", "pmsp", False, 5, machines=2, classes=3),
}


def worst_case_runtime(problem: str, online: bool, size: float, budget: float) -> float:
    """Upper bound on episode time: decision points times the per-decision budget.

    Decision points: offline CVRP ``2 * size``, online CVRP ``3 * size``,
    PMSP ``size`` (for online PMSP pass the expected number of jobs).
    """
    if problem == "cvrp":
        n_d = (3 if online else 2) * size
    elif problem == "pmsp":
        n_d = size
    else:
        raise ValueError(f"unknown problem {problem!r}")
    if problem == "cvrp" and not online:
        log.info("offline CVRP bound uses 2 x size decisions (%s s for size %s); "
                 "published totals use 1 x size", n_d * budget, size)
    return float(n_d * budget)


# ------------------------------------------------------------------ policies
@dataclass(frozen=True)
class SearchFlags:
    budget_seconds: Optional[float] = None
    rollouts: int = 1000
    k: Optional[int] = None
    beta: float = 1.4
    preemption: float = math.inf
    gamma: float = 1.0


def build_policy(spec: str, problem: str, flags: SearchFlags = SearchFlags()):
    """Policies by name: ``random``, ``distance``, ``wspt``, ``greedy-<h>``,
    ``savings``, ``sweep``, ``quasi-wspt``, ``qnet:<checkpoint>`` and
    ``mcts:<heuristic>`` / ``mcts:qnet:<checkpoint>``."""
    from .nn.qnet import QNet

    if spec.startswith("mcts:"):
        rest = spec[len("mcts:"):]
        net = None
        if rest.startswith("qnet:"):
            net = QNet.load(rest[len("qnet:"):])
            rest = "qnet"
        cfg = SearchConfig(rollouts=flags.rollouts, time_budget=flags.budget_seconds, beta=flags.beta,
                           k=flags.k, gamma=flags.gamma, preemption=flags.preemption)
        return MctsPolicy(make_heuristic(rest, net), cfg, name=spec)
    if spec.startswith("qnet:"):
        pol = make_policy("qnet", problem, QNet.load(spec[len("qnet:"):]))
        pol.name = spec
        return pol
    pol = make_policy(spec, problem)
    pol.name = spec
    return pol


# ------------------------------------------------------------------- running
def format_actions(actions: Sequence[Action]) -> str:
    return " ".join("noop" if a.is_noop else f"{a.source}>{a.target}" for a in actions)


def parse_actions(text: str) -> list:
    out = []
    for tok in text.split():
        if tok == "noop":
            out.append(NOOP)
        else:
            s, t = tok.split(">")
            out.append(Action(int(s), int(t)))
    return out


@dataclass
class RunRecord:
    suite: str
    problem: str
    policy: str
    seed: int
    instance_sha256: str
    status: str
    objective: float
    decisions: int
    actions: str = field(repr=False, default="")
    wall_time: float = 0.0  # seconds per decision, JSON summary only

    def csv_row(self) -> list:
        return [self.suite, self.problem, self.policy, self.seed, self.instance_sha256, self.status,
                repr(float(self.objective)), self.decisions, self.actions]


def run_one(suite: Suite, policy_spec: str, seed: int, flags: SearchFlags) -> RunRecord:
    inst = suite.instance(seed)
    digest = instance_io.instance_hash(inst)
    try:
        policy = build_policy(policy_spec, suite.problem, flags)
        env = make_env(inst)
        policy.reset(env, seed)
        actions = []
        start = time.perf_counter()
        while not env.done:
            a = policy(env)
            env.step(a)
            actions.append(a)
        elapsed = time.perf_counter() - start
        return RunRecord(suite.name, suite.problem, policy_spec, seed, digest, "ok",
                         float(env.objective()), len(actions), format_actions(actions),
                         elapsed / max(len(actions), 1))
    except Exception as exc:  # a crashing policy marks the instance failed
        log.warning("policy %s failed on %s seed %d: %r", policy_spec, suite.name, seed, exc)
        return RunRecord(suite.name, suite.problem, policy_spec, seed, digest, f"failed:{type(exc).__name__}",
                         math.nan, 0, "")


def _run_task(args):
    suite, spec, seed, flags = args
    return run_one(suite, spec, seed, flags)


def run_suite(suite: Suite, policies: Sequence[str], seeds: Sequence[int],
              flags: SearchFlags = SearchFlags(), jobs: int = 1) -> list:
    """Run every policy on every seed; records ordered by (seed, policy order)."""
    tasks = [(suite, spec, int(s), flags) for s in seeds for spec in policies]
    if jobs > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(jobs) as pool:
            records = pool.map(_run_task, tasks)
    else:
        records = [_run_task(t) for t in tasks]
    for s in seeds:
        digests = {r.instance_sha256 for r in records if r.seed == s}
        if len(digests) != 1:
            raise RuntimeError(f"policies saw different instances for seed {s}")
    return records


def replay(record: RunRecord, suite: Optional[Suite] = None) -> float:
    """Objective obtained by replaying the logged actions on a fresh instance."""
    suite = suite or SUITES[record.suite]
    inst = suite.instance(record.seed)
    if instance_io.instance_hash(inst) != record.instance_sha256:
        raise ValueError("instance hash mismatch; generator changed since the run")
    env = make_env(inst)
    for a in parse_actions(record.actions):
        env.step(a)
    if not env.done:
        raise ValueError("action log does not finish the episode")
    return float(env.objective())


def write_csv(path_or_buf, records: Sequence[RunRecord]) -> None:
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(r.csv_row())
    finally:
        if own:
            fh.close()


def read_csv(path_or_text) -> list:
    if isinstance(path_or_text, str) and "\n" in path_or_text:
        fh = _io.StringIO(path_or_text)
    else:
        fh = open(path_or_text, newline="")
    with fh:
        out = []
        for row in csv.DictReader(fh):
            out.append(RunRecord(row["suite"], row["problem"], row["policy"], int(row["seed"]),
                                 row["instance_sha256"], row["status"], float(row["objective"]),
                                 int(row["decisions"]), row["actions"]))
        return out


# -------------------------------------------------------------------- report
@dataclass
class ComparisonReport:
    reference: str
    policies: list
    seeds: list
    values: dict  # policy -> {seed: objective}
    mean: dict
    advantage: dict  # policy -> relative advantage vs reference (nan if no reference)
    failed: dict

    def to_json(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        lines = [f"{'policy':<28}{'mean':>14}{'rel. to ' + self.reference:>22}{'failed':>8}"]
        for p in self.policies:
            adv = self.advantage.get(p, math.nan)
            lines.append(f"{p:<28}{self.mean[p]:>14.4f}{100 * adv:>21.2f}%{self.failed[p]:>8}")
        return "\n".join(lines)


def build_report(records: Sequence[RunRecord], reference: Optional[str] = None) -> ComparisonReport:
    """Per-policy means over seeds where every policy succeeded, and paired
    relative advantages against ``reference`` (default: first policy)."""
    policies = list(dict.fromkeys(r.policy for r in records))
    seeds = sorted({r.seed for r in records})
    reference = reference or policies[0]
    if reference not in policies:
        raise ValueError(f"reference policy {reference!r} not in records")
    values = {p: {} for p in policies}
    failed = {p: 0 for p in policies}
    for r in records:
        if r.status == "ok":
            values[r.policy][r.seed] = r.objective
        else:
            failed[r.policy] += 1
    good = [s for s in seeds if all(s in values[p] for p in policies)]
    if len(good) < len(seeds):
        warnings.warn(f"{len(seeds) - len(good)} seed(s) excluded because a policy failed")
    mean = {p: float(np.mean([values[p][s] for s in good])) if good else math.nan for p in policies}
    adv = {}
    for p in policies:
        ref = [values[reference][s] for s in good]
        adv[p] = relative_advantage([values[p][s] for s in good], ref) if good else math.nan
    return ComparisonReport(reference, policies, good, values, mean, adv, failed)


def write_summary(path, records: Sequence[RunRecord], report: ComparisonReport, meta: dict) -> None:
    timing = {}
    for r in records:
        timing.setdefault(r.policy, []).append(r.wall_time)
    body = {
        "meta": {**meta, "rng": RNG_ALGORITHM},
        "report": report.to_json(),
        "seconds_per_decision": {p: float(np.mean(v)) for p, v in timing.items()},
    }
    with open(path, "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=True, default=str)
