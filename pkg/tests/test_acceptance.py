"""Acceptance criteria, each run at its stated tolerance.

Every test records one ``PASS``/``FAIL`` line, printed in the terminal summary.
Criteria 1, 2, 4 and 9 are known to miss their targets and are marked as strict
expected failures; the reasons are recorded in the project notes.
"""
import hashlib
import math
import time

import numpy as np
import pytest

from coplan.baselines import make_heuristic, make_policy, play
from coplan.bench import SUITES, relative_advantage, run_suite
from coplan.cli import main as cli_main
from coplan.dqn import DqnConfig, evaluate, train
from coplan.envs import (CvrpEnv, OnlineArrivalConfig, PmspEnv, PmspInstance, generate_cvrp_offline,
                         generate_cvrp_online, generate_pmsp_offline, generate_pmsp_online)
from coplan.mcts import MctsPolicy, SearchConfig
from coplan.mdp import make_rng, telescoping_check
from coplan.nn import QNet, QNetConfig

from conftest import ACCEPTANCE_LINES
from helpers import gradient_check, permute_graph, random_graph
from oracles import cvrp_optimum, pmsp_optimum, single_machine_twct_optimum

HELD_OUT = [2 * 10 ** 6 + i for i in range(50)]


def record(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    return ok


def mean_cost(suite, policy, seeds):
    recs = run_suite(SUITES[suite], [policy], seeds)
    assert all(r.status == "ok" for r in recs)
    return float(np.mean([r.objective for r in recs]))


def within(value, target, tol):
    return abs(value - target) <= tol


# ----------------------------------------------------------------- 1
@pytest.mark.xfail(strict=True, reason="savings VRP20 mean is 6.76 on seeds 0..49, above 6.35 + 0.35")
def test_criterion_01_offline_cvrp_baselines():
    seeds = range(50)
    checks = [("savings", "vrp20", 6.35, 0.35), ("savings", "vrp50", 11.03, 0.55), ("sweep", "vrp20", 8.89, 0.6),
              ("random", "vrp20", 13.21, 1.0), ("distance", "vrp20", 10.43, 0.8)]
    parts, ok = [], True
    for pol, suite, target, tol in checks:
        v = mean_cost(suite, pol, seeds)
        good = within(v, target, tol)
        ok &= good
        parts.append(f"{pol}/{suite} {v:.2f} (target {target} +- {tol}{'' if good else ', out'})")
    record(1, ok, "; ".join(parts))
    assert ok


# ----------------------------------------------------------------- 2
@pytest.mark.xfail(strict=True, reason="sweep VRP100 mean is 31.17, 10.4% above 28.24 (standard error 0.73)")
def test_criterion_02_vrp100_ordering():
    seeds = range(50)
    target = {"random": 58.84, "distance": 47.59, "sweep": 28.24, "savings": 16.51}
    v = {p: mean_cost("vrp100", p, seeds) for p in target}
    ordered = v["random"] > v["distance"] > v["sweep"] > v["savings"]
    close = all(abs(v[p] - target[p]) <= 0.10 * target[p] for p in target)
    detail = ", ".join(f"{p} {v[p]:.2f} ({100 * (v[p] / target[p] - 1):+.1f}%)" for p in target)
    record(2, ordered and close, f"ordering {'ok' if ordered else 'broken'}; {detail}")
    assert ordered and close


# ----------------------------------------------------------------- 3
def test_criterion_03_wspt_single_machine_optimal():
    rng = make_rng(3)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(1, 9))
        p, w = rng.integers(1, 101, n), rng.integers(1, 11, n)
        cls = np.ones(n, dtype=int)
        inst = PmspInstance(1, 1, np.zeros((1, 1), dtype=int), cls, p, w, np.zeros(n))
        env = PmspEnv(inst)
        play(env, make_policy("greedy-wspt", "pmsp"))
        mismatches += env.twct() != single_machine_twct_optimum(p, w)
    record(3, mismatches == 0, f"{200 - mismatches}/200 instances equal the permutation oracle")
    assert mismatches == 0


# ------------------------------------------------------- desk networks
DESK_CVRP_NET = QNetConfig.cvrp(hidden=64)
DESK_PMSP_NET = QNetConfig.pmsp(3, hidden=32)


def _desk_cvrp(i):
    return generate_cvrp_offline(5, 30, i)


def _desk_pmsp(i):
    return generate_pmsp_offline(8, 2, 3, i)


def _trained(request, name, make, net_cfg, dqn_cfg):
    """Train once per configuration; training is bit-reproducible so the
    checkpoint is cached by a hash of the configuration."""
    key = hashlib.sha256(repr((name, net_cfg, dqn_cfg)).encode()).hexdigest()[:16]
    path = request.config.cache.mkdir("desk-nets") / f"{name}-{key}.cpqn"
    if path.exists():
        return QNet.load(path), "cached"
    t = time.perf_counter()
    res = train(make, net_cfg, dqn_cfg, seed=0)
    net = QNet(net_cfg, res.params)
    net.save(path)
    return net, f"trained in {time.perf_counter() - t:.0f} s"


@pytest.fixture(scope="session")
def cvrp_net(request):
    return _trained(request, "cvrp", _desk_cvrp, DESK_CVRP_NET, DqnConfig.desk_cvrp())


@pytest.fixture(scope="session")
def pmsp_net(request):
    return _trained(request, "pmsp", _desk_pmsp, DESK_PMSP_NET, DqnConfig.desk_pmsp())


# ----------------------------------------------------------------- 4
# exploration constants on the scale of each objective (route lengths ~2,
# weighted completion times in the hundreds)
SOLO_BETA = {"cvrp": 3.0, "pmsp": 300.0}


@pytest.mark.xfail(strict=True, reason="CVRP matches the optimum on 86/100 seeds (PMSP 98/100); mean backups "
                                       "bias the root under a 2e4 rollout budget")
def test_criterion_04_solo_matches_oracle(cvrp_net, pmsp_net):
    results = {}
    for problem, (net, _) in (("cvrp", cvrp_net), ("pmsp", pmsp_net)):
        cfg = SearchConfig(rollouts=20_000, beta=SOLO_BETA[problem], k=None, preemption=math.inf)
        hits = 0
        for s in range(100):
            if problem == "cvrp":
                inst = generate_cvrp_offline(3 + s % 4, 30, 4_000_000 + s)
                env, opt = CvrpEnv(inst), cvrp_optimum(inst)
            else:
                inst = generate_pmsp_offline(2 + s % 4, 2, 3, 4_000_000 + s)
                env, opt = PmspEnv(inst), pmsp_optimum(inst)
            play(env, MctsPolicy(make_heuristic("qnet", net), cfg), s)
            hits += abs(env.objective() - opt) <= 1e-9
        results[problem] = hits
    ok = all(h >= 95 for h in results.values())
    record(4, ok, f"SOLO equals the brute-force optimum on CVRP {results['cvrp']}/100, "
                  f"PMSP {results['pmsp']}/100 (need >= 95)")
    assert ok


# ----------------------------------------------------------------- 5
def test_criterion_05_search_improves_distance():
    search, plain = [], []
    cfg = SearchConfig(rollouts=10 ** 9, time_budget=1.0)
    for s in range(30):
        inst = generate_cvrp_online(20, 30, s)
        a, b = CvrpEnv(inst), CvrpEnv(inst)
        play(a, MctsPolicy(make_heuristic("distance"), cfg), s)
        play(b, make_policy("distance", "cvrp"), s)
        search.append(a.objective())
        plain.append(b.objective())
    ok = np.mean(search) < np.mean(plain)
    record(5, ok, f"online VRP20 MCTS+distance {np.mean(search):.3f} vs distance {np.mean(plain):.3f}")
    assert ok


# ----------------------------------------------------------------- 6
def test_criterion_06_gnn_correctness():
    rng = np.random.default_rng(6)
    net = QNet(QNetConfig(node_dim=5, hidden=8, passes=2, dueling=True, global_out=2), seed=6)
    worst, used, skipped = gradient_check(net, [random_graph(rng, 5) for _ in range(3)], rng, n_params=200)
    eq = 0.0
    for _ in range(100):
        g = random_graph(rng, 5)
        pn, pe = rng.permutation(g.n_nodes), rng.permutation(g.n_edges)
        qa, qb = net.slot_values(g), net.slot_values(permute_graph(g, pn, pe))
        eq = max(eq, float(np.max(np.abs(qb[pe] - qa[:-1]))), abs(qb[-1] - qa[-1]))
    ok = used >= 200 and worst < 1e-4 and eq <= 1e-6
    record(6, ok, f"gradient rel. error {worst:.2e} over {used} parameters ({skipped} kink probes redrawn); "
                  f"equivariance error {eq:.2e} over 100 graphs")
    assert ok


# ----------------------------------------------------------------- 7
def test_criterion_07_telescoping():
    arrivals = OnlineArrivalConfig(6, 40.0, 20.0, 3, 2)
    makers = {"cvrp-offline": lambda s: CvrpEnv(generate_cvrp_offline(10, 20, s)),
              "cvrp-online": lambda s: CvrpEnv(generate_cvrp_online(10, 20, s)),
              "pmsp-offline": lambda s: PmspEnv(generate_pmsp_offline(10, 2, 3, s)),
              "pmsp-online": lambda s: PmspEnv(generate_pmsp_online(arrivals, s))}
    worst = {}
    for name, make in makers.items():
        worst[name] = 0.0
        for s in range(1000):
            env = make(s)
            trs = play(env, make_policy("random", name.split("-")[0]), s)
            worst[name] = max(worst[name], abs(telescoping_check(trs) + env.objective()))
    ok = all(v <= 1e-9 for v in worst.values())
    record(7, ok, "max |sum r + objective| " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


# ----------------------------------------------------------------- 8
def test_criterion_08_desk_learning_signal(cvrp_net, pmsp_net):
    net, how_c = cvrp_net
    cv = [_desk_cvrp(s) for s in HELD_OUT]
    greedy_c = evaluate(net, net.params, cv)
    rand = []
    for s, inst in zip(HELD_OUT, cv):
        env = CvrpEnv(inst)
        play(env, make_policy("random", "cvrp"), s)
        rand.append(env.objective())
    net, how_p = pmsp_net
    pm = [_desk_pmsp(s) for s in HELD_OUT]
    greedy_p = evaluate(net, net.params, pm)
    wspt = []
    for inst in pm:
        env = PmspEnv(inst)
        play(env, make_policy("greedy-wspt", "pmsp"))
        wspt.append(env.objective())
    rc, rp = greedy_c / np.mean(rand), greedy_p / np.mean(wspt)
    ok = rc <= 0.8 and rp <= 1.10
    record(8, ok, f"CVRP5 greedy Q-net {greedy_c:.3f} = {rc:.3f} x random (need <= 0.8, {how_c}); "
                  f"PMSP8 greedy Q-net {greedy_p:.1f} = {rp:.3f} x WSPT (need <= 1.10, {how_p})")
    assert ok


# ----------------------------------------------------------------- 9
@pytest.mark.xfail(strict=True, reason="(-6.95 + 6.42) / -6.42 is 8.26%, not the published 8.48%")
def test_criterion_09_relative_advantage_self_check():
    adv = 100 * relative_advantage([-6.95], [-6.42])
    ok = abs(adv - 8.48) <= 0.01
    record(9, ok, f"recomputed {adv:.2f}% vs published 8.48% (tolerance 0.01 pp)")
    assert ok


# ---------------------------------------------------------------- 10
BENCH_RUNS = [
    ["--suite", "vrp20", "--policies", "random,distance,savings,sweep", "--seeds", "0:10"],
    ["--suite", "ovrp20", "--policies", "distance,savings,mcts:distance", "--seeds", "0:3", "--rollouts", "50"],
    ["--suite", "pms8", "--policies", "random,wspt,mcts:wspt", "--seeds", "0:5", "--rollouts", "50", "--k", "3"],
    ["--suite", "opms3", "--policies", "quasi-wspt,greedy-wspt", "--seeds", "0:3"],
]


def test_criterion_10_bench_determinism(tmp_path):
    same = []
    for i, argv in enumerate(BENCH_RUNS):
        digests = []
        for rep in range(2):
            out = tmp_path / f"{i}-{rep}.csv"
            assert cli_main(["bench", *argv, "--out", str(out)]) == 0
            digests.append(hashlib.sha256(out.read_bytes()).hexdigest())
        same.append(digests[0] == digests[1])
    ok = all(same)
    record(10, ok, f"{sum(same)}/{len(same)} bench invocations byte-identical on repeat")
    assert ok
