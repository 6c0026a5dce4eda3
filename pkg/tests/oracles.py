"""Independent brute-force references used by the tests.

None of these import the environment dynamics; they work from the raw
instance arrays only.
"""
import itertools
import math
from functools import lru_cache


def cvrp_optimum(inst) -> float:
    """Exact minimum route length by dynamic programming over (location, load, remaining set)."""
    pts = [tuple(map(float, inst.depot))] + [tuple(map(float, p)) for p in inst.xy]
    dem = [0] + [int(d) for d in inst.demand]
    cap_full = int(inst.capacity)

    def d(a, b):
        return math.hypot(pts[a][0] - pts[b][0], pts[a][1] - pts[b][1])

    @lru_cache(maxsize=None)
    def value(loc, cap, rem):
        if not rem:
            return d(loc, 0)
        best = math.inf
        for c in rem:
            if dem[c] <= cap:
                best = min(best, d(loc, c) + value(c, cap - dem[c], rem - frozenset([c])))
        if loc != 0:
            best = min(best, d(loc, 0) + value(0, cap_full, rem))
        return best

    return value(0, cap_full, frozenset(range(1, len(pts))))


def cvrp_routes_optimum(inst) -> float:
    """Second exact reference: enumerate customer orders, then split optimally into trips."""
    n = inst.n
    pts = [tuple(map(float, inst.depot))] + [tuple(map(float, p)) for p in inst.xy]
    dem = [0] + [int(x) for x in inst.demand]

    def d(a, b):
        return math.hypot(pts[a][0] - pts[b][0], pts[a][1] - pts[b][1])

    best = math.inf
    for perm in itertools.permutations(range(1, n + 1)):
        # optimal split of a giant tour into capacity-feasible consecutive trips
        f = [0.0] + [math.inf] * n
        for i in range(n):
            load, path = 0, d(0, perm[i])
            for j in range(i, n):
                load += dem[perm[j]]
                if load > inst.capacity:
                    break
                if j > i:
                    path += d(perm[j - 1], perm[j])
                f[j + 1] = min(f[j + 1], f[i] + path + d(perm[j], 0))
        best = min(best, f[n])
    return best


def pmsp_optimum(inst) -> float:
    """Minimum TWCT over non-delay dispatch decisions (a free machine never idles
    while a job is pending), searched exhaustively with memoisation."""
    m = inst.machines
    cls = [int(c) for c in inst.job_class]
    p = [float(x) for x in inst.p]
    w = [float(x) for x in inst.w]
    S = inst.setup

    def setup(k, c):
        return 0.0 if k == 0 else float(S[k - 1][c - 1])

    @lru_cache(maxsize=None)
    def value(clock, fin, kap, rem):
        if not rem:
            return 0.0
        free = [i for i in range(m) if fin[i] <= clock]
        if not free:
            return value(min(fin), fin, kap, rem)
        best = math.inf
        for i in free:
            for j in rem:
                f = clock + setup(kap[i], cls[j]) + p[j]
                nf = fin[:i] + (f,) + fin[i + 1:]
                nk = kap[:i] + (cls[j],) + kap[i + 1:]
                best = min(best, w[j] * f + value(clock, nf, nk, rem - frozenset([j])))
        return best

    return value(0.0, (0.0,) * m, (0,) * m, frozenset(range(len(p))))


def single_machine_twct_optimum(p, w) -> float:
    """Exhaustive permutation search, one machine, no setups."""
    best = math.inf
    for perm in itertools.permutations(range(len(p))):
        t = total = 0.0
        for j in perm:
            t += p[j]
            total += w[j] * t
        best = min(best, total)
    return best


def replay_schedule_twct(inst, assignments) -> float:
    """TWCT of a schedule given as ``(job, machine, start)`` triples, recomputed
    from the instance arrays alone.  Checks machine exclusivity on the way."""
    by_machine = {}
    for j, i, start in assignments:
        by_machine.setdefault(i, []).append((start, j))
    total = 0.0
    for i, jobs in by_machine.items():
        jobs.sort()
        last_cls, free_at = 0, 0.0
        for start, j in jobs:
            assert start >= free_at - 1e-9, "machine used by two jobs at once"
            c = int(inst.job_class[j])
            s = 0.0 if last_cls == 0 else float(inst.setup[last_cls - 1][c - 1])
            free_at = start + s + float(inst.p[j])
            total += float(inst.w[j]) * free_at
            last_cls = c
    return total


def route_length(points, visits) -> float:
    """Length of a path visiting ``points[v]`` in order."""
    return sum(math.dist(points[a], points[b]) for a, b in zip(visits, visits[1:]))


def reference_q(cfg, params, graph):
    """Per-slot Q values computed with explicit Python loops over nodes and
    edges (no batching, no autodiff)."""
    import numpy as np

    P = params

    def lrelu(x):
        return np.where(x > 0, x, cfg.slope * x)

    def ln(x, name):
        mu = x.mean()
        var = ((x - mu) ** 2).mean()
        return (x - mu) / np.sqrt(var + cfg.ln_eps) * P[name + ".g"] + P[name + ".o"]

    def mlp(x, prefix, res):
        for k in range(cfg.mlp_layers):
            x = x @ P[f"{prefix}.{k}.w"] + P[f"{prefix}.{k}.b"]
            if k < cfg.mlp_layers - 1:
                x = lrelu(x)
        return ln(x + res, prefix + ".ln")

    def embed(x, part):
        return ln(lrelu(x @ P[f"embed.{part}.w"] + P[f"embed.{part}.b"]), f"embed.{part}.ln")

    nN, nE = graph.n_nodes, graph.n_edges
    V = [embed(graph.nodes[i], "node") for i in range(nN)]
    E = [embed(graph.edges[e], "edge") for e in range(nE)]
    W = embed(graph.globals, "glob")
    for _ in range(cfg.passes):
        E = [mlp(np.concatenate([E[e], (V[graph.senders[e]] + V[graph.receivers[e]]) / 2, W]), "mp.edge", E[e])
             for e in range(nE)]
        newV = []
        for i in range(nN):
            inc = [E[e] for e in range(nE) if graph.senders[e] == i] + \
                  [E[e] for e in range(nE) if graph.receivers[e] == i]
            agg = np.mean(inc, axis=0) if inc else np.zeros(cfg.hidden)
            newV.append(mlp(np.concatenate([V[i], agg, W]), "mp.node", V[i]))
        V = newV
        agg_e = np.mean(E, axis=0) if nE else np.zeros(cfg.hidden)
        agg_v = np.mean(V, axis=0)
        W = mlp(np.concatenate([W, (agg_e + agg_v) / 2, agg_v]), "mp.glob", W)
    edge_out = np.array([float(E[e] @ P["dec.edge.w"][:, 0] + P["dec.edge.b"][0]) for e in range(nE)])
    glob = W @ P["dec.glob.w"] + P["dec.glob.b"]
    if not cfg.dueling:
        return np.append(edge_out, glob[0])
    adv = np.append(edge_out, glob[1])
    feas = np.flatnonzero(graph.mask)
    mean_adv = adv[feas].mean() if feas.size else 0.0
    return glob[0] + adv - mean_adv
