"""Classical policies, route planners and the scoring interface used by search.

A heuristic scores actions: ``values(env)`` returns one finite real per entry
of ``env.feasible_actions()`` (higher is better) and ``score(graph)`` returns
one value per graph slot with ``-inf`` on masked slots.  ``select(env, rng)``
is the heuristic used as a stand-alone policy, which may be stochastic.
"""
from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np

from .envs.cvrp import DEPOT, CvrpEnv, CvrpInstance
from .envs.pmsp import PmspEnv
from .graph import StateGraph, encode
from .mdp import NOOP, Action, make_rng

_MIN_DIST = 1e-12


class Heuristic:
    name = "heuristic"

    def values(self, env) -> np.ndarray:
        graph = encode(env)
        slot = {a: i for i, a in enumerate(graph.actions)}
        s = self.score(graph)
        return np.array([s[slot[a]] for a in env.feasible_actions()], dtype=float)

    def score(self, graph: StateGraph) -> np.ndarray:
        raise NotImplementedError

    def greedy(self, env) -> Action:
        acts = env.feasible_actions()
        return acts[int(np.argmax(self.values(env)))]

    def select(self, env, rng: np.random.Generator) -> Action:
        return self.greedy(env)


class UniformRandom(Heuristic):
    """Uniform over unmasked actions, depot edge and noop included."""

    name = "random"

    def values(self, env) -> np.ndarray:
        return np.zeros(len(env.feasible_actions()))

    def score(self, graph: StateGraph) -> np.ndarray:
        return np.where(graph.mask, 0.0, -np.inf)

    def select(self, env, rng):
        acts = env.feasible_actions()
        return acts[int(rng.integers(len(acts)))]


class DistanceProportional(Heuristic):
    """CVRP: customers sampled with weight ``1/distance``; depot only if no customer fits.

    As a scorer, customers get ``1/distance``, the depot 0 and noop -1, so the
    greedy choice is the nearest feasible customer.
    """

    name = "distance"

    def values(self, env: CvrpEnv) -> np.ndarray:
        out = []
        for a in env.feasible_actions():
            if a.source < 0:
                out.append(-1.0)
            elif a.target == DEPOT:
                out.append(0.0)
            else:
                out.append(1.0 / max(env.distance(env.loc, a.target), _MIN_DIST))
        return np.array(out)

    def score(self, graph: StateGraph) -> np.ndarray:
        d = np.maximum(graph.raw_edges[:, 0], _MIN_DIST)
        s = np.append(1.0 / d, -1.0)
        for i, a in enumerate(graph.actions[:-1]):
            if a.target == DEPOT:
                s[i] = 0.0
        return np.where(graph.mask, s, -np.inf)

    def select(self, env: CvrpEnv, rng):
        acts = env.feasible_actions()
        cust = [a for a in acts if a.source >= 0 and a.target != DEPOT]
        if not cust:
            return next(a for a in acts if a.source >= 0)
        w = np.array([1.0 / max(env.distance(env.loc, a.target), _MIN_DIST) for a in cust])
        return cust[int(rng.choice(len(cust), p=w / w.sum()))]


class WSPT(Heuristic):
    """PMSP: assign the pair minimising ``(setup + p_j) / w_j``.

    Ties go to the lowest machine, then the lowest job, which is the order of
    ``feasible_actions``.  Noop scores below every assignment.
    """

    name = "wspt"

    def values(self, env: PmspEnv) -> np.ndarray:
        acts = env.feasible_actions()
        out = np.empty(len(acts))
        for k, a in enumerate(acts):
            if a.source < 0:
                out[k] = np.nan
            else:
                j, i = a
                out[k] = -(env.setup_time(i, j) + env.p[j]) / env.w[j]
        if np.isnan(out).any():
            finite = out[~np.isnan(out)]
            out[np.isnan(out)] = (finite.min() if finite.size else 0.0) - 1.0
        return out

    def score(self, graph: StateGraph) -> np.ndarray:
        p = graph.raw_nodes[graph.senders, 0]
        w = graph.raw_nodes[graph.senders, 1]
        s = -(graph.raw_edges[:, 0] + p) / w
        noop = (s[graph.mask[:-1]].min() if graph.mask[:-1].any() else 0.0) - 1.0
        return np.where(graph.mask, np.append(s, noop), -np.inf)


class QNetHeuristic(Heuristic):
    """Greedy over the learned action values."""

    name = "qnet"

    def __init__(self, net):
        self.net = net

    def score(self, graph: StateGraph) -> np.ndarray:
        return np.where(graph.mask, self.net.slot_values(graph), -np.inf)


HEURISTICS = {"random": UniformRandom, "distance": DistanceProportional, "wspt": WSPT}


# --------------------------------------------------------------- route plans
def route_cost(dist: np.ndarray, routes: list) -> float:
    total = 0.0
    for r in routes:
        path = [0, *r, 0]
        total += sum(dist[a, b] for a, b in zip(path, path[1:]))
    return float(total)


def savings_route(dist: np.ndarray, demand, capacity: int) -> list:
    """Parallel Clarke-Wright savings.

    ``dist`` is indexed with 0 as the depot and ``i`` as customer ``i``;
    ``demand[i - 1]`` is the demand of customer ``i``.  Returns a list of
    routes, each a list of customer ids visited between two depot stops.
    """
    n = len(demand)
    routes = {i: [i] for i in range(1, n + 1)}
    owner = {i: i for i in range(1, n + 1)}
    load = {i: int(demand[i - 1]) for i in range(1, n + 1)}
    savings = [(dist[0, i] + dist[0, j] - dist[i, j], i, j)
               for i in range(1, n + 1) for j in range(i + 1, n + 1)]
    savings.sort(key=lambda x: (-x[0], x[1], x[2]))
    for s, i, j in savings:
        if s <= 0:
            break
        ri, rj = owner[i], owner[j]
        if ri == rj or load[ri] + load[rj] > capacity:
            continue
        a, b = routes[ri], routes[rj]
        # i must end route a and j must start route b, reversing if needed
        if a[-1] != i:
            if a[0] != i:
                continue
            a = a[::-1]
        if b[0] != j:
            if b[-1] != j:
                continue
            b = b[::-1]
        routes[ri] = a + b
        load[ri] += load.pop(rj)
        del routes[rj]
        for c in b:
            owner[c] = ri
    return list(routes.values())


def sweep_route(depot, xy: np.ndarray, demand, capacity: int) -> list:
    """Sweep: sort by polar angle around the depot (from angle 0, counterclockwise),
    cut into routes greedily at capacity, visit each route in angular order.

    Customers on the same ray are ordered nearest first.
    """
    if len(demand) == 0:
        return []
    v = np.asarray(xy, dtype=float) - np.asarray(depot, dtype=float)
    angle = np.mod(np.arctan2(v[:, 1], v[:, 0]), 2 * np.pi)
    order = np.lexsort((np.hypot(v[:, 0], v[:, 1]), angle))
    routes, cur, load = [], [], 0
    for i in order:
        if load + demand[i] > capacity:
            routes.append(cur)
            cur, load = [], 0
        cur.append(int(i) + 1)
        load += int(demand[i])
    routes.append(cur)
    return routes


def plan_instance(instance: CvrpInstance, planner: str) -> list:
    if planner == "savings":
        return savings_route(instance.distance_matrix(), instance.demand, instance.capacity)
    if planner == "sweep":
        return sweep_route(instance.depot, instance.xy, instance.demand, instance.capacity)
    raise ValueError(f"unknown planner {planner!r}")


def _plan_visible(env: CvrpEnv, planner: str) -> list:
    """Plan over the currently pending customers only; returns env location ids."""
    ids = list(env.pending)
    if not ids:
        return []
    xy = np.array([env.position(c) for c in ids])
    demand = np.array([env.dem[c] for c in ids])
    depot = env.position(DEPOT)
    if planner == "savings":
        loc = np.vstack([np.asarray(depot)[None, :], xy])
        dist = np.sqrt(((loc[:, None, :] - loc[None, :, :]) ** 2).sum(-1))
        local = savings_route(dist, demand, env.capacity)
    elif planner == "sweep":
        local = sweep_route(depot, xy, demand, env.capacity)
    else:
        raise ValueError(f"unknown planner {planner!r}")
    return [[ids[k - 1] for k in r] for r in local]


# ------------------------------------------------------------------ policies
class Policy:
    """Callable ``policy(env) -> Action``; ``reset`` is called before each episode."""

    name = "policy"

    def reset(self, env, seed: int = 0) -> None:
        pass

    def __call__(self, env) -> Action:
        raise NotImplementedError


class HeuristicPolicy(Policy):
    def __init__(self, heuristic: Heuristic, stochastic: bool = True):
        self.heuristic = heuristic
        self.stochastic = stochastic
        self.name = heuristic.name if stochastic else f"greedy-{heuristic.name}"
        self.rng = make_rng(0)

    def reset(self, env, seed: int = 0) -> None:
        self.rng = make_rng(seed, 0x5EED)

    def __call__(self, env) -> Action:
        if self.stochastic:
            return self.heuristic.select(env, self.rng)
        return self.heuristic.greedy(env)


class RoutePlanPolicy(Policy):
    """Quasi-offline CVRP: re-plan over visible customers at every depot visit.

    Offline this is simply the plan over the full instance.  A planned
    customer that cannot be served (it does not fit) sends the vehicle home.
    """

    def __init__(self, planner: str):
        self.planner = planner
        self.name = planner
        self.queue: list = []

    def reset(self, env, seed: int = 0) -> None:
        self.queue = []

    def __call__(self, env: CvrpEnv) -> Action:
        if env.loc == DEPOT:
            self.queue = [c for r in _plan_visible(env, self.planner) for c in (*r, DEPOT)]
        while self.queue:
            nxt = self.queue.pop(0)
            if nxt == DEPOT:
                if env.loc != DEPOT:
                    return Action(env.loc, DEPOT)
                continue
            if nxt in env.pending and env.dem[nxt] <= env.cap:
                return Action(env.loc, nxt)
        if env.loc != DEPOT:
            return Action(env.loc, DEPOT)
        # at the depot with nothing planned: only possible if the plan was empty
        acts = env.feasible_actions()
        return acts[0]


def wspt_schedule(env: PmspEnv) -> list:
    """Offline list schedule over the visible jobs: repeatedly give the machine
    that frees first the job with the best ``(setup + p) / w`` ratio.

    Returns ``(job, machine)`` pairs in dispatch order.
    """
    free_at = [env.clock + r for r in env.remaining()]
    kappa = list(env.kappa)
    left = list(env.pending)
    plan = []
    while left:
        i = min(range(env.m), key=lambda k: (free_at[k], k))
        last = kappa[i]

        def ratio(j):
            s = 0.0 if last == 0 else env.setup[last - 1][env.cls[j] - 1]
            return ((s + env.p[j]) / env.w[j], j)

        j = min(left, key=ratio)
        s = 0.0 if last == 0 else env.setup[last - 1][env.cls[j] - 1]
        free_at[i] += s + env.p[j]
        kappa[i] = env.cls[j]
        left.remove(j)
        plan.append((j, i))
    return plan


class QuasiOfflineSchedule(Policy):
    """Quasi-offline PMSP: re-plan the visible jobs after each interval start or
    when a machine becomes free, executing only the next planned assignment of
    a free machine before checking the triggers again."""

    name = "quasi-wspt"

    def __init__(self):
        self.plan: list = []
        self._last_clock = None
        self._last_busy = None

    def reset(self, env, seed: int = 0) -> None:
        self.plan = []
        self._last_clock = None
        self._last_busy = None

    def _triggered(self, env: PmspEnv) -> bool:
        if self._last_clock is None:
            return True
        cfg = env.instance.arrivals
        if cfg is not None:
            if math.floor(env.clock / cfg.interval_length) != math.floor(self._last_clock / cfg.interval_length):
                return True
        return any(b < 0 <= pb for b, pb in zip(env.busy, self._last_busy))

    def __call__(self, env: PmspEnv) -> Action:
        if self._triggered(env) or not self.plan:
            self.plan = wspt_schedule(env)
        self._last_clock = env.clock
        chosen = None
        for k, (j, i) in enumerate(self.plan):
            if env.busy[i] < 0 and j in env.pending:
                chosen = Action(j, i)
                del self.plan[k]
                break
        if chosen is None:
            self.plan = wspt_schedule(env)
            free = env.free_machines()
            chosen = next((Action(j, i) for j, i in self.plan if i in free), None)
            if chosen is None:
                chosen = env.feasible_actions()[0]
        busy = list(env.busy)
        busy[chosen.target] = chosen.source
        self._last_busy = tuple(busy)
        return chosen


def make_policy(name: str, problem: str, qnet=None) -> Policy:
    """Named baseline policy.  ``greedy-*`` variants pick argmax of the score."""
    if name in ("savings", "sweep"):
        if problem != "cvrp":
            raise ValueError(f"{name} is a CVRP planner")
        return RoutePlanPolicy(name)
    if name == "quasi-wspt":
        return QuasiOfflineSchedule()
    greedy = name.startswith("greedy-")
    base = name[len("greedy-"):] if greedy else name
    if base == "qnet":
        if qnet is None:
            raise ValueError("the qnet policy needs a checkpoint")
        return HeuristicPolicy(QNetHeuristic(qnet), stochastic=False)
    if base not in HEURISTICS:
        raise ValueError(f"unknown policy {name!r}")
    if base == "distance" and problem != "cvrp" or base == "wspt" and problem != "pmsp":
        raise ValueError(f"{base} does not apply to {problem}")
    return HeuristicPolicy(HEURISTICS[base](), stochastic=not greedy)


def make_heuristic(name: str, qnet=None) -> Heuristic:
    if name == "qnet":
        if qnet is None:
            raise ValueError("the qnet heuristic needs a checkpoint")
        return QNetHeuristic(qnet)
    if name not in HEURISTICS:
        raise ValueError(f"unknown heuristic {name!r}")
    return HEURISTICS[name]()


def play(env, policy: Callable, seed: int = 0):
    """Reset and run ``policy`` to the end; returns the list of transitions."""
    env.reset()
    if isinstance(policy, Policy):
        policy.reset(env, seed)
    return env.run(policy)
