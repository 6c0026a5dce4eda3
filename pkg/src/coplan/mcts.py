"""Anytime UCT over the environment simulator with a scoring heuristic.

Each rollout starts from the root snapshot, descends the tree with UCB over
the top-k actions of every stored state, and continues below the frontier by
following the heuristic greedily.  Only the states up to and including the
first state outside the tree are credited, so the tree grows by at most one
state per rollout.

Online, every rollout redraws the hidden future from the arrival model with
its own stream ``(seed, rollout)`` and suppresses arrivals later than the
preemption window.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mdp import Action, make_rng


@dataclass(frozen=True)
class SearchConfig:
    rollouts: int = 1000
    time_budget: Optional[float] = None  # seconds, checked between rollouts
    beta: float = 1.4
    k: Optional[int] = None  # None keeps every action
    gamma: float = 1.0
    preemption: float = math.inf
    resample: bool = True

    def __post_init__(self):
        if self.rollouts < 1:
            raise ValueError("rollouts must be >= 1")
        if self.time_budget is not None and self.time_budget <= 0:
            raise ValueError("time_budget must be positive")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.preemption < 0:
            raise ValueError("preemption window must be >= 0")


class Node:
    __slots__ = ("actions", "prior", "n", "n_sa", "q")

    def __init__(self, actions: list, prior: np.ndarray):
        self.actions = actions
        self.prior = prior
        self.n = 0
        self.n_sa = [0] * len(actions)
        self.q = [0.0] * len(actions)


def prune(values, k: Optional[int]) -> list:
    """Indices of the ``k`` highest values, ties to the lowest index, in index order."""
    n = len(values)
    if k is None or k >= n:
        return list(range(n))
    order = sorted(range(n), key=lambda i: (-values[i], i))
    return sorted(order[:k])


def _best_prior(prior, candidates) -> int:
    return min(candidates, key=lambda i: (-prior[i], i))


def ucb_select(node: Node, beta: float, allowed=None) -> int:
    """Index into ``node.actions``: an unsampled action if any (highest prior,
    then lowest index), else the UCB maximiser (ties to the lowest index)."""
    idx = range(len(node.actions)) if allowed is None else allowed
    unsampled = [i for i in idx if node.n_sa[i] == 0]
    if unsampled:
        return _best_prior(node.prior, unsampled)
    log_n = math.log(node.n) if node.n > 0 else 0.0
    best, best_i = -math.inf, -1
    for i in idx:
        u = node.q[i] + beta * math.sqrt(log_n / node.n_sa[i])
        if u > best:
            best, best_i = u, i
    return best_i


class SearchTree:
    """Visit counts and running mean returns keyed by canonical state keys."""

    def __init__(self):
        self.nodes: dict = {}

    def __contains__(self, key) -> bool:
        return key in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def get(self, key) -> Optional[Node]:
        return self.nodes.get(key)

    def add(self, key, actions, prior, k) -> Node:
        keep = prune(prior, k)
        node = Node([actions[i] for i in keep], np.asarray([prior[i] for i in keep], dtype=float))
        self.nodes[key] = node
        return node

    def n_s(self, key) -> int:
        return self.nodes[key].n

    def n_sa(self, key, action: Action) -> int:
        node = self.nodes[key]
        return node.n_sa[node.actions.index(action)]

    def q(self, key, action: Action) -> float:
        node = self.nodes[key]
        return node.q[node.actions.index(action)]


@dataclass
class Step:
    key: object
    action: Action
    reward: float
    actions: list = field(repr=False, default=None)
    prior: object = field(repr=False, default=None)


def update_tree(trajectory: list, t_out: int, gamma: float, tree: SearchTree, k=None) -> None:
    """Fold discounted reward-to-go backwards; credit steps ``i <= t_out``.

    A credited step whose state is not stored yet is added first.
    """
    rbar = 0.0
    for i in range(len(trajectory) - 1, -1, -1):
        st = trajectory[i]
        rbar = st.reward + gamma * rbar
        if i > t_out:
            continue
        node = tree.get(st.key)
        if node is None:
            node = tree.add(st.key, st.actions, st.prior, k)
        try:
            a = node.actions.index(st.action)
        except ValueError:
            # action outside the stored set (e.g. a noop that only exists in
            # some sampled futures); the state visit is still not credited
            continue
        node.n += 1
        node.n_sa[a] += 1
        node.q[a] += (rbar - node.q[a]) / node.n_sa[a]


class PriorCache:
    """Heuristic values per (state key, number of feasible actions)."""

    def __init__(self, heuristic, limit: int = 500_000):
        self.heuristic = heuristic
        self.table: dict = {}
        self.limit = limit

    def __call__(self, env, key, actions) -> np.ndarray:
        ck = (key, len(actions))
        v = self.table.get(ck)
        if v is None:
            v = np.asarray(self.heuristic.values(env), dtype=float)
            if len(self.table) >= self.limit:
                self.table.clear()
            self.table[ck] = v
        return v


def _argmax_first(values) -> int:
    best, bi = -math.inf, 0
    for i, v in enumerate(values):
        if v > best:
            best, bi = v, i
    return bi


def rollout(env, root_token, tree: SearchTree, config: SearchConfig, priors: PriorCache,
            seed: int, index: int):
    """One simulated episode from the root; returns ``(trajectory, t_out)``."""
    env.restore(root_token)
    if env.online:
        horizon = env.clock + config.preemption
        if config.resample:
            env.set_seed((seed, index))
            env.resample_future(env.rng, horizon)
        elif math.isfinite(horizon):
            env.truncate_future(horizon)
    traj = []
    t_out = None
    beta = config.beta
    online = env.online
    while not env.done:
        key = env.state_key()
        node = tree.nodes.get(key) if t_out is None else None
        if node is not None:
            allowed = None
            # online, a stored action (noop) may be infeasible in this sampled future
            if online and any(not env.is_feasible(a) for a in node.actions):
                allowed = [i for i, a in enumerate(node.actions) if env.is_feasible(a)]
            if allowed is None or allowed:
                a = node.actions[ucb_select(node, beta, allowed)]
                tr = env.step(a)
                traj.append(Step(key, a, tr.reward))
                continue
        acts = env.feasible_actions()
        prior = priors(env, key, acts)
        if t_out is None:
            t_out = len(traj)
            a = acts[_argmax_first(prior)]
            tr = env.step(a)
            traj.append(Step(key, a, tr.reward, acts, prior))
        else:
            a = acts[_argmax_first(prior)]
            tr = env.step(a)
            traj.append(Step(key, a, tr.reward))
    if t_out is None:
        t_out = len(traj)
    return traj, t_out


@dataclass
class SearchResult:
    action: Action
    rollouts: int
    elapsed: float
    tree: Optional[SearchTree]
    root_key: object = None


def search(env, heuristic, config: SearchConfig, seed: int = 0, priors: Optional[PriorCache] = None,
           clock=time.perf_counter) -> SearchResult:
    """Pick an action for the current state of ``env`` (restored afterwards)."""
    start = clock()
    acts = env.feasible_actions()
    if not acts:
        raise ValueError("search called on a state without feasible actions")
    if len(acts) == 1:
        return SearchResult(acts[0], 0, 0.0, None)
    priors = priors or PriorCache(heuristic)
    root = env.snapshot()
    root_key = env.state_key()
    root_prior = priors(env, root_key, acts)
    tree = SearchTree()
    tree.add(root_key, acts, root_prior, config.k)
    done = 0
    try:
        while done < config.rollouts:
            if config.time_budget is not None and done and clock() - start > config.time_budget:
                break
            traj, t_out = rollout(env, root, tree, config, priors, seed, done)
            update_tree(traj, t_out, config.gamma, tree, config.k)
            done += 1
    finally:
        env.restore(root)
    node = tree.nodes[root_key]
    sampled = [i for i in range(len(node.actions)) if node.n_sa[i] > 0]
    best = max(sampled, key=lambda i: (node.q[i], node.prior[i], -i))
    return SearchResult(node.actions[best], done, clock() - start, tree, root_key)


class MctsPolicy:
    """Tree search at every decision; heuristic values are cached per episode."""

    def __init__(self, heuristic, config: SearchConfig, name: Optional[str] = None):
        self.heuristic = heuristic
        self.config = config
        self.name = name or f"mcts-{heuristic.name}"
        self.seed = 0
        self.priors = PriorCache(heuristic)
        self.decisions = 0

    def reset(self, env, seed: int = 0) -> None:
        self.seed = seed
        self.priors = PriorCache(self.heuristic)
        self.decisions = 0

    def __call__(self, env) -> Action:
        seed = (self.seed * 1_000_003 + self.decisions) & 0x7FFFFFFF
        self.decisions += 1
        return search(env, self.heuristic, self.config, seed, self.priors).action


__all__ = ["MctsPolicy", "Node", "PriorCache", "SearchConfig", "SearchResult", "SearchTree",
           "make_rng", "prune", "rollout", "search", "ucb_select", "update_tree"]
