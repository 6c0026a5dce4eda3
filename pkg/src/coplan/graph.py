"""State graphs: the only input the Q-network sees.

Every action slot is an edge of the graph, plus one trailing noop slot that is
always present and masked when waiting is not allowed.  Masked edges stay in
the graph so that information still flows through them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs.cvrp import DEPOT, CvrpEnv
from .envs.pmsp import P_RANGE, SETUP_RANGE, W_RANGE, PmspEnv
from .mdp import NOOP, Action, MaskingViolation

GLOBAL_DIM = 1

# CVRP node layout: x, y, capacity, demand, is_vehicle, is_depot, is_customer, reachable
CVRP_NODE_DIM = 8
CVRP_EDGE_DIM = 1


@dataclass(eq=False)
class StateGraph:
    nodes: np.ndarray  # (N, F_v) normalised
    edges: np.ndarray  # (E, F_e) normalised
    senders: np.ndarray  # (E,) int
    receivers: np.ndarray  # (E,) int
    globals: np.ndarray  # (F_g,)
    actions: list  # E + 1 entries, last one is NOOP
    mask: np.ndarray  # (E + 1,) bool
    raw_nodes: np.ndarray
    raw_edges: np.ndarray
    problem: str = ""

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def noop_slot(self) -> int:
        return self.n_edges

    def slot_of(self, action: Action) -> int:
        return self.actions.index(action)

    def feasible_slots(self) -> np.ndarray:
        return np.flatnonzero(self.mask)


def encode_cvrp(env: CvrpEnv) -> StateGraph:
    """Star graph: vehicle (node 0), depot (node 1), pending customers."""
    pend = env.pending
    nt = len(pend)
    C = float(env.capacity)
    raw = np.zeros((nt + 2, CVRP_NODE_DIM))
    vx, vy = env.px[env.loc], env.py[env.loc]
    raw[0, :4] = (vx, vy, env.cap, 0.0)
    raw[0, 4] = 1.0
    raw[1, :2] = (env.px[DEPOT], env.py[DEPOT])
    raw[1, 5] = 1.0
    raw[1, 7] = float(env.loc != DEPOT)
    if nt:
        idx = np.fromiter(pend, dtype=int, count=nt)
        raw[2:, 0] = np.take(env.px, idx)
        raw[2:, 1] = np.take(env.py, idx)
        dem = np.take(env.dem, idx).astype(float)
        raw[2:, 3] = dem
        raw[2:, 6] = 1.0
        raw[2:, 7] = dem <= env.cap
    nodes = raw.copy()
    nodes[:, 2:4] /= C

    receivers = np.concatenate([np.arange(2, nt + 2), [1]])
    senders = np.zeros(nt + 1, dtype=int)
    edges = np.hypot(raw[receivers, 0] - vx, raw[receivers, 1] - vy)[:, None]

    actions = [Action(env.loc, c) for c in pend] + [Action(env.loc, DEPOT), NOOP]
    mask = np.zeros(nt + 2, dtype=bool)
    mask[:nt] = raw[2:, 7] > 0
    mask[nt] = env.loc != DEPOT
    mask[nt + 1] = env.allow_noop and bool(env.future)
    if env.done:
        mask[:] = False
    return StateGraph(nodes, edges, senders, receivers.astype(int), np.zeros(GLOBAL_DIM),
                      actions, mask, raw, edges.copy(), "cvrp")


def pmsp_node_dim(classes: int) -> int:
    return 3 + classes + 1 + 1 + 1 + (classes + 1)


def encode_pmsp(env: PmspEnv) -> StateGraph:
    """Complete bipartite graph: pending jobs first, then machines.

    Job row: p, w, a, one-hot class (c), job bit, then zeros.
    Machine row: zeros, machine bit, remaining time, one-hot last class (c+1).
    """
    c, m = env.c, env.m
    pend = env.pending
    nt = len(pend)
    F = pmsp_node_dim(c)
    raw = np.zeros((nt + m, F))
    if nt:
        idx = np.fromiter(pend, dtype=int, count=nt)
        raw[:nt, 0] = np.take(env.p, idx)
        raw[:nt, 1] = np.take(env.w, idx)
        raw[:nt, 2] = np.take(env.arr, idx) if env.online else 0.0
        cls = np.take(env.cls, idx)
        raw[np.arange(nt), 2 + cls] = 1.0
        raw[:nt, 3 + c] = 1.0
    rem = env.remaining()
    raw[nt:, 4 + c] = 1.0
    raw[nt:, 5 + c] = rem
    raw[nt + np.arange(m), 6 + c + np.asarray(env.kappa)] = 1.0

    nodes = raw.copy()
    nodes[:, 0] /= P_RANGE[1]
    nodes[:, 1] /= W_RANGE[1]
    cfg = env.instance.arrivals
    horizon = cfg.intervals * cfg.interval_length if cfg is not None else 1.0
    nodes[:, 2] /= horizon
    nodes[:, 5 + c] /= P_RANGE[1] + SETUP_RANGE[1]

    senders = np.repeat(np.arange(nt), m)
    receivers = np.tile(np.arange(nt, nt + m), nt)
    setup = np.array([[env.setup_time(i, j) for i in range(m)] for j in pend]).reshape(nt * m, 1)
    edges = setup / SETUP_RANGE[1]

    actions = [Action(j, i) for j in pend for i in range(m)] + [NOOP]
    free = np.array([b < 0 for b in env.busy], dtype=bool)
    mask = np.zeros(nt * m + 1, dtype=bool)
    mask[:-1] = np.tile(free, nt)
    mask[-1] = env._noop_feasible()
    if env.done:
        mask[:] = False
    return StateGraph(nodes, edges, senders, receivers, np.zeros(GLOBAL_DIM), actions, mask,
                      raw, setup, "pmsp")


def encode(env) -> StateGraph:
    if isinstance(env, CvrpEnv):
        return encode_cvrp(env)
    if isinstance(env, PmspEnv):
        return encode_pmsp(env)
    raise TypeError(f"cannot encode {type(env).__name__}")


def decode_action(graph: StateGraph, index: int) -> Action:
    if not 0 <= index < len(graph.actions):
        raise IndexError(f"action slot {index} out of range")
    if not graph.mask[index]:
        raise MaskingViolation(f"action slot {index} is masked")
    return graph.actions[index]
