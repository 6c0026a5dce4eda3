"""Shared fixtures for the network checks: random graphs, permutations and a
finite-difference gradient probe."""
import contextlib

import numpy as np

from coplan.graph import StateGraph
from coplan.mdp import NOOP, Action
from coplan.nn import tensor as T


def random_graph(rng, node_dim, n_nodes=None, n_edges=None, noop=True):
    n_nodes = n_nodes or int(rng.integers(2, 7))
    n_edges = n_edges or int(rng.integers(1, 9))
    senders = rng.integers(0, n_nodes, size=n_edges)
    receivers = rng.integers(0, n_nodes, size=n_edges)
    mask = rng.random(n_edges + 1) < 0.7
    mask[0] = True
    mask[-1] = noop
    nodes = rng.normal(size=(n_nodes, node_dim))
    edges = rng.normal(size=(n_edges, 1))
    actions = [Action(int(s), int(r)) for s, r in zip(senders, receivers)] + [NOOP]
    return StateGraph(nodes, edges, senders, receivers, rng.normal(size=1), actions, mask,
                      nodes.copy(), edges.copy(), "random")


def permute_graph(g, node_perm, edge_perm):
    """Relabel node ``i`` as ``node_perm[i]`` and move edge ``e`` to slot ``edge_perm[e]``."""
    inv_n = np.argsort(node_perm)
    inv_e = np.argsort(edge_perm)
    nodes = g.nodes[inv_n]
    senders = node_perm[g.senders][inv_e]
    receivers = node_perm[g.receivers][inv_e]
    edges = g.edges[inv_e]
    mask = np.append(g.mask[:-1][inv_e], g.mask[-1])
    actions = [g.actions[e] for e in inv_e] + [NOOP]
    return StateGraph(nodes, edges, senders, receivers, g.globals, actions, mask,
                      nodes.copy(), edges.copy(), g.problem)


@contextlib.contextmanager
def _record_kinks(log):
    """Record the sign pattern of every leaky-ReLU input during a forward pass."""
    orig = T.leaky_relu

    def spy(x, slope=0.01):
        log.append(x.data > 0)
        return orig(x, slope)

    T.leaky_relu = spy
    try:
        yield
    finally:
        T.leaky_relu = orig


def gradient_check(net, graphs, rng, n_params=200, h=1e-4):
    """Max relative error between backward() and central differences of
    ``L = sum(c * Q)`` over ``n_params`` randomly chosen scalar parameters.

    A probe whose two evaluations see different leaky-ReLU sign patterns
    straddles a kink, where the central difference is not a derivative
    estimate; such probes are replaced by fresh draws and counted.
    Returns ``(worst error, probes used, probes skipped)``.
    """
    params = net.params
    edge_q, noop_q, cache = net.forward(graphs, params)
    ce, cn = rng.normal(size=edge_q.shape), rng.normal(size=noop_q.shape)
    grads = net.backward(cache, ce, cn)

    def loss(p):
        log = []
        with _record_kinks(log):
            e, n, _ = net.forward(graphs, p, grad=False)
        return float(np.dot(ce, e) + np.dot(cn, n)), log

    flat = [(name, idx) for name in sorted(params) for idx in np.ndindex(params[name].shape)]
    order = rng.permutation(len(flat))
    worst, used, skipped = 0.0, 0, 0
    for k in order:
        if used == n_params:
            break
        name, idx = flat[k]
        p_plus = dict(params)
        p_minus = dict(params)
        p_plus[name] = params[name].copy()
        p_minus[name] = params[name].copy()
        p_plus[name][idx] += h
        p_minus[name][idx] -= h
        (f_plus, s_plus), (f_minus, s_minus) = loss(p_plus), loss(p_minus)
        if any(not np.array_equal(a, b) for a, b in zip(s_plus, s_minus)):
            skipped += 1
            continue
        num = (f_plus - f_minus) / (2 * h)
        ana = grads[name][idx]
        worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-3))
        used += 1
    return worst, used, skipped
