"""Embed / message-pass / decode graph network producing one Q value per action slot.

Edge outputs of the last pass are the Q values of the edge actions; the global
output is the Q value of noop.  With ``dueling`` the global head has two units
``(V, A_noop)`` and every action value is ``V + A - mean(A)`` over the
feasible actions of its graph.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..graph import StateGraph
from . import tensor as T

CHECKPOINT_MAGIC = b"CPQN"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


class CacheReuseError(RuntimeError):
    pass


@dataclass(frozen=True)
class QNetConfig:
    node_dim: int
    edge_dim: int = 1
    global_dim: int = 1
    hidden: int = 32
    passes: int = 4
    mlp_layers: int = 3
    global_out: int = 1
    dueling: bool = False
    attention: bool = False
    heads: int = 4
    slope: float = 0.01
    ln_eps: float = 1e-5

    def __post_init__(self):
        for name in ("node_dim", "edge_dim", "global_dim", "hidden", "passes", "mlp_layers", "global_out"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.dueling and self.global_out < 2:
            raise ConfigError("dueling needs a global head with two outputs")
        if self.attention and self.hidden % self.heads:
            raise ConfigError("hidden must be divisible by heads")

    @classmethod
    def pmsp(cls, classes: int, **kw) -> "QNetConfig":
        from ..graph import pmsp_node_dim

        return cls(node_dim=pmsp_node_dim(classes), **{"hidden": 32, "passes": 4, **kw})

    @classmethod
    def cvrp(cls, **kw) -> "QNetConfig":
        from ..graph import CVRP_NODE_DIM

        base = {"hidden": 256, "passes": 2, "global_out": 2, "dueling": True}
        return cls(node_dim=CVRP_NODE_DIM, **{**base, **kw})


def _layer_shapes(cfg: QNetConfig) -> dict:
    H = cfg.hidden
    shapes = {}

    def lin(name, fan_in, fan_out):
        shapes[f"{name}.w"] = (fan_in, fan_out)
        shapes[f"{name}.b"] = (fan_out,)

    def ln(name):
        shapes[f"{name}.g"] = (H,)
        shapes[f"{name}.o"] = (H,)

    for part, fan_in in (("edge", cfg.edge_dim), ("node", cfg.node_dim), ("glob", cfg.global_dim)):
        lin(f"embed.{part}", fan_in, H)
        ln(f"embed.{part}.ln")
    for part in ("edge", "node", "glob"):
        for k in range(cfg.mlp_layers):
            lin(f"mp.{part}.{k}", 3 * H if k == 0 else H, H)
        ln(f"mp.{part}.ln")
    if cfg.attention:
        for name in ("q", "k", "v", "o"):
            lin(f"attn.{name}", H, H)
        ln("attn.ln")
    lin("dec.edge", H, 1)
    lin("dec.glob", H, cfg.global_out)
    return shapes


def init_params(cfg: QNetConfig, rng: np.random.Generator) -> dict:
    """Uniform fan-in initialisation of weights and biases, unit layer-norm gains.

    Biases are random too: the global input is all zeros, so a zero bias would
    feed a constant vector into the first layer norm.
    """
    shapes = _layer_shapes(cfg)
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".w") or name.endswith(".b"):
            bound = 1.0 / np.sqrt(shapes[name[:-2] + ".w"][0])
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".g"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def zero_params(cfg: QNetConfig) -> dict:
    return {name: np.zeros(shape) for name, shape in _layer_shapes(cfg).items()}


@dataclass
class GraphBatch:
    """Disjoint union of graphs with per-row graph ids."""

    nodes: np.ndarray
    edges: np.ndarray
    senders: np.ndarray
    receivers: np.ndarray
    globals: np.ndarray
    node_graph: np.ndarray
    edge_graph: np.ndarray
    mask: np.ndarray  # edge slots then one noop slot per graph
    edge_offsets: np.ndarray
    n_graphs: int

    @classmethod
    def from_graphs(cls, graphs: Sequence[StateGraph]) -> "GraphBatch":
        n_nodes = np.array([g.n_nodes for g in graphs])
        n_edges = np.array([g.n_edges for g in graphs])
        node_off = np.concatenate([[0], np.cumsum(n_nodes)])
        edge_off = np.concatenate([[0], np.cumsum(n_edges)])
        G = len(graphs)
        return cls(
            nodes=np.concatenate([g.nodes for g in graphs]),
            edges=np.concatenate([g.edges for g in graphs]),
            senders=np.concatenate([g.senders + o for g, o in zip(graphs, node_off)]).astype(np.intp),
            receivers=np.concatenate([g.receivers + o for g, o in zip(graphs, node_off)]).astype(np.intp),
            globals=np.stack([g.globals for g in graphs]),
            node_graph=np.repeat(np.arange(G), n_nodes),
            edge_graph=np.repeat(np.arange(G), n_edges),
            mask=np.concatenate([np.concatenate([g.mask[:-1] for g in graphs]),
                                 np.array([g.mask[-1] for g in graphs], dtype=bool)]),
            edge_offsets=edge_off,
            n_graphs=G,
        )

    def split(self, edge_q: np.ndarray, noop_q: np.ndarray) -> list:
        """Per-graph slot vectors (edges then noop)."""
        return [np.append(edge_q[lo:hi], noop_q[k])
                for k, (lo, hi) in enumerate(zip(self.edge_offsets[:-1], self.edge_offsets[1:]))]


class ForwardCache:
    def __init__(self, leaves, edge_q, noop_q):
        self.leaves = leaves
        self.edge_q = edge_q
        self.noop_q = noop_q
        self.used = False


class QNet:
    def __init__(self, config: QNetConfig, params: dict | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, np.random.default_rng(seed))
        missing = set(_layer_shapes(config)) - set(self.params)
        if missing:
            raise ConfigError(f"missing parameters: {sorted(missing)[:3]}")

    # ---------------------------------------------------------------- blocks
    def _mlp(self, x, P, prefix, residual=None):
        cfg = self.config
        for k in range(cfg.mlp_layers):
            x = T.linear(x, P[f"{prefix}.{k}.w"], P[f"{prefix}.{k}.b"])
            if k < cfg.mlp_layers - 1:
                x = T.leaky_relu(x, cfg.slope)
        if residual is not None:
            x = T.add(x, residual)
        return T.layer_norm(x, P[f"{prefix}.ln.g"], P[f"{prefix}.ln.o"], cfg.ln_eps)

    def _embed(self, x, P, part):
        cfg = self.config
        h = T.leaky_relu(T.linear(x, P[f"embed.{part}.w"], P[f"embed.{part}.b"]), cfg.slope)
        return T.layer_norm(h, P[f"embed.{part}.ln.g"], P[f"embed.{part}.ln.o"], cfg.ln_eps)

    def _attention(self, V, P, batch: GraphBatch):
        """Multi-head self-attention among the nodes of each graph."""
        cfg = self.config
        H, nh = cfg.hidden, cfg.heads
        dh = H // nh
        ng = batch.node_graph
        qi, ki = [], []
        for g in range(batch.n_graphs):
            idx = np.flatnonzero(ng == g)
            qi.append(np.repeat(idx, len(idx)))
            ki.append(np.tile(idx, len(idx)))
        qi, ki = np.concatenate(qi), np.concatenate(ki)
        Q = T.linear(V, P["attn.q.w"], P["attn.q.b"])
        K = T.linear(V, P["attn.k.w"], P["attn.k.b"])
        Vv = T.linear(V, P["attn.v.w"], P["attn.v.b"])
        prod = T.mul(T.gather(Q, qi), T.gather(K, ki))
        scores = T.scale(T.reshape(prod, (-1, nh, dh)), 1.0 / np.sqrt(dh))
        logits = T.matmul(T.reshape(scores, (-1, dh)), T.Tensor(np.ones((dh, 1))))
        logits = T.reshape(logits, (-1, nh))
        alpha = T.segment_softmax(logits, qi, V.shape[0])
        vals = T.reshape(T.gather(Vv, ki), (-1, nh, dh))
        weighted = T.mul(vals, T.reshape(alpha, (-1, nh, 1)))
        out = T.reshape(T.segment_sum(T.reshape(weighted, (-1, H)), qi, V.shape[0]), (-1, H))
        out = T.linear(out, P["attn.o.w"], P["attn.o.b"])
        return T.layer_norm(T.add(V, out), P["attn.ln.g"], P["attn.ln.o"], cfg.ln_eps)

    # --------------------------------------------------------------- forward
    def forward(self, graphs, params: dict | None = None, grad: bool = True):
        """Run the network on one graph or a list of graphs.

        Returns ``(edge_q, noop_q, cache)`` where ``edge_q`` has one value per
        edge of the batch and ``noop_q`` one per graph.
        """
        cfg = self.config
        params = self.params if params is None else params
        batch = graphs if isinstance(graphs, GraphBatch) else GraphBatch.from_graphs(
            [graphs] if isinstance(graphs, StateGraph) else list(graphs))
        if batch.nodes.shape[1] != cfg.node_dim or batch.edges.shape[1] != cfg.edge_dim \
                or batch.globals.shape[1] != cfg.global_dim:
            raise ConfigError(
                f"graph widths (node {batch.nodes.shape[1]}, edge {batch.edges.shape[1]}, "
                f"global {batch.globals.shape[1]}) do not match the network config")
        P = {k: T.Tensor(v, requires_grad=grad, name=k) for k, v in params.items()}
        G, N = batch.n_graphs, batch.nodes.shape[0]
        snd, rcv = batch.senders, batch.receivers

        E = self._embed(T.Tensor(batch.edges), P, "edge")
        V = self._embed(T.Tensor(batch.nodes), P, "node")
        W = self._embed(T.Tensor(batch.globals), P, "glob")

        both_ends = np.concatenate([snd, rcv])
        for _ in range(cfg.passes):
            ends = T.scale(T.add(T.gather(V, snd), T.gather(V, rcv)), 0.5)
            E = self._mlp(T.concat([E, ends, T.gather(W, batch.edge_graph)]), P, "mp.edge", residual=E)
            incident = T.segment_mean(T.concat([E, E], axis=0), both_ends, N)
            V = self._mlp(T.concat([V, incident, T.gather(W, batch.node_graph)]), P, "mp.node", residual=V)
            if cfg.attention:
                V = self._attention(V, P, batch)
            agg_e = T.segment_mean(E, batch.edge_graph, G)
            agg_v = T.segment_mean(V, batch.node_graph, G)
            W = self._mlp(T.concat([W, T.scale(T.add(agg_e, agg_v), 0.5), agg_v]), P, "mp.glob", residual=W)

        edge_out = T.column(T.linear(E, P["dec.edge.w"], P["dec.edge.b"]), 0)
        glob_out = T.linear(W, P["dec.glob.w"], P["dec.glob.b"])
        if cfg.dueling:
            value = T.column(glob_out, 0)
            adv = T.concat([edge_out, T.column(glob_out, 1)], axis=0)
            slot_graph = np.concatenate([batch.edge_graph, np.arange(G)])
            feas = np.flatnonzero(batch.mask)
            mean_adv = T.segment_mean(T.gather(adv, feas), slot_graph[feas], G)
            q = T.add(T.sub(adv, T.gather(mean_adv, slot_graph)), T.gather(value, slot_graph))
            n_e = batch.edges.shape[0]
            edge_q = T.gather(q, np.arange(n_e))
            noop_q = T.gather(q, np.arange(n_e, n_e + G))
        else:
            edge_q, noop_q = edge_out, T.column(glob_out, 0)
        cache = ForwardCache(P, edge_q, noop_q)
        cache.batch = batch
        return edge_q.data.copy(), noop_q.data.copy(), cache

    def backward(self, cache: ForwardCache, d_edge_q, d_noop_q) -> dict:
        """Gradients of ``<d_edge_q, edge_q> + <d_noop_q, noop_q>`` w.r.t. all parameters."""
        if cache.used:
            raise CacheReuseError("forward cache was already consumed by backward")
        cache.used = True
        T.backward([cache.edge_q, cache.noop_q], [d_edge_q, d_noop_q])
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in cache.leaves.items()}

    def slot_values(self, graph: StateGraph, params: dict | None = None) -> np.ndarray:
        """Q value for every action slot of ``graph`` (edges then noop)."""
        edge_q, noop_q, _ = self.forward(graph, params, grad=False)
        return np.append(edge_q, noop_q[0])

    def batch_slot_values(self, graphs, params: dict | None = None) -> list:
        batch = graphs if isinstance(graphs, GraphBatch) else GraphBatch.from_graphs(graphs)
        edge_q, noop_q, _ = self.forward(batch, params, grad=False)
        return batch.split(edge_q, noop_q)

    # ------------------------------------------------------------ checkpoint
    def save(self, path) -> None:
        save_checkpoint(path, self.config, self.params)

    @classmethod
    def load(cls, path) -> "QNet":
        cfg, params, _ = load_checkpoint(path)
        return cls(cfg, params)


def save_checkpoint(path, config: QNetConfig, params: dict, extra: dict | None = None) -> None:
    """Write ``CPQN`` magic, a little-endian uint32 header length, a UTF-8 JSON
    header (config, parameter names/shapes, byte order) and the parameters as
    one flat little-endian float64 payload in header order."""
    names = sorted(params)
    header = {
        "version": CHECKPOINT_VERSION,
        "dtype": "<f8",
        "config": asdict(config),
        "params": [[n, list(params[n].shape)] for n in names],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(params[n], dtype="<f8").tobytes() for n in names)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a Q-network checkpoint")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + hlen])
    if header["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['version']}")
    flat = np.frombuffer(raw[8 + hlen:], dtype="<f8")
    params, pos = {}, 0
    for name, shape in header["params"]:
        size = int(np.prod(shape)) if shape else 1
        params[name] = flat[pos:pos + size].reshape(shape).astype(np.float64)
        pos += size
    if pos != flat.size:
        raise ValueError("checkpoint payload size does not match its header")
    return QNetConfig(**header["config"]), params, header.get("extra", {})
