"""Offline DQN on state graphs: replay (optionally prioritised), epsilon-greedy
exploration, a periodically synced target network and global-norm clipping.
"""
from __future__ import annotations

import copy
import csv
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .envs import make_env
from .graph import StateGraph, encode
from .mdp import make_rng
from .nn.qnet import GraphBatch, QNet, QNetConfig


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class DqnConfig:
    total_steps: int = 20_000
    target_update: int = 5_000
    random_steps: int = 5_000
    learning_starts: int = 5_000
    train_freq: int = 1
    gamma: float = 1.0
    batch_size: int = 32
    buffer_size: int = 5_000
    per_alpha: float = 0.0
    per_beta0: float = 0.4
    per_eps: float = 1e-6
    exploration_fraction: float = 0.3
    final_eps: float = 0.1
    lr: float = 1e-3
    lr_decay: float = 0.0
    grad_clip: float = 200.0
    double_q: bool = False
    n_step: int = 1
    optimizer: str = "sgd"
    reward_scale: float = 1.0
    eval_every: int = 1_000
    eval_episodes: int = 10

    def __post_init__(self):
        if self.total_steps < 0 or self.batch_size < 1 or self.buffer_size < 1:
            raise ValueError("total_steps >= 0, batch_size >= 1 and buffer_size >= 1 required")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.n_step < 1 or self.train_freq < 1 or self.target_update < 1:
            raise ValueError("n_step, train_freq and target_update must be >= 1")
        if not 0.0 <= self.lr_decay < 1.0:
            raise ValueError("lr_decay must lie in [0, 1)")

    @classmethod
    def pmsp(cls, **kw) -> "DqnConfig":
        return cls(**{"batch_size": 32, "per_alpha": 0.0, "exploration_fraction": 0.3,
                      "final_eps": 0.1, **kw})

    @classmethod
    def cvrp(cls, **kw) -> "DqnConfig":
        return cls(**{"batch_size": 128, "per_alpha": 0.025, "exploration_fraction": 0.1,
                      "final_eps": 1e-4, **kw})

    # CPU-sized runs (2e4 steps) on 5-customer CVRP and 8-job PMSP
    @classmethod
    def desk_cvrp(cls, **kw) -> "DqnConfig":
        return cls.cvrp(**{"total_steps": 20_000, "batch_size": 32, "optimizer": "adam", "lr": 1e-3,
                           "random_steps": 1000, "learning_starts": 1000, "target_update": 500,
                           "exploration_fraction": 0.3, "final_eps": 0.05, **kw})

    @classmethod
    def desk_pmsp(cls, **kw) -> "DqnConfig":
        return cls.pmsp(**{"total_steps": 20_000, "optimizer": "adam", "lr": 1e-3, "random_steps": 1000,
                           "learning_starts": 1000, "target_update": 500, "reward_scale": 1e-3, **kw})


def epsilon(step: int, config: DqnConfig) -> float:
    """Linear decay from 1 to ``final_eps`` over ``exploration_fraction * total_steps``."""
    window = config.exploration_fraction * config.total_steps
    if window <= 0 or step >= window:
        return config.final_eps
    return 1.0 + (config.final_eps - 1.0) * step / window


def learning_rate(step: int, config: DqnConfig) -> float:
    """``lr * decay ** (step / total_steps)`` when a decay is set, else constant."""
    if config.lr_decay <= 0 or config.total_steps == 0:
        return config.lr
    return config.lr * config.lr_decay ** (step / config.total_steps)


@dataclass
class Sample:
    graph: StateGraph
    slot: int
    reward: float
    next_graph: StateGraph
    terminal: bool
    discount: float = 1.0


class ReplayBuffer:
    """Ring buffer; sampling probability proportional to ``priority ** alpha``."""

    def __init__(self, capacity: int, alpha: float = 0.0, eps: float = 1e-6):
        self.capacity = capacity
        self.alpha = alpha
        self.eps = eps
        self.items: list = [None] * capacity
        self.priority = np.zeros(capacity)
        self.stamp = np.full(capacity, -1, dtype=np.int64)
        self.size = 0
        self.next = 0
        self.added = 0

    def __len__(self) -> int:
        return self.size

    def add(self, item) -> int:
        i = self.next
        self.items[i] = item
        self.priority[i] = self.priority[: self.size].max() if self.size else 1.0
        self.stamp[i] = self.added
        self.added += 1
        self.next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def probabilities(self) -> np.ndarray:
        if self.alpha == 0.0:
            return np.full(self.size, 1.0 / self.size)
        p = self.priority[: self.size] ** self.alpha
        return p / p.sum()

    def sample(self, rng: np.random.Generator, batch: int, beta: float = 1.0):
        """Returns ``(indices, items, importance weights)``."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        p = self.probabilities()
        idx = rng.choice(self.size, size=batch, p=p) if self.alpha else rng.integers(self.size, size=batch)
        if self.alpha:
            w = (self.size * p[idx]) ** (-beta)
            w = w / w.max()
        else:
            w = np.ones(batch)
        return idx, [self.items[i] for i in idx], w

    def update(self, idx, td_errors) -> None:
        self.priority[idx] = np.abs(td_errors) + self.eps


def masked_max(values: np.ndarray, mask: np.ndarray) -> float:
    if not mask.any():
        raise RuntimeError("non-terminal state without feasible actions")
    return float(values[mask].max())


def td_target(rewards, next_values: Sequence[np.ndarray], next_masks: Sequence[np.ndarray],
              terminal, gamma: float, online_values: Optional[Sequence[np.ndarray]] = None,
              discounts=None) -> np.ndarray:
    """``r + gamma * max_{a' unmasked} Q_target(s', a')``, or ``r`` when terminal.

    With ``online_values`` (double Q) the argmax is taken over the online
    values and evaluated with the target values.
    """
    y = np.asarray(rewards, dtype=float).copy()
    disc = np.ones(len(y)) if discounts is None else np.asarray(discounts, dtype=float)
    for i in range(len(y)):
        if terminal[i]:
            continue
        mask = np.asarray(next_masks[i], dtype=bool)
        if online_values is None:
            best = masked_max(next_values[i], mask)
        else:
            ov = np.where(mask, online_values[i], -np.inf)
            if not mask.any():
                raise RuntimeError("non-terminal state without feasible actions")
            best = float(next_values[i][int(np.argmax(ov))])
        y[i] += gamma * disc[i] * best
    return y


def greedy_slot(values: np.ndarray, mask: np.ndarray) -> int:
    return int(np.argmax(np.where(mask, values, -np.inf)))


class Optimizer:
    def __init__(self, kind: str, params: dict):
        self.kind = kind
        self.t = 0
        if kind == "adam":
            self.m = {k: np.zeros_like(v) for k, v in params.items()}
            self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        if self.kind == "sgd":
            for k, g in grads.items():
                params[k] -= lr * g
            return
        b1, b2, eps = 0.9, 0.999, 1e-8
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + eps)


def clip_global_norm(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm > 0:
        s = max_norm / norm
        for k in grads:
            grads[k] *= s
    return norm


def td_loss_and_grads(net: QNet, params: dict, batch: list, targets: np.ndarray, weights: np.ndarray):
    """Importance-weighted mean squared TD error and its parameter gradients."""
    gb = GraphBatch.from_graphs([s.graph for s in batch])
    edge_q, noop_q, cache = net.forward(gb, params)
    n_edges = np.diff(gb.edge_offsets)
    q = np.empty(len(batch))
    pos = []
    for g, s in enumerate(batch):
        if s.slot < n_edges[g]:
            pos.append((0, gb.edge_offsets[g] + s.slot))
            q[g] = edge_q[gb.edge_offsets[g] + s.slot]
        else:
            pos.append((1, g))
            q[g] = noop_q[g]
    td = q - targets
    B = len(batch)
    loss = float(np.mean(weights * td * td))
    d_edge = np.zeros_like(edge_q)
    d_noop = np.zeros_like(noop_q)
    for (kind, j), dq in zip(pos, 2.0 * weights * td / B):
        if kind == 0:
            d_edge[j] += dq
        else:
            d_noop[j] += dq
    return loss, net.backward(cache, d_edge, d_noop), td


@dataclass
class TrainResult:
    params: dict
    final_params: dict
    best_eval: float
    log: list = field(default_factory=list)
    episodes: int = 0


def evaluate(net: QNet, params: dict, instances: Sequence, reward_scale: float = 1.0) -> float:
    """Mean greedy episode objective (cost, lower is better)."""
    costs = []
    for inst in instances:
        env = make_env(inst)
        while not env.done:
            g = encode(env)
            q = net.slot_values(g, params)
            env.step(g.actions[greedy_slot(q, g.mask)])
        costs.append(env.objective())
    return float(np.mean(costs))


def train(make_instance: Callable[[int], object], qnet_config: QNetConfig, config: DqnConfig,
          seed: int = 0, eval_instances: Optional[Sequence] = None,
          progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train a Q-network on episodes from ``make_instance(episode_index)``.

    Returns the parameters with the best evaluation (lowest mean greedy cost on
    ``eval_instances``), the final parameters and a metrics log with rows
    ``{step, loss, epsilon, eval_return}``.
    """
    net = QNet(qnet_config, seed=int(make_rng(seed, 1).integers(2**31)))
    params = net.params
    rng = make_rng(seed, 2)
    if config.total_steps == 0:
        return TrainResult(params, params, math.nan)
    target = copy.deepcopy(params)
    opt = Optimizer(config.optimizer, params)
    buf = ReplayBuffer(config.buffer_size, config.per_alpha, config.per_eps)
    if eval_instances is None:
        eval_instances = [make_instance(10**6 + i) for i in range(config.eval_episodes)]
    best_params, best_eval = copy.deepcopy(params), math.inf
    log, losses = [], []
    episode = 0
    env = make_env(make_instance(episode))
    graph = encode(env)
    window: deque = deque()
    gamma = config.gamma

    def flush(force: bool):
        while window and (force or len(window) >= config.n_step):
            g0, slot0, _, _, _ = window[0]
            ret, disc = 0.0, 1.0
            for (_, _, r, g1, term) in window:
                ret += disc * r
                disc *= gamma
                if term:
                    break
            buf.add(Sample(g0, slot0, ret, g1, term, disc / gamma if gamma > 0 else 0.0))
            window.popleft()
            if not force:
                break

    for step in range(config.total_steps):
        eps = epsilon(step, config)
        feasible = np.flatnonzero(graph.mask)
        if step < config.random_steps or rng.random() < eps:
            slot = int(feasible[rng.integers(len(feasible))])
        else:
            slot = greedy_slot(net.slot_values(graph, params), graph.mask)
        tr = env.step(graph.actions[slot])
        next_graph = encode(env)
        window.append((graph, slot, tr.reward * config.reward_scale, next_graph, tr.terminal))
        flush(force=False)
        if tr.terminal:
            flush(force=True)
            episode += 1
            env = make_env(make_instance(episode))
            next_graph = encode(env)
        graph = next_graph

        if step >= config.learning_starts and len(buf) >= config.batch_size and step % config.train_freq == 0:
            beta = config.per_beta0 + (1.0 - config.per_beta0) * step / config.total_steps
            idx, batch, w = buf.sample(rng, config.batch_size, beta)
            live = [i for i, s in enumerate(batch) if not s.terminal]
            next_vals = [None] * len(batch)
            online_vals = [None] * len(batch) if config.double_q else None
            if live:
                nb = GraphBatch.from_graphs([batch[i].next_graph for i in live])
                tv = nb.split(*net.forward(nb, target, grad=False)[:2])
                for i, v in zip(live, tv):
                    next_vals[i] = v
                if config.double_q:
                    ov = nb.split(*net.forward(nb, params, grad=False)[:2])
                    for i, v in zip(live, ov):
                        online_vals[i] = v
            y = td_target([s.reward for s in batch], next_vals,
                          [s.next_graph.mask for s in batch], [s.terminal for s in batch],
                          gamma, online_vals, [s.discount for s in batch])
            loss, grads, td = td_loss_and_grads(net, params, batch, y, w)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at step {step} (lr={learning_rate(step, config)})")
            clip_global_norm(grads, config.grad_clip)
            opt.step(params, grads, learning_rate(step, config))
            if config.per_alpha > 0:
                buf.update(idx, td)
            losses.append(loss)

        if (step + 1) % config.target_update == 0:
            target = copy.deepcopy(params)

        if (step + 1) % config.eval_every == 0 or step + 1 == config.total_steps:
            ev = evaluate(net, params, eval_instances)
            row = {"step": step + 1, "loss": float(np.mean(losses)) if losses else math.nan,
                   "epsilon": eps, "eval_return": -ev}
            log.append(row)
            losses = []
            if progress is not None:
                progress(row)
            if ev < best_eval:
                best_eval, best_params = ev, copy.deepcopy(params)

    return TrainResult(best_params, params, best_eval, log, episode)


def write_metrics(path, log: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "epsilon", "eval_return"])
        for row in log:
            w.writerow([row["step"], repr(float(row["loss"])), repr(float(row["epsilon"])),
                        repr(float(row["eval_return"]))])
