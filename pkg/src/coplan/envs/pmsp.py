"""Identical parallel machines with sequence-dependent setups, TWCT objective.

Classes are numbered ``1..c``; class 0 marks a machine that never ran a job
(setup from it is zero).  Job ``j`` on machine ``i`` occupies the machine for
``setup[last_class_i, class_j] + p_j`` time units.

The dense reward charges ``-(weight of arrived, uncompleted jobs) * dt`` over
every elapsed interval plus ``-w_j * a_j`` at the arrival of job ``j``, so the
episode return is exactly minus the absolute-clock TWCT ``sum_j w_j c_j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..mdp import NOOP, Action, Env, MaskingViolation, Transition, make_rng

P_RANGE = (1, 100)
W_RANGE = (1, 10)
SETUP_RANGE = (1, 50)
_KEY_DIGITS = 9


@dataclass(frozen=True)
class OnlineArrivalConfig:
    intervals: int = 16
    interval_length: float = 130.0
    expected_total: float = 80.0
    classes: int = 5
    machines: int = 3
    flipped: bool = False  # class i weighted 1/(c + 1 - i) instead of 1/i

    def __post_init__(self):
        if self.intervals < 1 or self.classes < 1 or self.machines < 1:
            raise ValueError("intervals, classes and machines must be >= 1")
        if self.interval_length <= 0 or self.expected_total < 0:
            raise ValueError("interval_length must be positive, expected_total >= 0")

    def rates(self) -> np.ndarray:
        """Per-class Poisson rate per interval; class ``i`` is weighted ``1/i``."""
        inv = 1.0 / np.arange(1, self.classes + 1)
        if self.flipped:
            inv = inv[::-1]
        return self.expected_total * inv / inv.sum() / self.intervals


@dataclass(frozen=True, eq=False)
class PmspInstance:
    machines: int
    classes: int
    setup: np.ndarray  # (c, c), zero diagonal
    job_class: np.ndarray  # (n,) in 1..c
    p: np.ndarray
    w: np.ndarray
    arrival: np.ndarray
    online: bool = False
    arrivals: Optional[OnlineArrivalConfig] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.p)
        c = self.classes
        if self.machines < 1 or c < 1:
            raise ValueError("machines and classes must be >= 1")
        if self.setup.shape != (c, c) or np.any(np.diag(self.setup) != 0) or np.any(self.setup < 0):
            raise ValueError("setup must be a non-negative c x c matrix with zero diagonal")
        if not (len(self.job_class) == len(self.w) == len(self.arrival) == n):
            raise ValueError("job arrays have inconsistent lengths")
        if n and (self.job_class.min() < 1 or self.job_class.max() > c):
            raise ValueError("job classes must lie in 1..c")

    @property
    def n(self) -> int:
        return len(self.p)

    def setup_time(self, last_class: int, cls: int) -> float:
        return 0.0 if last_class == 0 else float(self.setup[last_class - 1, cls - 1])


def _setup_matrix(rng: np.random.Generator, c: int) -> np.ndarray:
    s = rng.integers(SETUP_RANGE[0], SETUP_RANGE[1] + 1, size=(c, c))
    np.fill_diagonal(s, 0)
    return s


def _draw_jobs(rng: np.random.Generator, n: int, c: int):
    cls = rng.integers(1, c + 1, size=n)
    p = rng.integers(P_RANGE[0], P_RANGE[1] + 1, size=n)
    w = rng.integers(W_RANGE[0], W_RANGE[1] + 1, size=n)
    return cls, p, w


def generate_offline(n: int, m: int, c: int, seed: int) -> PmspInstance:
    if min(n, m, c) < 1:
        raise ValueError("n, m and c must be >= 1")
    rng = make_rng(seed)
    setup = _setup_matrix(rng, c)
    cls, p, w = _draw_jobs(rng, n, c)
    return PmspInstance(m, c, setup, cls, p, w, np.zeros(n), online=False,
                        meta={"generator": "pmsp-offline", "seed": seed})


def _poisson_jobs(rng, config: OnlineArrivalConfig, first_interval: int, horizon: float):
    starts = np.arange(first_interval, config.intervals) * config.interval_length
    starts = starts[starts <= horizon]
    counts = rng.poisson(config.rates(), size=(len(starts), config.classes))
    arrival = np.repeat(np.repeat(starts, config.classes), counts.ravel())
    cls = np.repeat(np.tile(np.arange(1, config.classes + 1), len(starts)), counts.ravel())
    n = len(cls)
    p = rng.integers(P_RANGE[0], P_RANGE[1] + 1, size=n)
    w = rng.integers(W_RANGE[0], W_RANGE[1] + 1, size=n)
    return cls, p, w, arrival.astype(float)


def generate_online(config: OnlineArrivalConfig, seed: int) -> PmspInstance:
    rng = make_rng(seed)
    setup = _setup_matrix(rng, config.classes)
    cls, p, w, arrival = _poisson_jobs(rng, config, 0, math.inf)
    return PmspInstance(config.machines, config.classes, setup, cls, p, w, arrival,
                        online=True, arrivals=config,
                        meta={"generator": "pmsp-online", "seed": seed})


class PmspEnv(Env):
    """Decision-event scheduler.

    A decision happens when some machine is free and some job is pending.
    Several free machines at one instant give several consecutive decisions
    at the same clock value.
    """

    def __init__(self, instance: PmspInstance, allow_noop: Optional[bool] = None, seed: int = 0):
        self.instance = instance
        self.online = instance.online
        self.allow_noop = self.online if allow_noop is None else (allow_noop and self.online)
        self.m = instance.machines
        self.c = instance.classes
        self.setup = tuple(tuple(float(v) for v in row) for row in instance.setup)
        self.set_seed(seed)
        self.reset()

    def reset(self, seed: Optional[int] = None) -> None:
        if seed is not None:
            self.set_seed(seed)
        inst = self.instance
        self.cls = tuple(int(v) for v in inst.job_class)
        self.p = tuple(float(v) for v in inst.p)
        self.w = tuple(float(v) for v in inst.w)
        self.arr = tuple(float(v) for v in inst.arrival)
        n = len(self.p)
        self.future = tuple(sorted(range(n), key=lambda j: (self.arr[j], j)))
        self.pending: tuple[int, ...] = ()
        self.busy = (-1,) * self.m
        self.fin = (0.0,) * self.m
        self.kappa = (0,) * self.m
        self.comp = (-1.0,) * n
        self.active_w = 0.0
        self.cost = 0.0
        self.clock = 0.0
        self.t = 0
        self.done = False
        self.horizon = math.inf
        self._reveal()
        self._advance()

    def snapshot(self) -> tuple:
        return (self.pending, self.future, self.busy, self.fin, self.kappa, self.comp,
                self.active_w, self.cost, self.clock, self.t, self.done,
                self.cls, self.p, self.w, self.arr, self.horizon)

    def restore(self, token: tuple) -> None:
        (self.pending, self.future, self.busy, self.fin, self.kappa, self.comp,
         self.active_w, self.cost, self.clock, self.t, self.done,
         self.cls, self.p, self.w, self.arr, self.horizon) = token

    def state_key(self):
        clock = self.clock
        rem = tuple(round(f - clock, _KEY_DIGITS) if b >= 0 else 0.0 for f, b in zip(self.fin, self.busy))
        if self.online:
            cls, p, w = self.cls, self.p, self.w
            jobs = tuple((j, cls[j], p[j], w[j]) for j in self.pending)
            running = tuple((b, w[b]) if b >= 0 else (-1, 0.0) for b in self.busy)
            return (jobs, running, rem, self.kappa, round(clock, _KEY_DIGITS))
        return (self.pending, self.busy, rem, self.kappa)

    def objective(self) -> float:
        return self.cost

    def twct(self) -> float:
        """Sum of ``w_j c_j`` over completed jobs."""
        return float(sum(self.w[j] * c for j, c in enumerate(self.comp) if c >= 0))

    def remaining(self) -> tuple[float, ...]:
        return tuple(max(f - self.clock, 0.0) if b >= 0 else 0.0 for f, b in zip(self.fin, self.busy))

    def setup_time(self, machine: int, job: int) -> float:
        k = self.kappa[machine]
        return 0.0 if k == 0 else self.setup[k - 1][self.cls[job] - 1]

    # ------------------------------------------------------------- dynamics
    def _reveal(self) -> None:
        fut = self.future
        k = 0
        arr = self.arr
        while k < len(fut) and arr[fut[k]] <= self.clock:
            j = fut[k]
            self.active_w += self.w[j]
            self.cost += self.w[j] * arr[j]
            k += 1
        if k:
            self.pending = tuple(sorted(self.pending + fut[:k]))
            self.future = fut[k:]

    def _next_event(self) -> float:
        t = math.inf
        for f, b in zip(self.fin, self.busy):
            if b >= 0 and f < t:
                t = f
        if self.future:
            t = min(t, self.arr[self.future[0]])
        return t

    def _jump(self, t_next: float) -> None:
        self.cost += self.active_w * (t_next - self.clock)
        self.clock = t_next
        if any(b >= 0 and f <= t_next for f, b in zip(self.fin, self.busy)):
            busy = list(self.busy)
            comp = list(self.comp)
            for i, (f, b) in enumerate(zip(self.fin, busy)):
                if b >= 0 and f <= t_next:
                    comp[b] = f
                    self.active_w -= self.w[b]
                    busy[i] = -1
            self.busy = tuple(busy)
            self.comp = tuple(comp)
        self._reveal()

    def _advance(self) -> None:
        while True:
            if self.pending and -1 in self.busy:
                return
            t_next = self._next_event()
            if t_next == math.inf:
                self.done = True
                self.active_w = 0.0
                return
            self._jump(t_next)

    def _noop_feasible(self) -> bool:
        return self.allow_noop and (bool(self.future) or any(b >= 0 for b in self.busy))

    def free_machines(self) -> list[int]:
        return [i for i, b in enumerate(self.busy) if b < 0]

    def feasible_actions(self) -> list[Action]:
        if self.done:
            return []
        acts = [Action(j, i) for i in self.free_machines() for j in self.pending]
        if self._noop_feasible():
            acts.append(NOOP)
        return acts

    def is_feasible(self, action: Action) -> bool:
        if self.done:
            return False
        if action.source < 0:
            return self._noop_feasible()
        j, i = action
        return 0 <= i < self.m and self.busy[i] < 0 and j in self.pending

    def step(self, action: Action) -> Transition:
        if not self.is_feasible(action):
            raise MaskingViolation(f"{action!r} is not feasible")
        # the first transition also carries cost accrued while reset skipped
        # ahead to the first decision, so rewards always sum to -objective
        t0, clock0, cost0 = self.t, self.clock, (self.cost if self.t else 0.0)
        if action.source < 0:
            self._jump(self._next_event())
        else:
            j, i = action
            dur = self.setup_time(i, j) + self.p[j]
            busy, fin, kappa = list(self.busy), list(self.fin), list(self.kappa)
            busy[i], fin[i], kappa[i] = j, self.clock + dur, self.cls[j]
            self.busy, self.fin, self.kappa = tuple(busy), tuple(fin), tuple(kappa)
            self.pending = tuple(x for x in self.pending if x != j)
        self._advance()
        self.t += 1
        return Transition(t0, action, -(self.cost - cost0), self.t, self.done, self.clock - clock0)

    # ---------------------------------------------------------------- online
    def resample_future(self, rng: np.random.Generator, horizon: float = math.inf) -> None:
        """Redraw jobs of all intervals that start after the current clock."""
        cfg = self.instance.arrivals
        if not self.online or cfg is None:
            return
        first = int(math.floor(self.clock / cfg.interval_length)) + 1
        if first * cfg.interval_length <= self.clock:
            first += 1
        cls, p, w, arr = _poisson_jobs(rng, cfg, first, horizon)
        base = len(self.p)
        self.cls = self.cls + tuple(int(v) for v in cls)
        self.p = self.p + tuple(float(v) for v in p)
        self.w = self.w + tuple(float(v) for v in w)
        self.arr = self.arr + tuple(float(v) for v in arr)
        self.comp = self.comp + (-1.0,) * len(cls)
        self.future = tuple(range(base, base + len(cls)))
        self.horizon = horizon
        self._reveal()
        self._advance()

    def truncate_future(self, horizon: float) -> None:
        self.future = tuple(j for j in self.future if self.arr[j] <= horizon)
        self.horizon = horizon
        self._advance()

    def graph(self):
        from ..graph import encode_pmsp

        return encode_pmsp(self)
