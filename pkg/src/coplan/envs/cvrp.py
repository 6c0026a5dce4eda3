"""Single-vehicle CVRP simulator, offline and online.

Locations are numbered 0 (depot) and ``i + 1`` for customer ``i``.  The vehicle
drives straight lines at velocity ``velocity``; every step costs the distance
travelled, so the episode return is minus the total route length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..mdp import NOOP, Action, Env, MaskingViolation, Transition, make_rng
from .distributions import CUSTOMER_POSITIONS, CUSTOMER_TIMES

DEPOT = 0
DEMAND_RANGE = (1, 10)
# calibrated so that quasi-offline baselines land near published online costs
ONLINE_VELOCITY = 0.2
_KEY_DIGITS = 9


@dataclass(frozen=True, eq=False)
class CvrpInstance:
    depot: tuple[float, float]
    xy: np.ndarray  # (n, 2)
    demand: np.ndarray  # (n,) int
    arrival: np.ndarray  # (n,)
    capacity: int
    velocity: float = 1.0
    online: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.demand)
        if self.xy.shape != (n, 2) or self.arrival.shape != (n,):
            raise ValueError("customer arrays have inconsistent lengths")
        if n and (self.demand.min() < 1 or self.demand.max() > self.capacity):
            raise ValueError("every demand must lie in [1, capacity]")
        if self.velocity <= 0:
            raise ValueError("velocity must be positive")
        if not self.online and np.any(self.arrival != 0):
            raise ValueError("offline instances must have zero arrival times")

    @property
    def n(self) -> int:
        return len(self.demand)

    def locations(self) -> np.ndarray:
        return np.vstack([np.asarray(self.depot)[None, :], self.xy])

    def distance_matrix(self) -> np.ndarray:
        loc = self.locations()
        return np.sqrt(((loc[:, None, :] - loc[None, :, :]) ** 2).sum(-1))


def generate_offline(n: int, capacity: int, seed: int, velocity: float = 1.0) -> CvrpInstance:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed)
    depot = rng.uniform(size=2)
    xy = rng.uniform(size=(n, 2))
    demand = rng.integers(DEMAND_RANGE[0], DEMAND_RANGE[1] + 1, size=n)
    return CvrpInstance(
        depot=(float(depot[0]), float(depot[1])),
        xy=xy,
        demand=demand,
        arrival=np.zeros(n),
        capacity=int(capacity),
        velocity=velocity,
        online=False,
        meta={"generator": "cvrp-offline", "seed": seed},
    )


def generate_online(n: int, capacity: int, seed: int, velocity: float = ONLINE_VELOCITY) -> CvrpInstance:
    """Online instance: TGMM positions and arrival times, depot ~ U[0,1]^2."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed)
    depot = rng.uniform(size=2)
    xy = CUSTOMER_POSITIONS.sample(rng, n)
    arrival = CUSTOMER_TIMES.sample(rng, n)
    demand = rng.integers(DEMAND_RANGE[0], DEMAND_RANGE[1] + 1, size=n)
    return CvrpInstance(
        depot=(float(depot[0]), float(depot[1])),
        xy=xy,
        demand=demand,
        arrival=arrival,
        capacity=int(capacity),
        velocity=velocity,
        online=True,
        meta={"generator": "cvrp-online", "seed": seed},
    )


class CvrpEnv(Env):
    """Decision-event simulator for one vehicle.

    A decision happens whenever the vehicle reaches its destination and there
    is something to decide.  Online, a vehicle idling at the depot with no
    pending customer waits for the next arrival without a decision.
    """

    def __init__(self, instance: CvrpInstance, allow_noop: Optional[bool] = None, seed: int = 0):
        self.instance = instance
        self.online = instance.online
        self.allow_noop = self.online if allow_noop is None else (allow_noop and self.online)
        self.capacity = int(instance.capacity)
        self.velocity = float(instance.velocity)
        self.n = instance.n
        self.set_seed(seed)
        self.reset()

    # ----------------------------------------------------------------- state
    def reset(self, seed: Optional[int] = None) -> None:
        if seed is not None:
            self.set_seed(seed)
        inst = self.instance
        self.px = (float(inst.depot[0]),) + tuple(float(v) for v in inst.xy[:, 0])
        self.py = (float(inst.depot[1]),) + tuple(float(v) for v in inst.xy[:, 1])
        self.dem = (0,) + tuple(int(d) for d in inst.demand)
        self.arr = (0.0,) + tuple(float(a) for a in inst.arrival)
        order = sorted(range(self.n), key=lambda i: (self.arr[i + 1], i))
        self.future = tuple(i + 1 for i in order)
        self.pending: tuple[int, ...] = ()
        self.loc = DEPOT
        self.cap = self.capacity
        self.clock = 0.0
        self.dist = 0.0
        self.t = 0
        self.done = False
        self.horizon = math.inf
        self._reveal()
        self._settle()

    def snapshot(self) -> tuple:
        return (self.loc, self.cap, self.pending, self.future, self.clock, self.dist,
                self.t, self.done, self.px, self.py, self.dem, self.arr, self.horizon)

    def restore(self, token: tuple) -> None:
        (self.loc, self.cap, self.pending, self.future, self.clock, self.dist,
         self.t, self.done, self.px, self.py, self.dem, self.arr, self.horizon) = token

    def state_key(self):
        """Canonical key of the visible state.

        Online, pending customers may come from a resampled future, so their
        attributes are part of the key.
        """
        if self.online:
            px, py, dem = self.px, self.py, self.dem
            return (self.loc, self.cap, tuple((c, px[c], py[c], dem[c]) for c in self.pending),
                    round(self.clock, _KEY_DIGITS))
        return (self.loc, self.cap, self.pending)

    def objective(self) -> float:
        return self.dist

    @property
    def served(self) -> int:
        return self.n - len(self.pending) - len(self.future)

    # ------------------------------------------------------------- dynamics
    def _reveal(self) -> None:
        fut = self.future
        if not fut:
            return
        arr = self.arr
        k = 0
        while k < len(fut) and arr[fut[k]] <= self.clock:
            k += 1
        if k:
            self.pending = tuple(sorted(self.pending + fut[:k]))
            self.future = fut[k:]

    def _settle(self) -> None:
        """Skip non-decision time: idle at the depot until a customer arrives."""
        while self.loc == DEPOT and not self.pending and self.future:
            self.clock = max(self.clock, self.arr[self.future[0]])
            self._reveal()
        if not self.pending and not self.future and self.loc == DEPOT:
            self.done = True

    def feasible_actions(self) -> list[Action]:
        if self.done:
            return []
        loc, cap, dem = self.loc, self.cap, self.dem
        acts = [Action(loc, c) for c in self.pending if dem[c] <= cap]
        if loc != DEPOT:
            acts.append(Action(loc, DEPOT))
        if self.allow_noop and self.future:
            acts.append(NOOP)
        return acts

    def is_feasible(self, action: Action) -> bool:
        if self.done:
            return False
        if action.source < 0:
            return self.allow_noop and bool(self.future)
        if action.source != self.loc:
            return False
        if action.target == DEPOT:
            return self.loc != DEPOT
        return action.target in self.pending and self.dem[action.target] <= self.cap

    def step(self, action: Action) -> Transition:
        if not self.is_feasible(action):
            raise MaskingViolation(f"{action!r} is not feasible at location {self.loc}")
        t0, clock0 = self.t, self.clock
        if action.source < 0:
            self.clock = self.arr[self.future[0]]
            reward = 0.0
        else:
            tgt = action.target
            d = math.hypot(self.px[tgt] - self.px[self.loc], self.py[tgt] - self.py[self.loc])
            self.dist += d
            self.clock += d / self.velocity
            self.loc = tgt
            if tgt == DEPOT:
                self.cap = self.capacity
            else:
                self.cap -= self.dem[tgt]
                self.pending = tuple(c for c in self.pending if c != tgt)
            reward = -d
        self._reveal()
        self._settle()
        self.t += 1
        return Transition(t0, action, reward, self.t, self.done, self.clock - clock0)

    # ---------------------------------------------------------------- online
    def resample_future(self, rng: np.random.Generator, horizon: float = math.inf) -> None:
        """Redraw every unrevealed customer from the TGMM, given it arrives later.

        Customers arriving after ``horizon`` are dropped (rollout preemption).
        """
        if not self.online:
            return
        ids = self.future
        px, py, dem, arr = list(self.px), list(self.py), list(self.dem), list(self.arr)
        if ids:
            times = CUSTOMER_TIMES.sample(rng, len(ids), above=self.clock)
            pos = CUSTOMER_POSITIONS.sample(rng, len(ids))
            demand = rng.integers(DEMAND_RANGE[0], DEMAND_RANGE[1] + 1, size=len(ids))
            for k, c in enumerate(ids):
                px[c], py[c] = float(pos[k, 0]), float(pos[k, 1])
                dem[c] = min(int(demand[k]), self.capacity)
                arr[c] = max(float(times[k]), self.clock)
        self.px, self.py, self.dem, self.arr = tuple(px), tuple(py), tuple(dem), tuple(arr)
        self.future = tuple(sorted((c for c in ids if arr[c] <= horizon), key=lambda c: (arr[c], c)))
        self.horizon = horizon
        self._reveal()
        self._settle()

    def truncate_future(self, horizon: float) -> None:
        """Suppress known future arrivals after ``horizon`` (no resampling)."""
        self.future = tuple(c for c in self.future if self.arr[c] <= horizon)
        self.horizon = horizon
        self._settle()

    # ----------------------------------------------------------------- views
    def position(self, loc: int) -> tuple[float, float]:
        return self.px[loc], self.py[loc]

    def distance(self, a: int, b: int) -> float:
        return math.hypot(self.px[a] - self.px[b], self.py[a] - self.py[b])

    def graph(self):
        from ..graph import encode_cvrp

        return encode_cvrp(self)
