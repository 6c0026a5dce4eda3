"""Shared MDP plumbing: actions, transitions, returns and seeded RNG streams."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Hashable, NamedTuple, Sequence

import numpy as np

RNG_ALGORITHM = "philox4x64"


class MaskingViolation(ValueError):
    """Raised when an infeasible (masked) action is requested."""


class EpisodeError(ValueError):
    """Raised for malformed episodes, e.g. non-contiguous transition lists."""


class Action(NamedTuple):
    """An edge action ``source -> target`` in environment ids, or the noop.

    CVRP uses location ids (0 is the depot, customer ``i`` is ``i + 1``), so an
    edge runs from the vehicle's current location to its destination.  PMSP
    uses ``(job id, machine id)``.
    """

    source: int
    target: int

    @property
    def is_noop(self) -> bool:
        return self.source < 0

    def __repr__(self) -> str:
        return "Noop" if self.is_noop else f"Edge({self.source}->{self.target})"


NOOP = Action(-1, -1)


@dataclass(frozen=True)
class Transition:
    state_before: int
    action: Action
    reward: float
    state_after: int
    terminal: bool
    elapsed: float


def make_rng(*keys: int) -> np.random.Generator:
    """Counter-based generator for the stream identified by ``keys``.

    ``make_rng(seed, rollout)`` gives independent streams per rollout of one
    instance seed.
    """
    ss = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys])
    return np.random.Generator(np.random.Philox(ss))


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    total = 0.0
    for r in reversed(list(rewards)):
        total = r + gamma * total
    return total


def telescoping_check(transitions: Sequence[Transition]) -> float:
    """Sum the rewards of one complete episode.

    With dense rewards ``f(s') - f(s)`` and an initial objective of zero this
    equals minus the final objective value.
    """
    if not transitions:
        return 0.0
    for prev, nxt in zip(transitions, transitions[1:]):
        if prev.state_after != nxt.state_before or prev.terminal:
            raise EpisodeError("transitions do not form one contiguous episode")
    if not transitions[-1].terminal:
        raise EpisodeError("episode does not end in a terminal state")
    return float(sum(t.reward for t in transitions))


class Env:
    """Behavioural contract shared by the CVRP and PMSP simulators.

    Subclasses keep their whole mutable state in plain attributes and
    implement ``snapshot``/``restore`` as immutable tuples so that tree search
    can rewind cheaply.
    """

    online: bool = False
    done: bool = False
    clock: float = 0.0

    def reset(self, seed: int | None = None) -> None:
        raise NotImplementedError

    def feasible_actions(self) -> list[Action]:
        raise NotImplementedError

    def step(self, action: Action) -> Transition:
        raise NotImplementedError

    def snapshot(self) -> tuple:
        raise NotImplementedError

    def restore(self, token: tuple) -> None:
        raise NotImplementedError

    def set_seed(self, seed: int | Sequence[int]) -> None:
        keys = (seed,) if isinstance(seed, (int, np.integer)) else tuple(seed)
        self.rng = make_rng(*keys)

    def state_key(self) -> Hashable:
        raise NotImplementedError

    def objective(self) -> float:
        """Running cost of the partial solution (to be minimised)."""
        raise NotImplementedError

    def resample_future(self, rng: np.random.Generator, horizon: float = np.inf) -> None:
        """Replace hidden future arrivals by a fresh draw from the arrival model.

        Arrivals later than ``horizon`` are suppressed.  A no-op offline.
        """

    def graph(self) -> Any:
        raise NotImplementedError

    def run(self, policy, max_steps: int = 1_000_000) -> list[Transition]:
        """Play ``policy(env) -> Action`` to the end, returning the transitions."""
        out = []
        while not self.done:
            if len(out) >= max_steps:
                raise EpisodeError("episode exceeded max_steps")
            out.append(self.step(policy(self)))
        return out
