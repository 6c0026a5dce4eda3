"""Offline-trained graph Q-networks plus online tree search for CVRP and PMSP."""
from .mdp import NOOP, RNG_ALGORITHM, Action, EpisodeError, MaskingViolation, Transition, discounted_return, make_rng, telescoping_check

__version__ = "0.1.0"
