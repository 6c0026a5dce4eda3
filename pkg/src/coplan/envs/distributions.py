"""Truncated Gaussian mixtures used by the online arrival models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri


@dataclass(frozen=True)
class TruncatedMixture1D:
    means: tuple[float, ...]
    sigmas: tuple[float, ...]
    weights: tuple[float, ...]
    low: float
    high: float

    def _component_mass(self, lo: float):
        mu = np.asarray(self.means)
        sd = np.asarray(self.sigmas)
        a = ndtr((max(lo, self.low) - mu) / sd)
        b = ndtr((self.high - mu) / sd)
        return np.clip(b - a, 0.0, None), a, b

    def cdf(self, x) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float), self.low, self.high)
        mu = np.asarray(self.means)
        sd = np.asarray(self.sigmas)
        w = np.asarray(self.weights) / np.sum(self.weights)
        za = ndtr((self.low - mu) / sd)
        zb = ndtr((self.high - mu) / sd)
        zx = ndtr((x[..., None] - mu) / sd)
        return np.sum(w * (zx - za) / (zb - za), axis=-1)

    def sample(self, rng: np.random.Generator, size: int, above: float = -np.inf) -> np.ndarray:
        """Draw ``size`` values, conditioned on exceeding ``above``.

        Uses the inverse CDF per component, so it is exact and needs no
        rejection loop even for conditions deep in the tail.
        """
        if size == 0:
            return np.empty(0)
        base_mass = self._component_mass(self.low)[0]
        mass, a, b = self._component_mass(above)
        w = np.asarray(self.weights) * mass / base_mass
        if w.sum() <= 0:
            return np.full(size, self.high)
        comp = rng.choice(len(w), size=size, p=w / w.sum())
        u = rng.uniform(size=size)
        p = a[comp] + u * (b[comp] - a[comp])
        p = np.clip(p, 1e-300, 1 - 1e-16)
        x = np.asarray(self.means)[comp] + np.asarray(self.sigmas)[comp] * ndtri(p)
        lo = max(above, self.low)
        return np.clip(x, lo, self.high)


@dataclass(frozen=True)
class TruncatedMixture2D:
    """Mixture of axis-aligned Gaussians, each truncated to a box.

    With a diagonal covariance the box truncation factorises per axis.
    """

    means: tuple[tuple[float, float], ...]
    sigmas: tuple[tuple[float, float], ...]
    weights: tuple[float, ...]
    low: float = 0.0
    high: float = 1.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if size == 0:
            return np.empty((0, 2))
        w = np.asarray(self.weights, dtype=float)
        comp = rng.choice(len(w), size=size, p=w / w.sum())
        mu = np.asarray(self.means)[comp]
        sd = np.asarray(self.sigmas)[comp]
        a = ndtr((self.low - mu) / sd)
        b = ndtr((self.high - mu) / sd)
        u = rng.uniform(size=(size, 2))
        p = np.clip(a + u * (b - a), 1e-300, 1 - 1e-16)
        return np.clip(mu + sd * ndtri(p), self.low, self.high)


# Online CVRP arrival model.
CUSTOMER_POSITIONS = TruncatedMixture2D(
    means=((0.25, 0.25), (0.75, 0.75)),
    sigmas=((0.1, 0.1), (0.1, 0.1)),
    weights=(0.5, 0.5),
)
CUSTOMER_TIMES = TruncatedMixture1D(
    means=(5.0, 20.0, 40.0),
    sigmas=(3.0, 3.0, 3.0),
    weights=(1 / 3, 1 / 3, 1 / 3),
    low=0.0,
    high=40.0,
)
