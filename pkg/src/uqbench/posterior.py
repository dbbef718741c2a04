"""Predictive posterior shared by every surrogate."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Posterior:
    """Mean with epistemic and aleatoric standard deviations, per query row."""

    mu: np.ndarray
    sigma_eps: np.ndarray
    sigma_n: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        eps = np.broadcast_to(np.asarray(self.sigma_eps, dtype=float), mu.shape).copy()
        noise = np.broadcast_to(np.asarray(self.sigma_n, dtype=float), mu.shape).copy()
        if (eps < 0).any() or (noise < 0).any():
            raise ValueError("standard deviations must be non-negative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma_eps", eps)
        object.__setattr__(self, "sigma_n", noise)

    def __len__(self):
        return len(self.mu)

    @property
    def total_std(self):
        return np.sqrt(self.sigma_eps**2 + self.sigma_n**2)

    def __eq__(self, other):
        if not isinstance(other, Posterior):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("mu", "sigma_eps", "sigma_n")
        )
