"""Bounded uniform prior over the damage box."""

from dataclasses import dataclass

import numpy as np

from copvae.errors import ParameterError


@dataclass(frozen=True)
class UniformPrior:
    b_low: np.ndarray
    b_up: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.b_low, dtype=float))
        up = np.atleast_1d(np.asarray(self.b_up, dtype=float))
        if lo.shape != up.shape or np.any(lo >= up):
            raise ParameterError("need b_low < b_up componentwise")
        object.__setattr__(self, "b_low", lo)
        object.__setattr__(self, "b_up", up)

    @classmethod
    def unit(cls, d):
        return cls(np.zeros(d), np.ones(d))

    @property
    def volume(self):
        return float(np.prod(self.b_up - self.b_low))

    def contains(self, z):
        z = np.asarray(z, dtype=float)
        return np.all((z >= self.b_low) & (z <= self.b_up), axis=-1)

    def logpdf(self, z):
        return np.where(self.contains(z), -np.log(self.volume), -np.inf)

    def sample(self, n, rng):
        return rng.uniform(self.b_low, self.b_up, size=(n, self.b_low.size))
