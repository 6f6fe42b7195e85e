"""Seeded random streams.

Every random draw in the package goes through a :class:`Stream`, which wraps
numpy's Philox-4x64 counter-based bit generator.  Independent streams are
derived from a master seed with :class:`numpy.random.SeedSequence` using a
spawn key ``(trial, purpose, *extra)``, so adding or re-ordering trials never
shifts the draws of another trial.

Variates are produced from uniforms by fixed transforms so that the recipe can
be reimplemented elsewhere:

* uniforms on the open interval (0, 1): ``(k + 0.5) / 2**53`` with ``k`` a
  53-bit integer from the generator;
* standard normals: inverse normal CDF (``scipy.special.ndtri``) of uniforms;
* unit exponentials: ``-log(u)``;
* Dirichlet(1, ..., 1): normalized unit exponentials;
* categorical draws: inverse CDF, i.e. the first index whose cumulative
  probability exceeds ``u``.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np
from scipy.special import ndtri

_TWO53 = float(2**53)


class Purpose(IntEnum):
    """Stream labels; the integer value is part of the spawn key."""

    GAME = 0
    SAMPLE = 1
    TRANSITIONS = 2
    SCAN = 3
    MISC = 9


class Stream:
    """A reproducible source of variates."""

    def __init__(self, seed: int, *key: int):
        ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
        self._gen = np.random.Generator(np.random.Philox(ss))
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)

    def uniform(self, size=None) -> np.ndarray:
        k = self._gen.integers(0, 2**53, size=size, dtype=np.int64)
        return (k + 0.5) / _TWO53

    def normal(self, size=None) -> np.ndarray:
        return ndtri(self.uniform(size))

    def exponential(self, size=None) -> np.ndarray:
        return -np.log(self.uniform(size))

    def dirichlet_ones(self, k: int, size=()) -> np.ndarray:
        """Dirichlet(1,...,1) draws over ``k`` categories; last axis sums to 1."""
        shape = tuple(np.atleast_1d(size)) if size != () else ()
        e = self.exponential(shape + (k,))
        return e / e.sum(axis=-1, keepdims=True)

    def categorical(self, p: np.ndarray, size: int) -> np.ndarray:
        """``size`` i.i.d. indices drawn from the probability vector ``p``."""
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, self.uniform(size), side="right")
        return np.minimum(idx, len(p) - 1)


def stream(seed: int, trial: int, purpose: Purpose | int, *extra: int) -> Stream:
    """Independent stream for one (trial, purpose) pair of a master seed."""
    return Stream(seed, trial, int(purpose), *extra)
