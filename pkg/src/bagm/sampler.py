"""Counter-based simple random sampling with replacement.

Generator: Philox4x64-10 (Salmon et al., SC'11), the same bijection as
``numpy.random.Philox``. Keys are derived with :func:`hash64`, a SplitMix64
chain, so subsample ``k`` depends only on ``(master_seed, k, attempt)``.
Bounded integers use Lemire's multiply-and-reject method, so there is no
modulo bias for any population size.

These choices are part of the reproducibility contract: changing any of
them changes every subsample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from ._backend import kernels

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

# Counter word 1 separates independent uses of one key.
TAG_INDEX = 0x5253_5752  # "RSWR"
TAG_STREAM = 0x5354_524D  # "STRM"


def mix64(z: int) -> int:
    """SplitMix64 finaliser."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def hash64(*words: int) -> int:
    """Hash a sequence of integers (taken mod 2**64) to one 64-bit value."""
    h = mix64(0x6A09E667F3BCC908 + len(words))
    for w in words:
        h = mix64(h ^ mix64((int(w) + GOLDEN) & MASK64))
    return h


def philox_key(*words: int) -> tuple[int, int]:
    """Two-word Philox key derived from ``words``."""
    h = hash64(*words)
    return h, mix64(h ^ GOLDEN)


@dataclass(frozen=True)
class SubsampleIndex:
    k: int
    indices: np.ndarray
    attempt: int = 0

    def __len__(self):
        return len(self.indices)


def subsample_key(master_seed: int, k: int, attempt: int = 0) -> tuple[int, int]:
    if attempt == 0:
        return philox_key(master_seed, k)
    return philox_key(master_seed, k, attempt)


def draw_subsample(N: int, n: int, master_seed: int, k: int, attempt: int = 0) -> SubsampleIndex:
    """Draw the ``k``-th subsample: ``n`` i.i.d. uniform indices over ``[0, N)``.

    ``attempt > 0`` gives the replacement subsample used when a fit on the
    original one fails.
    """
    if N < 1 or n < 1:
        raise ValueError(f"need N >= 1 and n >= 1, got N={N}, n={n}")
    key0, key1 = subsample_key(master_seed, k, attempt)
    idx = kernels.draw_indices(key0, key1, TAG_INDEX, int(n), int(N))
    idx.setflags(write=False)
    return SubsampleIndex(k=k, indices=idx, attempt=attempt)


class Stream:
    """Deterministic variates from a Philox key; each named draw uses its own counter tag.

    >>> s = Stream(7, 1)
    >>> bool(np.all(s.uniform(0, 3) == Stream(7, 1).uniform(0, 3)))
    True
    """

    def __init__(self, *seed_words: int):
        self.key = philox_key(*seed_words)

    def words(self, tag: int, count: int) -> np.ndarray:
        return kernels.random_words(self.key[0], self.key[1], (TAG_STREAM << 32) | (int(tag) & 0xFFFFFFFF), int(count))

    def uniform(self, tag: int, count: int) -> np.ndarray:
        """Uniforms on the open interval (0, 1) with 53 random bits."""
        w = self.words(tag, count)
        return ((w >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def normal(self, tag: int, count: int) -> np.ndarray:
        """Standard normals by inverse-CDF transform of :meth:`uniform`."""
        return ndtri(self.uniform(tag, count))

    def poisson(self, tag: int, lam) -> np.ndarray:
        """Poisson variates by sequential-search inversion, one uniform per variate."""
        lam = np.asarray(lam, dtype=np.float64)
        u = self.uniform(tag, lam.size).reshape(lam.shape)
        k = np.zeros(lam.shape, dtype=np.int64)
        pmf = np.exp(-lam)
        cdf = pmf.copy()
        active = u > cdf
        x = 0
        while np.any(active):
            x += 1
            pmf = np.where(active, pmf * lam / x, pmf)
            cdf = np.where(active, cdf + pmf, cdf)
            k[active] = x
            # cdf can stall just below u from rounding; pmf underflow ends the search there.
            active = active & (u > cdf) & (pmf > 0)
        return k.astype(np.float64)

    def bernoulli(self, tag: int, prob) -> np.ndarray:
        prob = np.asarray(prob, dtype=np.float64)
        return (self.uniform(tag, prob.size).reshape(prob.shape) < prob).astype(np.float64)

    def categorical(self, tag: int, count: int, levels: int) -> np.ndarray:
        return np.floor(self.uniform(tag, count) * levels).astype(np.int64)
