"""Deterministic random streams built on counter-mode SplitMix64.

Every random choice in this package flows through :class:`Rng` so that runs
are bit-reproducible across machines, thread counts, and language ports.
The generator is fully specified by two functions on 64-bit unsigned
integers (all arithmetic mod 2**64):

    GAMMA = 0x9E3779B97F4A7C15

    mix64(z):
        z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
        z ^= z >> 27;  z *= 0x94D049BB133111EB
        z ^= z >> 31
        return z

    output(state, i) = mix64(state + (i + 1) * GAMMA)      # i = 0, 1, 2, ...

Draw ``i`` of a stream depends only on ``(state, i)``, so a batch of n
draws is the same as n scalar draws; batches simply advance the counter
by n.  Derived quantities:

    uniform  u_i = (output_i >> 11) * 2**-53                 in [0, 1)
    normal   n_i = sqrt(-2 ln(1 - u_{2i})) * cos(2 pi u_{2i+1})

Stream seeding:

    state(master_seed, stream_id) = mix64(mix64(master_seed) + GAMMA * stream_id)

with both inputs reduced mod 2**64 first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MUL1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MUL2)
    z ^= z >> np.uint64(31)
    return z


@dataclass(frozen=True)
class SeedStream:
    """Identifier of one reproducible random stream."""

    master_seed: int
    stream_id: int

    @property
    def state(self) -> int:
        return mix64(mix64(self.master_seed & MASK64) + (GAMMA * (self.stream_id & MASK64)))

    def rng(self) -> "Rng":
        return Rng(self.state)

    def child(self, slot: int) -> "SeedStream":
        """Derive a nested stream; (state, slot) plays the role of (master, id)."""
        return SeedStream(master_seed=self.state, stream_id=slot)


def derive_stream(master_seed: int, stream_id: int) -> SeedStream:
    """Mix (master_seed, stream_id) into an independent stream."""
    return SeedStream(master_seed=master_seed, stream_id=stream_id)


class Rng:
    """Counter-mode SplitMix64 generator; see module docstring for the spec."""

    def __init__(self, state: int):
        self._state = state & MASK64
        self._counter = 0

    def next_u64(self) -> int:
        self._counter += 1
        return mix64((self._state + self._counter * GAMMA) & MASK64)

    def u64_block(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        base = np.uint64(self._state)
        return _mix64_vec(base + idx * np.uint64(GAMMA))

    def uniform(self, n: int | None = None):
        """Uniform floats in [0, 1); scalar when n is None."""
        if n is None:
            return (self.next_u64() >> 11) * 2.0**-53
        return (self.u64_block(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int | None = None):
        """Standard normals via the cosine branch of Box-Muller (2 uniforms each)."""
        if n is None:
            return float(self.normal(1)[0])
        u = self.uniform(2 * n)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        return r * np.cos(2.0 * np.pi * u[1::2])

    def bernoulli(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return (self.uniform(p.size) < p.ravel()).astype(np.float64).reshape(p.shape)

    def below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) by rejection on the top residue class."""
        if bound <= 0:
            raise InvalidArgumentError("bound must be positive")
        limit = (MASK64 + 1) - ((MASK64 + 1) % bound)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % bound

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> np.ndarray:
        idx = list(range(n))
        self.shuffle(idx)
        return np.asarray(idx, dtype=np.int64)

    def sklearn_seed(self) -> int:
        return self.next_u64() % (2**31)
