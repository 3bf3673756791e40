"""Counter-based deterministic randomness.

Every random quantity in a run is a pure function of a 64-bit key and a
counter, so the secure and centralized simulators (and the compiled and
pure-Python kernels) can replay identical draws without sharing state.

The word generator is the SplitMix64 output function evaluated at
``key + (counter + 1) * GOLDEN``.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
GOLDEN2 = 0xD1B54A32D192ED03
SEED_BASE = 0x243F6A8885A308D3
# rejection attempts are folded into the high counter bits
ATTEMPT_SHIFT = 48


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def word(key: int, counter: int) -> int:
    return mix64(key + (counter + 1) * GOLDEN)


def _part_to_int(part: int | str) -> int:
    if isinstance(part, str):
        return int.from_bytes(hashlib.blake2b(part.encode(), digest_size=8).digest(), "little")
    return int(part) & MASK64


def derive_key(*parts: int | str) -> int:
    """Fold integers and string tags into a single 64-bit key."""
    k = SEED_BASE
    for part in parts:
        k = mix64(k ^ mix64(_part_to_int(part) + GOLDEN))
    return k


def sender_key(session_key: int, index: int) -> int:
    """Key of the share stream of participant ``index`` within a session."""
    return mix64(session_key ^ (((index + 1) * GOLDEN2) & MASK64))


def uniform_mod(key: int, index: int, p: int) -> int:
    """Uniform draw on ``[0, p)`` by rejection over the top bits of the word."""
    shift = 64 - p.bit_length()
    attempt = 0
    while True:
        candidate = word(key, index | (attempt << ATTEMPT_SHIFT)) >> shift
        if candidate < p:
            return candidate
        attempt += 1


def uniform01(key: int, index: int = 0) -> float:
    return (word(key, index) >> 11) * (1.0 / (1 << 53))


class CounterRNG:
    """Seeded stream of group elements, addressed by position.

    ``integers(p, count)`` returns the next ``count`` elements of the
    stream, so two generators with the same key agree element-wise.
    """

    def __init__(self, key: int):
        self.key = key & MASK64
        self.position = 0

    @classmethod
    def from_seed(cls, *parts: int | str) -> "CounterRNG":
        return cls(derive_key(*parts))

    def integers(self, p: int, count: int) -> list[int]:
        out = [uniform_mod(self.key, self.position + i, p) for i in range(count)]
        self.position += count
        return out

    def random(self) -> float:
        u = uniform01(self.key, self.position)
        self.position += 1
        return u


class FixedDraws:
    """Replays a fixed list of group elements; used for published test vectors."""

    def __init__(self, values: Sequence[int]):
        self._values = list(values)

    def integers(self, p: int, count: int) -> list[int]:
        if count > len(self._values):
            raise ValueError("not enough scripted draws")
        out, self._values = self._values[:count], self._values[count:]
        for v in out:
            if not 0 <= v < p:
                raise ValueError(f"scripted draw {v} outside Z_{p}")
        return out
