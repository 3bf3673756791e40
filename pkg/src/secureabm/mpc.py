"""Additive secret sharing over Z_p and fixed-point encoding of signed reals."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

MERSENNE_61 = (1 << 61) - 1
DEFAULT_SCALE = 1 << 16


class EncodingOverflowError(OverflowError):
    """A real value does not fit the codec's signed range."""


class ShareRNG(Protocol):
    def integers(self, p: int, count: int) -> list[int]: ...


def is_probable_prime(n: int) -> bool:
    """Deterministic Miller-Rabin for n < 3.3e24."""
    if n < 2:
        return False
    small = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)
    for q in small:
        if n % q == 0:
            return n == q
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in small:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class Modulus:
    """Prime group order. Kept below 2**63 so a sum of two elements fits a uint64."""

    p: int = MERSENNE_61

    def __post_init__(self):
        if not 2 <= self.p < (1 << 63):
            raise ValueError(f"modulus must lie in [2, 2**63), got {self.p}")
        if not is_probable_prime(self.p):
            raise ValueError(f"modulus {self.p} is not prime")

    def __int__(self) -> int:
        return self.p

    def element(self, value: int) -> "GroupValue":
        return GroupValue(value % self.p, self)


@dataclass(frozen=True)
class GroupValue:
    value: int
    modulus: Modulus = field(default_factory=Modulus, compare=False)

    def __post_init__(self):
        if not 0 <= self.value < self.modulus.p:
            raise ValueError(f"{self.value} is not an element of Z_{self.modulus.p}")

    def __add__(self, other: "GroupValue | int") -> "GroupValue":
        return GroupValue((self.value + int(other)) % self.modulus.p, self.modulus)

    def __sub__(self, other: "GroupValue | int") -> "GroupValue":
        return GroupValue((self.value - int(other)) % self.modulus.p, self.modulus)

    def __int__(self) -> int:
        return self.value

    def __index__(self) -> int:
        return self.value


@dataclass(frozen=True)
class ShareSet:
    """Shares of one party's secret, keyed by recipient.

    The recipients are numbered ``0..n-1`` unless the caller maps them to
    party identifiers via :meth:`addressed`.
    """

    owner: int
    shares: Mapping[int, int]
    modulus: Modulus

    def values(self) -> list[int]:
        return [self.shares[k] for k in sorted(self.shares)]

    def secret(self) -> int:
        return sum(self.shares.values()) % self.modulus.p

    def addressed(self, recipients: Sequence[int]) -> "ShareSet":
        ordered = self.values()
        if len(recipients) != len(ordered):
            raise ValueError("one recipient per share required")
        return ShareSet(self.owner, dict(zip(recipients, ordered)), self.modulus)


def _as_int(v: GroupValue | int) -> int:
    return v.value if isinstance(v, GroupValue) else int(v)


def split_secret(secret: GroupValue | int, n_parties: int, modulus: Modulus,
                 rng: ShareRNG, owner: int = 0) -> ShareSet:
    """Split ``secret`` into ``n_parties`` additive shares.

    The first ``n_parties - 1`` shares come from ``rng``; the last is the
    residual that makes the shares sum to the secret mod p.
    """
    if n_parties < 1:
        raise ValueError("n_parties must be >= 1")
    p = modulus.p
    s = _as_int(secret) % p
    draws = rng.integers(p, n_parties - 1)
    residual = (s - sum(draws)) % p
    return ShareSet(owner, dict(enumerate([*draws, residual])), modulus)


def local_share_sum(received_shares: Iterable[GroupValue | int], modulus: Modulus) -> int:
    return sum(_as_int(s) for s in received_shares) % modulus.p


def reconstruct(partial_sums: Iterable[GroupValue | int], modulus: Modulus) -> int:
    return sum(_as_int(s) for s in partial_sums) % modulus.p


@dataclass(frozen=True)
class FixedPointCodec:
    """Signed fixed-point reals in Z_p; the upper half of the group is negative."""

    scale: int = DEFAULT_SCALE
    modulus: Modulus = field(default_factory=Modulus)

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError("scale must be a positive integer")

    @property
    def bound(self) -> float:
        """Exclusive magnitude limit for encodable reals."""
        return self.modulus.p / (2 * self.scale)

    def encode(self, x: float) -> int:
        if not abs(x) < self.bound:
            raise EncodingOverflowError(f"|{x}| >= {self.bound} cannot be encoded")
        return round(x * self.scale) % self.modulus.p

    def decode(self, v: GroupValue | int) -> float:
        v = _as_int(v)
        p = self.modulus.p
        signed = v - p if v > p // 2 else v
        return signed / self.scale

    def encode_array(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.size and not np.all(np.abs(x) < self.bound):
            worst = float(np.max(np.abs(x)))
            raise EncodingOverflowError(f"|{worst}| >= {self.bound} cannot be encoded")
        ints = np.rint(x * self.scale).astype(np.int64)
        return np.where(ints < 0, ints + self.modulus.p, ints).astype(np.uint64)

    def decode_array(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.uint64)
        p = self.modulus.p
        signed = np.where(v > np.uint64(p // 2),
                          -((np.uint64(p) - v).astype(np.int64)),
                          v.astype(np.int64))
        return signed / self.scale


def encode_real(x: float, codec: FixedPointCodec) -> GroupValue:
    return GroupValue(codec.encode(x), codec.modulus)


def decode_real(v: GroupValue | int, codec: FixedPointCodec) -> float:
    return codec.decode(v)
