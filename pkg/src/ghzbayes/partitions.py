"""Partitions of a qubit register into power-of-two GHZ blocks.

A partition lists how many GHZ blocks of each size 2^k make up an n_total
qubit state.  The product state of all blocks, expanded in the collective
frequency basis (total excitation number), has amplitudes sqrt(c_n) / 2^(M/2)
where c_n counts the ways block excitation choices sum to n.  Those counts are
the coefficients of prod_k (1 + x^(2^k))^(m_k), computed here in exact integer
arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
import math
import re

import numpy as np


@dataclass(frozen=True)
class Partition:
    """Multiset of GHZ block sizes, stored as (k, m_k) with sizes 2^k.

    blocks are sorted by descending k, every k distinct, every m_k >= 1.
    """

    blocks: tuple

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("partition needs at least one block")
        ks = [k for k, _ in self.blocks]
        if any(k < 0 for k in ks):
            raise ValueError(f"block exponents must be >= 0: {ks}")
        if sorted(set(ks), reverse=True) != ks:
            raise ValueError(f"block exponents must be distinct and descending: {ks}")
        if any(m < 1 for _, m in self.blocks):
            raise ValueError("block multiplicities must be >= 1")
        object.__setattr__(self, "blocks", tuple((int(k), int(m)) for k, m in self.blocks))

    @property
    def n_total(self) -> int:
        return sum(m * 2 ** k for k, m in self.blocks)

    @property
    def n_blocks(self) -> int:
        """Total number of blocks M (= number of parity measurements)."""
        return sum(m for _, m in self.blocks)

    @property
    def max_block_size(self) -> int:
        return 2 ** self.blocks[0][0]

    def block_sizes(self) -> tuple:
        """Expanded block sizes, largest first, e.g. (4, 4, 2, 1, 1)."""
        out = []
        for k, m in self.blocks:
            out.extend([2 ** k] * m)
        return tuple(out)

    def to_text(self) -> str:
        """Canonical text form, e.g. '3x4+3x2+3x1' (multiplicity x size)."""
        return "+".join(f"{m}x{2 ** k}" for k, m in self.blocks)

    @classmethod
    def from_text(cls, text: str) -> "Partition":
        counts: dict[int, int] = {}
        for token in text.strip().split("+"):
            mo = re.fullmatch(r"\s*(\d+)\s*x\s*(\d+)\s*", token)
            if mo is None:
                raise ValueError(f"bad partition token {token!r} in {text!r}")
            m, size = int(mo.group(1)), int(mo.group(2))
            if size < 1 or size & (size - 1):
                raise ValueError(f"block size {size} is not a power of two in {text!r}")
            counts[size.bit_length() - 1] = counts.get(size.bit_length() - 1, 0) + m
        return cls(tuple(sorted(counts.items(), reverse=True)))

    def to_json(self) -> list:
        return [[k, m] for k, m in self.blocks]

    @classmethod
    def from_json(cls, data) -> "Partition":
        counts: dict[int, int] = {}
        for k, m in data:
            counts[int(k)] = counts.get(int(k), 0) + int(m)
        return cls(tuple(sorted(counts.items(), reverse=True)))


def enumerate_partitions(n_total: int, k_cap: int | None = None,
                         budget: int | None = None) -> list:
    """All partitions of n_total into block sizes 2^0 .. 2^k_cap.

    Deterministic order: lexicographically descending expanded size lists, so
    the single largest-block partition comes first.  A budget truncates the
    list after that many entries (same order), for use with
    count_partitions() to detect truncation.
    """
    if n_total < 1:
        raise ValueError(f"n_total must be >= 1, got {n_total}")
    if k_cap is None:
        k_cap = n_total.bit_length() - 1
    out: list[Partition] = []

    def rec(remaining: int, k: int, acc: list):
        if budget is not None and len(out) >= budget:
            return
        if remaining == 0:
            out.append(Partition(tuple(acc)))
            return
        if k < 0:
            return
        size = 2 ** k
        for m in range(remaining // size, -1, -1):
            if m:
                acc.append((k, m))
            rec(remaining - m * size, k - 1, acc)
            if m:
                acc.pop()

    rec(n_total, min(k_cap, n_total.bit_length() - 1), [])
    return out


@lru_cache(maxsize=None)
def _count(n: int, k: int) -> int:
    if n == 0:
        return 1
    if k < 0:
        return 0
    size = 2 ** k
    return sum(_count(n - m * size, k - 1) for m in range(n // size + 1))


def count_partitions(n_total: int, k_cap: int | None = None) -> int:
    """Number of partitions enumerate_partitions would yield (no budget)."""
    if n_total < 1:
        raise ValueError(f"n_total must be >= 1, got {n_total}")
    if k_cap is None:
        k_cap = n_total.bit_length() - 1
    return _count(n_total, min(k_cap, n_total.bit_length() - 1))


@dataclass(frozen=True)
class FrequencySpectrum:
    """Amplitudes of a partition's product state over total excitation 0..N.

    counts holds the exact integer degeneracies; amplitudes their square
    roots normalized by 2^(M/2).
    """

    partition: Partition
    counts: tuple = field(repr=False)
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.amplitudes.flags.writeable = False


def frequency_amplitudes(partition: Partition) -> FrequencySpectrum:
    """Frequency-basis amplitudes sqrt(c_n)/2^(M/2) of the GHZ product state.

    c_n are the coefficients of prod_k (1 + x^(2^k))^(m_k); integer-exact, so
    the mirror symmetry c_n == c_(N-n) holds exactly.
    """
    n = partition.n_total
    coeffs = [0] * (n + 1)
    coeffs[0] = 1
    top = 0
    for size in partition.block_sizes():
        # multiply by (1 + x^size), highest degree first to work in place
        top += size
        for d in range(top, size - 1, -1):
            coeffs[d] += coeffs[d - size]
    m_blocks = partition.n_blocks
    denom = 1 << m_blocks
    amps = np.array([math.sqrt(float(Fraction(c, denom))) for c in coeffs])
    return FrequencySpectrum(partition, tuple(coeffs), amps)
