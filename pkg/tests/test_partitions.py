import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ghzbayes.partitions import (Partition, count_partitions,
                                 enumerate_partitions, frequency_amplitudes)


def test_text_round_trip_examples():
    for text in ("1x4", "3x4+3x2+3x1", "1x16+1x4+1x1", "21x1"):
        assert Partition.from_text(text).to_text() == text


def test_from_text_normalizes_order_and_merges():
    assert Partition.from_text("3x1+3x2+3x4").to_text() == "3x4+3x2+3x1"
    assert Partition.from_text("1x2+2x2").to_text() == "3x2"


def test_rejects_non_power_of_two_blocks():
    with pytest.raises(ValueError):
        Partition.from_text("1x3")
    with pytest.raises(ValueError):
        Partition.from_text("0x2")


def test_enumeration_counts_and_order():
    parts = enumerate_partitions(4)
    assert [p.to_text() for p in parts] == ["1x4", "2x2", "1x2+2x1", "4x1"]
    assert count_partitions(4) == 4
    # frozen counts, independently checked against the coin-change recurrence
    assert count_partitions(21) == 60
    assert count_partitions(32) == 202


def _coin_change(n: int, sizes) -> int:
    table = [1] + [0] * n
    for size in sizes:
        for total in range(size, n + 1):
            table[total] += table[total - size]
    return table[n]


@given(st.integers(min_value=1, max_value=40))
@settings(max_examples=25, deadline=None)
def test_count_matches_coin_change(n):
    sizes = [2 ** k for k in range(n.bit_length())]
    assert count_partitions(n) == _coin_change(n, sizes)


@given(st.integers(min_value=1, max_value=24), st.integers(min_value=0, max_value=3))
@settings(max_examples=25, deadline=None)
def test_enumeration_respects_caps(n, k_cap):
    parts = enumerate_partitions(n, k_cap=k_cap)
    for part in parts:
        assert part.n_total == n
        assert part.max_block_size <= 2 ** k_cap
    texts = [p.to_text() for p in parts]
    assert len(texts) == len(set(texts))
    assert len(parts) == count_partitions(n, k_cap=k_cap)


def test_budget_truncates_enumeration():
    parts = enumerate_partitions(21, budget=5)
    assert len(parts) == 5
    full = enumerate_partitions(21)
    assert [p.to_text() for p in parts] == [p.to_text() for p in full[:5]]


def _brute_amplitudes(part: Partition) -> np.ndarray:
    """Accumulated-phase amplitudes by integer convolution of block counts.

    Each degenerate branch at total n is orthogonal, so the state's weight
    in sector n is sqrt(c_n / 2^M) with c_n the branch count.
    """
    counts = np.array([1], dtype=object)
    blocks = 0
    for k, m in part.blocks:
        size = 2 ** k
        for _ in range(m):
            nxt = np.zeros(counts.size + size, dtype=object)
            nxt[:counts.size] += counts
            nxt[size:size + counts.size] += counts
            counts = nxt
            blocks += 1
    return np.sqrt(counts.astype(float) / 2.0 ** blocks)


@given(st.integers(min_value=1, max_value=16))
@settings(max_examples=20, deadline=None)
def test_frequency_amplitudes_match_convolution(n):
    for part in enumerate_partitions(n)[:6]:
        spec = frequency_amplitudes(part)
        brute = _brute_amplitudes(part)
        assert spec.amplitudes.size == brute.size == n + 1
        np.testing.assert_allclose(spec.amplitudes, brute, atol=1e-12)
        assert abs(np.sum(spec.amplitudes ** 2) - 1.0) < 1e-12
