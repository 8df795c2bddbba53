"""Counter-based uniform sampling.

Every draw is a pure function of ``(seed, stream, index, coordinate)`` so
chunked or threaded evaluation reproduces the serial result bit for bit.
The mixer is SplitMix64.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO53 = float(2**53)

# stream identifiers keep independent experiments from sharing draws
STREAM_TAILS = 0
STREAM_ROOTS = 1
STREAM_TRIPLES = 2
STREAM_CHAINS = 3


def _mix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_bits(seed: int, stream: int, index: np.ndarray, coord: int = 0) -> np.ndarray:
    """Return 64 pseudo-random bits for every counter in ``index``."""
    index = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        key = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ _mix(np.uint64(stream * 0x10001 + coord)))
        return _mix(index * _GOLDEN ^ key)


def uniforms(seed: int, stream: int, start: int, count: int, dim: int = 1) -> np.ndarray:
    """Uniform draws in [0, 1) for sample indices ``start .. start+count-1``.

    Returns an array of shape ``(count, dim)``.
    """
    idx = np.arange(start, start + count, dtype=np.uint64)
    cols = [(counter_bits(seed, stream, idx, c) >> np.uint64(11)).astype(np.float64) / _TWO53
            for c in range(dim)]
    return np.stack(cols, axis=1) if cols else np.empty((count, 0))


def integers(seed: int, stream: int, start: int, count: int, low: np.ndarray, high: np.ndarray,
             coord: int = 0) -> np.ndarray:
    """Integers in ``[low, high]`` (inclusive, broadcast) for the given counters."""
    idx = np.arange(start, start + count, dtype=np.uint64)
    bits = counter_bits(seed, stream, idx, coord) >> np.uint64(11)
    span = (np.asarray(high, dtype=np.int64) - np.asarray(low, dtype=np.int64) + 1).astype(np.float64)
    # 53-bit fraction times span: bias is far below Monte Carlo noise for spans < 2**20
    return np.asarray(low, dtype=np.int64) + np.floor(bits.astype(np.float64) / _TWO53 * span).astype(np.int64)


def chunk_bounds(total: int, chunk: int):
    """Yield ``(start, count)`` pairs covering ``range(total)``."""
    for start in range(0, total, chunk):
        yield start, min(chunk, total - start)
