"""Counter-based random streams.

A stream is keyed by (master seed, role tag, scale, path index) and never by
worker or scheduling order, so an ensemble regenerates bit for bit however it
is split across processes.
"""
import hashlib
from typing import Iterator

import numpy as np

from wiplab.errors import RangeError

# roles
FAST = "fast"
NOISE = "noise"
SELFTEST = "selftest"
ANALYSIS = "analysis"
TAIL = "tail"

SEED_MAX = 2**64 - 1


def tag_hash(tag: str) -> int:
    return int.from_bytes(hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest(), "little")


def stream(seed: int, tag: str, scale: int = 0, index: int = 0) -> np.random.Generator:
    if not 0 <= seed <= SEED_MAX:
        raise RangeError(f"seed must be an unsigned 64-bit integer, got {seed}")
    key = np.random.SeedSequence([int(seed), tag_hash(tag), int(scale), int(index)])
    return np.random.Generator(np.random.Philox(key))


def streams(seed: int, tag: str, scale: int, start: int, stop: int) -> Iterator[np.random.Generator]:
    for index in range(start, stop):
        yield stream(seed, tag, scale, index)


class BitSource:
    """Random bits drawn 64 at a time from a generator, buffered across calls.

    Taking k bits and then j bits yields the same bits, and leaves the
    generator in the same state, as taking k + j bits at once.
    """

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._buffer = np.empty(0, dtype=np.uint8)

    def take(self, k: int) -> np.ndarray:
        if k <= 0:
            return np.empty(0, dtype=np.uint8)
        short = k - self._buffer.size
        if short > 0:
            words = np.atleast_1d(self._rng.bit_generator.random_raw(-(-short // 64))).astype(np.uint64)
            fresh = np.unpackbits(words.view(np.uint8), bitorder="little")
            self._buffer = np.concatenate([self._buffer, fresh])
        out, self._buffer = self._buffer[:k], self._buffer[k:]
        return out
