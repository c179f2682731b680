"""Counter-based random streams.

A stream is identified by ``(seed, name, *keys)``.  Samples for a batch of
paths are drawn in fixed-size blocks, each block from its own Philox generator
keyed by ``(seed, name, *keys, block)``.  A path's values therefore depend only
on its index, never on how many paths are drawn or in which order blocks are
produced, which makes generation safe to parallelize.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .parallel import ordered_map

BLOCK = 256


def _code(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


@dataclass(frozen=True)
class RngStream:
    """Immutable identifier of an independent random stream."""

    seed: int
    name: str
    keys: tuple[int, ...] = ()

    def child(self, *keys: int) -> "RngStream":
        """Sub-stream, e.g. the inner paths belonging to one outer path."""
        return RngStream(self.seed, self.name, self.keys + tuple(int(k) for k in keys))

    def generator(self, *keys: int) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=int(self.seed),
            spawn_key=(_code(self.name),) + self.keys + tuple(int(k) for k in keys),
        )
        return np.random.Generator(np.random.Philox(ss))


def draw_blocks(
    stream: RngStream,
    n_paths: int,
    draw: Callable[[np.random.Generator, int], np.ndarray],
    threads: int = 1,
) -> np.ndarray:
    """Concatenate ``draw(gen, BLOCK)`` over the blocks covering ``n_paths`` rows.

    Full blocks are always drawn and the result truncated, so row ``i`` is the
    same whatever ``n_paths`` is.
    """
    n_blocks = -(-n_paths // BLOCK)
    parts = ordered_map(lambda b: draw(stream.generator(b), BLOCK), range(n_blocks), threads)
    return np.concatenate(parts, axis=0)[:n_paths]
