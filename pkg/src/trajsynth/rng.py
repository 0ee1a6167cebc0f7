"""Named random substreams derived from one master seed.

Every source of randomness in the pipeline (world generation, parameter
init, batch sampling, dropout, generation, PPO rollouts, ...) pulls its
own generator via `substream(master_seed, *names)`. Stream identity is a
stable function of the names, so runs are reproducible bit-for-bit and
independent stages can be re-run in isolation without disturbing each
other's draws.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_part(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"substream key parts must be nonnegative, got {part}")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def substream(master_seed: int, *names) -> np.random.Generator:
    """Generator for the named stream; same (seed, names) -> same draws."""
    key = tuple(_key_part(p) for p in names)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(master_seed), spawn_key=key)))


def generator_state(gen: np.random.Generator) -> dict:
    return gen.bit_generator.state


def restore_generator(state: dict) -> np.random.Generator:
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = state
    return gen
