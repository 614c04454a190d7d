"""
Named random sub-streams

All randomness flows from one root seed. A stream is addressed by
(component, purpose, index) so parallel and serial runs draw identical numbers.
"""

import zlib

import numpy as np


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode('utf-8'))


def substream(seed: int, component: str, purpose: str = '', index: int = 0) -> np.random.Generator:
    """
    Derive an independent generator for one named stream

    Args:
        seed: Root seed of the run
        component: Module or stage name (e.g. "blockmodel")
        purpose: What the draws are for (e.g. "restart")
        index: Position within the purpose (restart number, shock number, ...)

    Returns:
        numpy Generator seeded from the root seed and the stream address
    """
    sequence = np.random.SeedSequence(
        entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=(_name_key(component), _name_key(purpose), int(index)),
    )
    return np.random.default_rng(sequence)


def derived_seed(seed: int, component: str, purpose: str = '', index: int = 0) -> int:
    """64-bit seed for a child computation that takes a plain integer seed"""
    rng = substream(seed, component, purpose, index)
    return int(rng.integers(0, 2**63 - 1))
