"""Counter-based random streams.

Every random quantity in a simulation is drawn from a Philox stream whose key
is ``(seed, kind)`` and whose counter starts at ``(0, entity, iteration, run)``.
A stream's values therefore depend only on what it is for, never on how many
draws happened before it, which keeps schemes, repetitions and servers
independent of evaluation order.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

_MASK64 = (1 << 64) - 1


class StreamKind(IntEnum):
    DATA = 1
    CLIENT_SAMPLING = 2
    BATCH_SAMPLING = 3
    MASKS = 4
    PERTURBATIONS = 5
    CLIENT_NOISE = 6
    PROBE = 7
    GRAPH = 8


def stream(
    seed: int,
    kind: StreamKind,
    *,
    run: int = 0,
    iteration: int = 0,
    entity: int = 0,
) -> np.random.Generator:
    """Return the generator for one named stream.

    The lowest counter word is left at zero so that draws advance it without
    ever reaching the words holding ``entity``, ``iteration`` and ``run``.
    """
    if min(run, iteration, entity) < 0:
        raise ValueError("stream coordinates must be nonnegative")
    key = np.array([seed & _MASK64, int(kind)], dtype=np.uint64)
    counter = np.array([0, entity, iteration, run], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform draws on the open interval (0, 1)."""
    u = rng.random(size)
    # random() is [0, 1); 0 would map to an infinite Laplace sample
    return np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
