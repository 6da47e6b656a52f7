"""Deterministic seed derivation without mutating ``SeedSequence`` state."""

from __future__ import annotations

import numpy as np


def derive(seed, *keys: int) -> np.random.SeedSequence:
    """Child seed at path ``keys`` below ``seed`` (an int or a SeedSequence).

    Unlike ``SeedSequence.spawn`` this is a pure function of its arguments.
    """
    base = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return np.random.SeedSequence(entropy=base.entropy, spawn_key=tuple(base.spawn_key) + tuple(int(k) for k in keys))


def rng(seed, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive(seed, *keys))
