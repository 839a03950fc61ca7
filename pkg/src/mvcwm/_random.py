"""Counter-based seed derivation.

Every random stream is identified by a master seed plus a key tuple (for
example ``(replicate, G, strategy, repeat)``), so streams do not depend on
execution order and can be produced in parallel.
"""
import os

import numpy as np

DEFAULT_SEED = 20240101


def default_seed():
    """Seed from ``MVCWM_SEED`` if set, else a fixed constant."""
    value = os.environ.get("MVCWM_SEED")
    return int(value) if value not in (None, "") else DEFAULT_SEED


def derive(seed, *key):
    """A ``SeedSequence`` for ``seed`` extended by the integer ``key``.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator`` built from
    one; the result never consumes draws from an existing generator.
    """
    if isinstance(seed, np.random.Generator):
        seed = seed.bit_generator.seed_seq
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + key)
    if seed is None:
        seed = default_seed()
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))


def rng(seed, *key):
    return np.random.default_rng(derive(seed, *key))


def int_seed(seed, *key):
    """A 31-bit integer for APIs that only take plain integer seeds."""
    return int(derive(seed, *key).generate_state(1)[0] & 0x7FFFFFFF)
