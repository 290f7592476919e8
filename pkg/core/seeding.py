"""Seeding recipe for every random stream in the toolkit.

All streams are numpy `Generator` objects over the PCG64 bit generator, which
is portable across platforms and documented by numpy. Child seeds are derived
through `SeedSequence` so that parallel callers can partition the seed space
without overlapping streams.
"""
import numpy as np

SEED_MAX = 2 ** 64 - 1


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(check_seed(seed)))


def derive_seed(seed, *keys) -> int:
    """Child seed for the stream identified by `keys` under `seed`."""
    entropy = [check_seed(seed), *(int(key) for key in keys)]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    bit_generator = np.random.PCG64()
    bit_generator.state = state
    return np.random.Generator(bit_generator)
