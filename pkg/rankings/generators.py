"""
Seeded synthetic profiles: random, repeat and jiggling.

Every generator draws from a PCG64 stream built from `spec.seed`, so equal
specs give identical profiles on every platform.
"""
import logging
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from core.exceptions import InvalidConfigError
from core.seeding import SEED_MAX, make_rng
from rankings.kernels import Profile

logger = logging.getLogger(__name__)

KINDS = ('random', 'repeat', 'jiggling')


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    n: int
    m: int
    seed: int
    repeat_count: Optional[int] = None
    scale_M: float = 1.0
    swap_passes: int = 1

    def __post_init__(self):
        errors = {}
        if self.kind not in KINDS:
            errors['kind'] = [f"must be one of {', '.join(KINDS)}"]
        if self.n < 2:
            errors['n'] = ['must be at least 2']
        if self.m < 1:
            errors['m'] = ['must be at least 1']
        if not 0 <= self.seed <= SEED_MAX:
            errors['seed'] = ['must be an unsigned 64-bit integer']
        if self.repeat_count is not None and not 1 <= self.repeat_count <= self.m:
            errors['repeat_count'] = [f"must lie in [1, m={self.m}]"]
        if self.swap_passes < 1:
            errors['swap_passes'] = ['must be positive']
        if not np.isfinite(self.scale_M):
            errors['scale_M'] = ['must be finite']
        if errors:
            raise InvalidConfigError(errors)

    def to_dict(self) -> dict:
        return asdict(self)


def _profile(rankings, spec: GeneratorSpec) -> Profile:
    return Profile(rankings=tuple(tuple(int(item) for item in r) for r in rankings),
                   provenance={'generator': spec.to_dict()})


def gen_random(spec: GeneratorSpec) -> Profile:
    rng = make_rng(spec.seed)
    return _profile([rng.permutation(spec.n) for _ in range(spec.m)], spec)


def gen_repeat(spec: GeneratorSpec) -> Profile:
    rng = make_rng(spec.seed)
    repeat_count = spec.repeat_count
    if repeat_count is None:
        repeat_count = int(rng.integers(1, spec.m + 1))
    reference = rng.permutation(spec.n)
    rankings = [reference] * repeat_count
    rankings += [rng.permutation(spec.n) for _ in range(spec.m - repeat_count)]
    return _profile(rankings, spec)


@lru_cache(maxsize=4096)
def jiggle_weights(position: int, n: int, scale_M: float = 1.0) -> np.ndarray:
    """Normalized swap-target probabilities for an item at `position`.

    P(j) is proportional to exp(M - |p_j - p_i|) over p_j != p_i; the target's
    own position has probability 0. M cancels after normalization.
    """
    exponents = scale_M - np.abs(np.arange(n) - position).astype(np.float64)
    exponents[position] = -np.inf
    weights = np.exp(exponents - exponents[np.isfinite(exponents)].max())
    weights /= weights.sum()
    weights.setflags(write=False)
    return weights


@lru_cache(maxsize=4096)
def _jiggle_cdf(position: int, n: int, scale_M: float) -> np.ndarray:
    cdf = np.cumsum(jiggle_weights(position, n, scale_M))
    # the last reachable position closes the cdf; the item's own position stays unreachable
    last = n - 2 if position == n - 1 else n - 1
    cdf[last:] = 1.0
    cdf.setflags(write=False)
    return cdf


def jiggle_target(source: int, n: int, draw: float, scale_M=1.0) -> int:
    """Swap target for the item at `source` given a uniform draw in [0, 1)."""
    target = int(np.searchsorted(_jiggle_cdf(source, n, float(scale_M)), draw, side='right'))
    target = min(target, n - 1)
    if target == source:
        target = n - 2 if source == n - 1 else n - 1
    return target


def jiggle(reference, rng: np.random.Generator, scale_M=1.0, swap_passes=1) -> np.ndarray:
    """One perturbed copy of `reference`.

    Each pass visits every item once in a random order and swaps the contents
    of its current position with a sampled target position. Positions are
    re-read after each swap.
    """
    order = np.array(reference, dtype=np.int64)
    n = order.size
    position = np.empty(n, dtype=np.int64)
    position[order] = np.arange(n)
    for _ in range(swap_passes):
        visits = rng.permutation(n)
        draws = rng.random(n)
        for item, draw in zip(visits, draws):
            source = int(position[item])
            target = jiggle_target(source, n, draw, scale_M)
            other = order[target]
            order[source], order[target] = other, item
            position[other], position[item] = source, target
    return order


def gen_jiggling(spec: GeneratorSpec) -> Profile:
    rng = make_rng(spec.seed)
    reference = rng.permutation(spec.n)
    rankings = [jiggle(reference, rng, spec.scale_M, spec.swap_passes) for _ in range(spec.m)]
    profile = _profile(rankings, spec)
    profile.provenance['reference'] = [int(item) for item in reference]
    return profile


GENERATORS = {
    'random': gen_random,
    'repeat': gen_repeat,
    'jiggling': gen_jiggling,
}


def generate(spec: GeneratorSpec) -> Profile:
    logger.debug('generating %s profile n=%d m=%d seed=%d', spec.kind, spec.n, spec.m, spec.seed)
    return GENERATORS[spec.kind](spec)


def reference_of(spec: GeneratorSpec) -> np.ndarray:
    """The reference permutation a repeat/jiggling spec draws first."""
    rng = make_rng(spec.seed)
    if spec.kind == 'repeat' and spec.repeat_count is None:
        rng.integers(1, spec.m + 1)
    return rng.permutation(spec.n)
