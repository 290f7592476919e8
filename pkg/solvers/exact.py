"""
Exact Kemeny-optimal rankings at desk scale.

Two realizations of the argmin over all permutations: exhaustive enumeration
(n <= 10) and a dynamic program over item subsets (n <= 20). Both return the
lexicographically smallest optimal order.
"""
import itertools
import logging
import time
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from core.exceptions import CapacityError
from rankings.kernels import PrecedenceMatrix, Profile, Ranking, precedence_matrix

logger = logging.getLogger(__name__)

BRUTE_FORCE_MAX_N = 10
SUBSET_DP_MAX_N = 20
_PERMUTATION_BLOCK = 40320


@dataclass(frozen=True)
class ExactResult:
    ranking: Ranking
    cost_numerator: int
    m: int
    nodes_explored: int
    elapsed: float

    @property
    def cost(self) -> Fraction:
        return Fraction(self.cost_numerator, self.m)


def _permutation_blocks(n):
    permutations = itertools.permutations(range(n))
    while True:
        block = np.array(list(itertools.islice(permutations, _PERMUTATION_BLOCK)), dtype=np.int8)
        if block.size == 0:
            return
        yield block


@lru_cache(maxsize=8)
def _all_permutations(n):
    table = np.concatenate(list(_permutation_blocks(n)))
    table.setflags(write=False)
    return table


def _block_costs(block, w):
    # position of each item under every permutation of the block
    positions = np.empty_like(block)
    rows = np.arange(block.shape[0])[:, None]
    positions[rows, block] = np.arange(block.shape[1], dtype=block.dtype)
    costs = np.zeros(block.shape[0], dtype=np.int64)
    n = block.shape[1]
    for i in range(n):
        for j in range(n):
            if i != j and w[j, i]:
                costs += w[j, i] * (positions[:, i] < positions[:, j])
    return costs


def solve_brute_force(profile: Profile) -> ExactResult:
    """Enumerate all n! orders in lexicographic order; keep the first minimizer."""
    if profile.n > BRUTE_FORCE_MAX_N:
        raise CapacityError(f"brute force is limited to n <= {BRUTE_FORCE_MAX_N}, got n={profile.n}")
    started = time.perf_counter()
    w = precedence_matrix(profile).w
    best_cost, best_order, explored = None, None, 0
    blocks = [_all_permutations(profile.n)] if profile.n <= 8 else _permutation_blocks(profile.n)
    for block in blocks:
        costs = _block_costs(block, w)
        index = int(np.argmin(costs))
        explored += block.shape[0]
        if best_cost is None or costs[index] < best_cost:
            best_cost, best_order = int(costs[index]), tuple(int(item) for item in block[index])
    return ExactResult(ranking=Ranking(best_order), cost_numerator=best_cost, m=profile.m,
                       nodes_explored=explored, elapsed=time.perf_counter() - started)


def _subset_layers(n):
    subsets = np.arange(1 << n, dtype=np.int64)
    sizes = np.bitwise_count(subsets)
    order = np.argsort(sizes, kind='stable')
    boundaries = np.cumsum(np.bincount(sizes, minlength=n + 1))[:-1]
    return np.split(subsets[order], boundaries)


def solve_subset_dp(profile: Profile) -> ExactResult:
    """Held-Karp style program over the set of items already placed.

    rest[S] is the cheapest way to order the items outside S, given that all
    of S precedes them. Placing x next costs the voters who put some later
    item y ahead of x: sum of w[y][x] for y outside S and y != x. Scanning
    candidates from the lowest index and keeping only strict improvements
    makes the forward reconstruction lexicographically smallest.
    """
    n = profile.n
    if n > SUBSET_DP_MAX_N:
        raise CapacityError(f"subset DP is limited to n <= {SUBSET_DP_MAX_N}, got n={n}")
    started = time.perf_counter()
    w = precedence_matrix(profile).w
    column_totals = w.sum(axis=0)
    full = (1 << n) - 1

    rest = np.zeros(1 << n, dtype=np.int64)
    choice = np.zeros(1 << n, dtype=np.int8)
    explored = 0
    items = np.arange(n, dtype=np.int64)
    for layer in reversed(_subset_layers(n)[:-1] if n else []):
        bits = (layer[:, None] >> items) & 1
        # placed_weight[s, x] = sum of w[y][x] over y in S
        placed_weight = bits @ w
        best = np.full(layer.size, np.iinfo(np.int64).max, dtype=np.int64)
        best_item = np.zeros(layer.size, dtype=np.int8)
        for x in range(n):
            open_ = bits[:, x] == 0
            candidate = column_totals[x] - placed_weight[:, x] + rest[layer | (1 << x)]
            better = open_ & (candidate < best)
            best = np.where(better, candidate, best)
            best_item = np.where(better, x, best_item)
            explored += int(open_.sum())
        rest[layer] = best
        choice[layer] = best_item

    order, placed = [], 0
    while placed != full:
        item = int(choice[placed])
        order.append(item)
        placed |= 1 << item
    return ExactResult(ranking=Ranking(tuple(order)), cost_numerator=int(rest[0]), m=profile.m,
                       nodes_explored=explored, elapsed=time.perf_counter() - started)


def lower_bound(w: PrecedenceMatrix) -> int:
    """Pairwise floor on the disagreement numerator of any ranking."""
    matrix = w.w
    return int(np.minimum(matrix, matrix.T)[np.triu_indices(w.n, 1)].sum())


def solve_exact(profile: Profile) -> ExactResult:
    return solve_subset_dp(profile)
