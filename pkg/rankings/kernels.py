"""
Permutation and metric kernels.

Items are dense 0-based integers. A ranking lists items from most to least
preferred; a profile is the multiset of base rankings being aggregated.
Kemeny costs are kept as exact integer numerators (total pairwise
disagreements) and divided by the voter count only at the boundary, as
`fractions.Fraction`.
"""
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from core.exceptions import InvalidInputError


def validate_ranking(order, n) -> bool:
    """True iff `order` is a permutation of 0..n-1."""
    try:
        items = [int(item) for item in order]
    except (TypeError, ValueError):
        return False
    if len(items) != n:
        return False
    seen = [False] * n
    for item in items:
        if not 0 <= item < n or seen[item]:
            return False
        seen[item] = True
    return True


@dataclass(frozen=True)
class Ranking:
    order: tuple

    def __post_init__(self):
        order = tuple(int(item) for item in self.order)
        if not validate_ranking(order, len(order)):
            raise InvalidInputError(f"not a permutation of 0..{len(order) - 1}: {list(self.order)}")
        object.__setattr__(self, 'order', order)

    @property
    def n(self) -> int:
        return len(self.order)

    @cached_property
    def position(self) -> tuple:
        """position[item] = 0-based place of item in the order."""
        inverse = [0] * len(self.order)
        for place, item in enumerate(self.order):
            inverse[item] = place
        return tuple(inverse)

    def __iter__(self):
        return iter(self.order)

    def __len__(self):
        return len(self.order)


@dataclass(frozen=True)
class Profile:
    rankings: tuple
    item_labels: Optional[tuple] = None
    provenance: dict = field(default=None, compare=False, hash=False)

    def __post_init__(self):
        rankings = tuple(r if isinstance(r, Ranking) else Ranking(tuple(r)) for r in self.rankings)
        if not rankings:
            raise InvalidInputError('a profile needs at least one ranking')
        n = rankings[0].n
        if n < 1:
            raise InvalidInputError('a profile needs at least one item')
        for index, ranking in enumerate(rankings):
            if ranking.n != n:
                raise InvalidInputError(f"ranking {index} has {ranking.n} items, expected {n}")
        object.__setattr__(self, 'rankings', rankings)
        if self.item_labels is not None:
            labels = tuple(str(label) for label in self.item_labels)
            if len(labels) != n:
                raise InvalidInputError(f"{len(labels)} item labels for {n} items")
            object.__setattr__(self, 'item_labels', labels)

    @property
    def n(self) -> int:
        return self.rankings[0].n

    @property
    def m(self) -> int:
        return len(self.rankings)

    def as_array(self) -> np.ndarray:
        """(m, n) array, row k = order of ranking k."""
        return np.array([ranking.order for ranking in self.rankings], dtype=np.int64)

    def positions(self) -> np.ndarray:
        """(m, n) array, entry [k, i] = 0-based position of item i in ranking k."""
        return np.array([ranking.position for ranking in self.rankings], dtype=np.int64)

    def label(self, item) -> str:
        return self.item_labels[item] if self.item_labels else str(item)


@dataclass(frozen=True)
class PrecedenceMatrix:
    """w[i][j] = number of voters placing item i before item j."""
    w: np.ndarray
    m: int

    def __post_init__(self):
        w = np.array(self.w, dtype=np.int64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise InvalidInputError(f"precedence matrix must be square, got shape {w.shape}")
        w.setflags(write=False)
        object.__setattr__(self, 'w', w)

    @property
    def n(self) -> int:
        return self.w.shape[0]


def _as_ranking(value) -> Ranking:
    return value if isinstance(value, Ranking) else Ranking(tuple(value))


def count_inversions(sequence: Sequence[int]) -> int:
    """Bottom-up merge sort that counts inversions in O(n log n)."""
    values = list(sequence)
    size = len(values)
    buffer = [0] * size
    inversions = 0
    width = 1
    while width < size:
        for left in range(0, size, 2 * width):
            mid = min(left + width, size)
            right_end = min(left + 2 * width, size)
            i, j, k = left, mid, left
            while i < mid and j < right_end:
                if values[i] <= values[j]:
                    buffer[k] = values[i]
                    i += 1
                else:
                    buffer[k] = values[j]
                    inversions += mid - i
                    j += 1
                k += 1
            while i < mid:
                buffer[k] = values[i]
                i += 1
                k += 1
            while j < right_end:
                buffer[k] = values[j]
                j += 1
                k += 1
        values, buffer = buffer, values
        width *= 2
    return inversions


def kendall_tau(rho, sigma) -> int:
    """Number of item pairs ordered oppositely by the two rankings."""
    rho, sigma = _as_ranking(rho), _as_ranking(sigma)
    if rho.n != sigma.n:
        raise InvalidInputError(f"rankings have different lengths: {rho.n} and {sigma.n}")
    sigma_position = sigma.position
    return count_inversions([sigma_position[item] for item in rho.order])


def kendall_tau_naive(rho, sigma) -> int:
    """O(n^2) pair enumeration, kept as the oracle for kendall_tau."""
    rho, sigma = _as_ranking(rho), _as_ranking(sigma)
    if rho.n != sigma.n:
        raise InvalidInputError(f"rankings have different lengths: {rho.n} and {sigma.n}")
    p, q = rho.position, sigma.position
    disagreements = 0
    for i in range(rho.n):
        for j in range(i + 1, rho.n):
            if (p[i] < p[j]) != (q[i] < q[j]):
                disagreements += 1
    return disagreements


def total_disagreements(rho, profile: Profile) -> int:
    rho = _as_ranking(rho)
    if rho.n != profile.n:
        raise InvalidInputError(f"ranking has {rho.n} items, profile has {profile.n}")
    return sum(kendall_tau(rho, sigma) for sigma in profile.rankings)


def kemeny_distance(rho, profile: Profile) -> Fraction:
    """Mean Kendall-tau distance from rho to the base rankings."""
    return Fraction(total_disagreements(rho, profile), profile.m)


def precedence_matrix(profile: Profile) -> PrecedenceMatrix:
    positions = profile.positions()
    # before[k, i, j] is True when voter k places i ahead of j
    before = positions[:, :, None] < positions[:, None, :]
    return PrecedenceMatrix(w=before.sum(axis=0), m=profile.m)


def order_cost_numerator(order, w) -> int:
    """Sum over pairs (a before b in order) of w[b][a]."""
    matrix = w.w if isinstance(w, PrecedenceMatrix) else np.asarray(w)
    order = np.asarray(order.order if isinstance(order, Ranking) else order, dtype=np.int64)
    if order.shape != (matrix.shape[0],):
        raise InvalidInputError(f"ranking has {order.size} items, precedence matrix has {matrix.shape[0]}")
    reordered = matrix[np.ix_(order, order)]
    return int(np.tril(reordered, -1).sum())


def kemeny_cost_via_precedence(rho, w: PrecedenceMatrix, m=None) -> Fraction:
    m = w.m if m is None else int(m)
    if m < 1:
        raise InvalidInputError('voter count must be positive')
    return Fraction(order_cost_numerator(rho, w), m)


def condorcet_winner(w: PrecedenceMatrix) -> Optional[int]:
    """Item beating every other item by strict pairwise majority, if any."""
    majority = w.w > w.w.T
    for item in range(w.n):
        if all(majority[item, other] for other in range(w.n) if other != item):
            return item
    return None
