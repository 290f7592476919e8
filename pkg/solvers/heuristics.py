"""
Approximate Kemeny baselines: KiwiSort, MC4 Markov chain, greedy max
agreement / min regret, and DECoR differential evolution.

All of them work on the precedence matrix w (w[i][j] = voters placing i
before j) and report the exact Kemeny cost of their output.
"""
import logging
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from core.exceptions import ConvergenceError, InvalidConfigError
from core.seeding import SEED_MAX, make_rng
from rankings.kernels import Profile, Ranking, order_cost_numerator, precedence_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HeuristicResult:
    ranking: Ranking
    cost: Fraction
    elapsed: float
    method: str
    details: dict = None


@dataclass(frozen=True)
class DecorConfig:
    population_size: int = 15
    stall_limit: int = 100
    crossover_rate: float = 0.9
    differential_weight: float = 0.8
    max_generations: int = 5000
    seed: int = 1234

    def __post_init__(self):
        errors = {}
        if self.population_size < 4:
            errors['population_size'] = ['differential mutation needs at least 4 members']
        if self.stall_limit < 1:
            errors['stall_limit'] = ['must be positive']
        if not 0 < self.crossover_rate < 1:
            errors['crossover_rate'] = ['must lie in (0, 1)']
        if not 0 < self.differential_weight < 2:
            errors['differential_weight'] = ['must lie in (0, 2)']
        if self.max_generations < 1:
            errors['max_generations'] = ['must be positive']
        if not 0 <= self.seed <= SEED_MAX:
            errors['seed'] = ['must be an unsigned 64-bit integer']
        if errors:
            raise InvalidConfigError(errors)


def _result(order, w, profile, started, method, **details) -> HeuristicResult:
    ranking = Ranking(tuple(int(item) for item in order))
    return HeuristicResult(
        ranking=ranking,
        cost=Fraction(order_cost_numerator(ranking, w), profile.m),
        elapsed=time.perf_counter() - started,
        method=method,
        details=details or None,
    )


def kiwisort(profile: Profile, seed=1234) -> HeuristicResult:
    """Quicksort on strict pairwise majorities with uniform random pivots."""
    started = time.perf_counter()
    w = precedence_matrix(profile).w
    rng = make_rng(seed)

    def sort(items):
        if len(items) <= 1:
            return list(items)
        pivot = items[int(rng.integers(len(items)))]
        left = [y for y in items if y != pivot and w[y, pivot] > w[pivot, y]]
        right = [y for y in items if y != pivot and w[y, pivot] <= w[pivot, y]]
        return sort(left) + [pivot] + sort(right)

    return _result(sort(list(range(profile.n))), w, profile, started, 'kiwisort')


def mc4_transition_matrix(w, m, teleport=0.05) -> np.ndarray:
    n = w.shape[0]
    # from i, propose j uniformly; move iff a strict majority ranks j above i
    moves = (w.T > m / 2).astype(np.float64) / n
    np.fill_diagonal(moves, 0.0)
    np.fill_diagonal(moves, 1.0 - moves.sum(axis=1))
    return (1.0 - teleport) * moves + teleport / n


def stationary_distribution(transition, tol=1e-10, max_iters=10000) -> np.ndarray:
    n = transition.shape[0]
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iters):
        updated = pi @ transition
        updated /= updated.sum()
        if np.abs(updated - pi).sum() < tol:
            return updated
        pi = updated
    raise ConvergenceError(f"power iteration did not converge within {max_iters} iterations", last_iterate=pi)


def markov_chain(profile: Profile, teleport=0.05, tol=1e-10, max_iters=10000) -> HeuristicResult:
    """MC4: rank items by the stationary probability of the majority chain."""
    if not 0 < teleport < 1:
        raise InvalidConfigError({'teleport': ['must lie in (0, 1)']})
    started = time.perf_counter()
    w = precedence_matrix(profile).w
    pi = stationary_distribution(mc4_transition_matrix(w, profile.m, teleport), tol, max_iters)
    order = np.lexsort((np.arange(profile.n), -pi))
    return _result(order, w, profile, started, 'mc4', stationary=pi.tolist())


def agreement_scores(w, remaining) -> np.ndarray:
    """agreement[x] = sum of w[x][y] over the other remaining items y."""
    sub = w[np.ix_(remaining, remaining)]
    return sub.sum(axis=1)


def regret_scores(w, remaining) -> np.ndarray:
    """regret[x] = sum of w[y][x] over the other remaining items y."""
    sub = w[np.ix_(remaining, remaining)]
    return sub.sum(axis=0)


def _greedy(profile, pick, method) -> HeuristicResult:
    started = time.perf_counter()
    w = precedence_matrix(profile).w
    remaining = list(range(profile.n))
    order = []
    while remaining:
        index = pick(w, remaining)
        order.append(remaining.pop(index))
    return _result(order, w, profile, started, method)


def greedy_max_agreement(profile: Profile) -> HeuristicResult:
    # argmax keeps the first (lowest-index) maximum
    return _greedy(profile, lambda w, remaining: int(np.argmax(agreement_scores(w, remaining))), 'max-agreement')


def greedy_min_regret(profile: Profile) -> HeuristicResult:
    return _greedy(profile, lambda w, remaining: int(np.argmin(regret_scores(w, remaining))), 'min-regret')


def decode_scores(scores) -> np.ndarray:
    """Ascending score = earlier position; ties by item index."""
    return np.argsort(scores, kind='stable')


def decor(profile: Profile, config: DecorConfig = DecorConfig()) -> HeuristicResult:
    """Differential evolution over real score vectors decoded by argsort."""
    started = time.perf_counter()
    w = precedence_matrix(profile).w
    rng = make_rng(config.seed)
    n = profile.n
    size = max(config.population_size, profile.m)

    seeded = profile.positions().astype(np.float64)
    seeded += rng.uniform(-0.25, 0.25, size=seeded.shape)
    population = np.vstack([seeded, rng.uniform(0.0, n, size=(size - profile.m, n))])
    costs = np.array([order_cost_numerator(decode_scores(member), w) for member in population])

    best = int(np.argmin(costs))
    best_cost, best_scores = int(costs[best]), population[best].copy()
    history = [best_cost]
    stall, generation = 0, 0
    while stall < config.stall_limit and generation < config.max_generations:
        generation += 1
        improved = False
        for target in range(size):
            others = [k for k in range(size) if k != target]
            a, b, c = rng.choice(others, size=3, replace=False)
            mutant = population[a] + config.differential_weight * (population[b] - population[c])
            crossover = rng.random(n) < config.crossover_rate
            crossover[int(rng.integers(n))] = True
            trial = np.where(crossover, mutant, population[target])
            trial_cost = order_cost_numerator(decode_scores(trial), w)
            if trial_cost < costs[target]:
                population[target], costs[target] = trial, trial_cost
                if trial_cost < best_cost:
                    best_cost, best_scores = trial_cost, trial.copy()
                    improved = True
        history.append(best_cost)
        stall = 0 if improved else stall + 1

    logger.debug('decor stopped after %d generations at cost %d', generation, best_cost)
    return _result(decode_scores(best_scores), w, profile, started, 'decor',
                   generations=generation, best_history=history)
