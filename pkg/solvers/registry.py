"""Method names exposed on the command line and how to run each one."""
import time
from dataclasses import dataclass, field
from typing import Optional

from core.exceptions import InvalidInputError
from rankings.kernels import Profile
from solvers.exact import solve_exact
from solvers.heuristics import (
    DecorConfig, HeuristicResult, decor, greedy_max_agreement, greedy_min_regret, kiwisort, markov_chain,
)

METHODS = ('exact', 'kiwisort', 'mc4', 'max-agreement', 'min-regret', 'decor', 'transformer')


@dataclass
class SolveOptions:
    seed: int = 1234
    teleport: float = 0.05
    tol: float = 1e-10
    max_iters: int = 10000
    decor: DecorConfig = field(default_factory=DecorConfig)
    checkpoint: Optional[object] = None


def _exact(profile, options):
    started = time.perf_counter()
    result = solve_exact(profile)
    return HeuristicResult(ranking=result.ranking, cost=result.cost, elapsed=time.perf_counter() - started,
                           method='exact', details={'nodes_explored': result.nodes_explored})


def _transformer(profile, options):
    from policy.training import solve_with_checkpoint

    if options.checkpoint is None:
        raise InvalidInputError('the transformer method needs --checkpoint')
    return solve_with_checkpoint(options.checkpoint, profile)


SOLVERS = {
    'exact': _exact,
    'kiwisort': lambda profile, options: kiwisort(profile, seed=options.seed),
    'mc4': lambda profile, options: markov_chain(profile, options.teleport, options.tol, options.max_iters),
    'max-agreement': lambda profile, options: greedy_max_agreement(profile),
    'min-regret': lambda profile, options: greedy_min_regret(profile),
    'decor': lambda profile, options: decor(profile, options.decor),
    'transformer': _transformer,
}


def solve(method: str, profile: Profile, options: SolveOptions = None) -> HeuristicResult:
    if method not in SOLVERS:
        raise InvalidInputError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    return SOLVERS[method](profile, options or SolveOptions())
