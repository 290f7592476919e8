"""
REINFORCE with a greedy-rollout baseline.

Each step samples a batch of fresh instances, scores a sampled rollout of the
trained policy against a greedy rollout of the frozen baseline policy and
follows the advantage-weighted log-likelihood gradient. After every epoch a
one-sided paired t-test on a fixed validation set decides whether the
baseline is replaced by the trained policy.
"""
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from core.exceptions import CheckpointMismatchError, InvalidConfigError, InvalidInputError
from core.seeding import SEED_MAX, derive_seed, make_rng, restore_rng, rng_state
from core.utils import decode_array, encode_array
from policy.checkpoint import Checkpoint, save_checkpoint
from policy.model import ModelConfig, copy_params, decode, init_params, params_from_arrays, total_log_prob
from policy.optim import AdamState, adam_step
from policy.stats import should_replace_baseline
from policy.tensor import Tape, mul, reduce_sum, scale
from rankings.generators import KINDS, GeneratorSpec, generate
from rankings.kernels import Profile, Ranking, order_cost_numerator, precedence_matrix

logger = logging.getLogger(__name__)
progress_logger = logging.getLogger('kemeny.progress')


@dataclass(frozen=True)
class MixEntry:
    """One component of the training instance distribution."""
    kind: str = 'random'
    n_min: int = 10
    n_max: int = 10
    m_min: int = 5
    m_max: int = 5
    scale_M: float = 1.0
    swap_passes: int = 1
    repeat_count: Optional[int] = None
    weight: float = 1.0

    def __post_init__(self):
        errors = {}
        if self.kind not in KINDS:
            errors['kind'] = [f"must be one of {', '.join(KINDS)}"]
        if not 2 <= self.n_min <= self.n_max:
            errors['n_min'] = ['must satisfy 2 <= n_min <= n_max']
        if not 1 <= self.m_min <= self.m_max:
            errors['m_min'] = ['must satisfy 1 <= m_min <= m_max']
        if self.repeat_count is not None and not 1 <= self.repeat_count <= self.m_min:
            errors['repeat_count'] = [f"must lie in [1, m_min={self.m_min}]"]
        if self.swap_passes < 1:
            errors['swap_passes'] = ['must be positive']
        if not self.weight > 0:
            errors['weight'] = ['must be positive']
        if errors:
            raise InvalidConfigError(errors)

    def spec(self, n, m, seed) -> GeneratorSpec:
        return GeneratorSpec(kind=self.kind, n=n, m=m, seed=seed, repeat_count=self.repeat_count,
                             scale_M=self.scale_M, swap_passes=self.swap_passes)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    steps_per_epoch: int = 100
    batch_size: int = 64
    alpha: float = 0.05
    learning_rate: float = 1e-4
    distribution: tuple = (MixEntry(),)
    validation_size: int = 256
    seed: int = 1234
    model: ModelConfig = field(default_factory=ModelConfig)
    dtype: str = 'float32'

    def __post_init__(self):
        errors = {}
        if self.epochs < 0:
            errors['epochs'] = ['must not be negative']
        for name in ('steps_per_epoch', 'batch_size', 'validation_size'):
            if getattr(self, name) < 1:
                errors[name] = ['must be positive']
        if not 0 < self.alpha < 1:
            errors['alpha'] = ['must lie in (0, 1)']
        if self.learning_rate < 0:
            errors['learning_rate'] = ['must not be negative']
        if not self.distribution:
            errors['distribution'] = ['needs at least one entry']
        elif max(entry.m_max for entry in self.distribution) > self.model.max_m:
            errors['distribution'] = [f"voter counts exceed the model's max_m={self.model.max_m}"]
        if self.validation_size < 2:
            errors['validation_size'] = ['the paired t-test needs at least 2 instances']
        if not 0 <= self.seed <= SEED_MAX:
            errors['seed'] = ['must be an unsigned 64-bit integer']
        if self.dtype not in ('float32', 'float64'):
            errors['dtype'] = ['must be float32 or float64']
        if errors:
            raise InvalidConfigError(errors)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochStats:
    epoch: int
    mean_sample_cost: float
    mean_baseline_cost: float
    validation_cost: float
    baseline_validation_cost: float
    t: Optional[float]
    p: Optional[float]
    replaced: bool
    seconds: float = field(default=0.0, compare=False)


@dataclass
class TrainReport:
    initial_validation_cost: Optional[float] = None
    epochs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, document: dict) -> 'TrainReport':
        return cls(initial_validation_cost=document.get('initial_validation_cost'),
                   epochs=[EpochStats(**epoch) for epoch in document.get('epochs', [])])


@dataclass(frozen=True)
class StepStats:
    orders: np.ndarray
    baseline_orders: np.ndarray
    sample_costs: np.ndarray
    baseline_costs: np.ndarray
    loss: float

    @property
    def advantages(self) -> np.ndarray:
        return self.sample_costs - self.baseline_costs


def costs_of(orders, profiles) -> np.ndarray:
    """Kemeny cost of each order against its own profile."""
    return np.array([order_cost_numerator(order, precedence_matrix(profile)) / profile.m
                     for order, profile in zip(orders, profiles)], dtype=np.float64)


def surrogate_loss(total_log_probs, advantages):
    """Scalar whose gradient is mean_i(advantage_i * grad log p(rollout_i))."""
    advantages = np.asarray(advantages, dtype=total_log_probs.dtype)
    return scale(reduce_sum(mul(total_log_probs, advantages)), 1.0 / advantages.size)


def reinforce_step(profiles, params, baseline_params, config: ModelConfig, rng):
    """Gradients of the surrogate loss for one batch of same-n profiles."""
    if not profiles:
        raise InvalidInputError('a training batch needs at least one profile')
    baseline_orders, _ = decode(profiles, baseline_params, config, mode='greedy')
    with Tape() as tape:
        orders, per_step = decode(profiles, params, config, mode='sample', rng=rng)
        sample_costs = costs_of(orders, profiles)
        baseline_costs = costs_of(baseline_orders, profiles)
        loss = surrogate_loss(reduce_sum(per_step, axis=-1), sample_costs - baseline_costs)
        grads = tape.backward(loss, params)
    return grads, StepStats(orders=orders, baseline_orders=baseline_orders, sample_costs=sample_costs,
                            baseline_costs=baseline_costs, loss=float(loss.data))


def draw_instance(entry: MixEntry, n, rng) -> Profile:
    m = int(rng.integers(entry.m_min, entry.m_max + 1))
    return generate(entry.spec(n, m, int(rng.integers(0, 2 ** 63))))


def _pick_entry(distribution, rng) -> MixEntry:
    weights = np.array([entry.weight for entry in distribution], dtype=np.float64)
    return distribution[int(rng.choice(len(distribution), p=weights / weights.sum()))]


def draw_batch(config: TrainConfig, rng) -> list:
    """One mix entry and one n per batch; m varies per instance."""
    entry = _pick_entry(config.distribution, rng)
    n = int(rng.integers(entry.n_min, entry.n_max + 1))
    return [draw_instance(entry, n, rng) for _ in range(config.batch_size)]


def validation_profiles(config: TrainConfig) -> list:
    rng = make_rng(derive_seed(config.seed, 1))
    profiles = []
    for _ in range(config.validation_size):
        entry = _pick_entry(config.distribution, rng)
        profiles.append(draw_instance(entry, int(rng.integers(entry.n_min, entry.n_max + 1)), rng))
    return profiles


def _batched_orders(profiles, params, config, mode='greedy', rng=None) -> list:
    """Rollouts in input order, batching profiles that share n."""
    orders = [None] * len(profiles)
    by_n = {}
    for index, profile in enumerate(profiles):
        by_n.setdefault(profile.n, []).append(index)
    for n in sorted(by_n):
        indices = by_n[n]
        batch_orders, _ = decode([profiles[index] for index in indices], params, config, mode=mode, rng=rng)
        for index, order in zip(indices, batch_orders):
            orders[index] = order
    return orders


def greedy_costs(profiles, params, config: ModelConfig) -> np.ndarray:
    return costs_of(_batched_orders(profiles, params, config), profiles)


@dataclass(frozen=True)
class Evaluation:
    rankings: tuple
    costs: tuple
    mean_cost: float
    mean_gap: Optional[float]
    elapsed: float


def evaluate(checkpoint: Checkpoint, profiles, mode='greedy', oracle_costs=None, seed=1234) -> Evaluation:
    """Rollouts of a checkpoint over profiles, with the mean absolute gap to
    `oracle_costs` when given."""
    for profile in profiles:
        if profile.m > checkpoint.config.max_m:
            raise CheckpointMismatchError(f"profile has m={profile.m}, checkpoint supports max_m="
                                          f"{checkpoint.config.max_m}")
    started = time.perf_counter()
    rng = make_rng(seed) if mode == 'sample' else None
    orders = _batched_orders(profiles, checkpoint.params, checkpoint.config, mode=mode, rng=rng)
    elapsed = time.perf_counter() - started
    costs = tuple(Fraction(order_cost_numerator(order, precedence_matrix(profile)), profile.m)
                  for order, profile in zip(orders, profiles))
    mean_gap = None
    if oracle_costs is not None:
        if len(oracle_costs) != len(costs):
            raise InvalidInputError(f"{len(oracle_costs)} oracle costs for {len(costs)} profiles")
        mean_gap = float(np.mean([float(cost - Fraction(oracle)) for cost, oracle in zip(costs, oracle_costs)]))
    return Evaluation(
        rankings=tuple(Ranking(tuple(int(item) for item in order)) for order in orders),
        costs=costs,
        mean_cost=float(np.mean([float(cost) for cost in costs])),
        mean_gap=mean_gap,
        elapsed=elapsed,
    )


def log_prob(profile: Profile, params, config: ModelConfig, ranking) -> float:
    """Log-probability the policy assigns to `ranking`, scored with its choices forced."""
    ranking = ranking if isinstance(ranking, Ranking) else Ranking(tuple(ranking))
    if ranking.n != profile.n:
        raise InvalidInputError(f"ranking has {ranking.n} items, profile has {profile.n}")
    return float(total_log_prob([profile], params, config, [ranking.order]).data[0])


def solve_with_checkpoint(checkpoint: Checkpoint, profile: Profile):
    from solvers.heuristics import HeuristicResult

    evaluation = evaluate(checkpoint, [profile])
    return HeuristicResult(ranking=evaluation.rankings[0], cost=evaluation.costs[0], elapsed=evaluation.elapsed,
                           method='transformer')


def _training_state(config, baseline, adam, rng, report, epochs_completed) -> dict:
    return {
        'train_config': config.to_dict(),
        'epochs_completed': epochs_completed,
        'baseline': {name: encode_array(param.data) for name, param in sorted(baseline.items())},
        'adam': adam.to_document(),
        'rng': rng_state(rng),
        'report': report.to_dict(),
    }


def _checkpoint(config, params, baseline, adam, rng, report, epochs_completed) -> Checkpoint:
    return Checkpoint(
        config=config.model,
        params=params,
        metadata={'epochs_completed': epochs_completed, 'seed': config.seed},
        training_state=_training_state(config, baseline, adam, rng, report, epochs_completed),
    )


def _comparable(document: dict) -> dict:
    return {key: value for key, value in json.loads(json.dumps(document)).items() if key != 'epochs'}


def _resume(config: TrainConfig, checkpoint: Checkpoint):
    state = checkpoint.training_state
    if not state:
        raise CheckpointMismatchError('checkpoint carries no training state to resume from')
    if _comparable(state['train_config']) != _comparable(config.to_dict()):
        raise CheckpointMismatchError('training config differs from the one the checkpoint was trained with')
    baseline = params_from_arrays({name: decode_array(value) for name, value in state['baseline'].items()})
    return (checkpoint.params, baseline, AdamState.from_document(state['adam']), restore_rng(state['rng']),
            TrainReport.from_dict(state['report']), int(state['epochs_completed']))


def train(config: TrainConfig, checkpoint_path=None, resume_from: Checkpoint = None):
    """Runs the configured epochs; returns (Checkpoint, TrainReport).

    With `checkpoint_path` the resumable state is written there before the
    first epoch and after every epoch; an interrupt leaves the last of them.
    """
    model = config.model
    validation = validation_profiles(config)
    if resume_from is not None:
        params, baseline, adam, rng, report, completed = _resume(config, resume_from)
        logger.info('Resuming after epoch %d of %d', completed, config.epochs)
    else:
        params = init_params(model, seed=derive_seed(config.seed, 0), dtype=np.dtype(config.dtype))
        baseline = copy_params(params)
        adam = AdamState(learning_rate=config.learning_rate)
        rng = make_rng(derive_seed(config.seed, 2))
        report = TrainReport(initial_validation_cost=float(greedy_costs(validation, params, model).mean()))
        completed = 0
        logger.info('Initial greedy validation cost %.4f', report.initial_validation_cost)

    def snapshot():
        if checkpoint_path is not None:
            save_checkpoint(_checkpoint(config, params, baseline, adam, rng, report, completed), checkpoint_path)

    snapshot()
    baseline_costs = greedy_costs(validation, baseline, model)
    for epoch in range(completed, config.epochs):
        started = time.perf_counter()
        sample_costs, rollout_costs = [], []
        try:
            for _ in range(config.steps_per_epoch):
                grads, stats = reinforce_step(draw_batch(config, rng), params, baseline, model, rng)
                adam_step(params, grads, adam)
                sample_costs.append(stats.sample_costs.mean())
                rollout_costs.append(stats.baseline_costs.mean())
        except KeyboardInterrupt:
            logger.warning('Interrupted in epoch %d; the last saved state is after epoch %d', epoch + 1, completed)
            raise

        candidate_costs = greedy_costs(validation, params, model)
        replaced, test = should_replace_baseline(candidate_costs, baseline_costs, config.alpha)
        stats = EpochStats(
            epoch=epoch + 1,
            mean_sample_cost=float(np.mean(sample_costs)),
            mean_baseline_cost=float(np.mean(rollout_costs)),
            validation_cost=float(candidate_costs.mean()),
            baseline_validation_cost=float(baseline_costs.mean()),
            t=None if test is None else test.t,
            p=None if test is None else test.p,
            replaced=replaced,
            seconds=time.perf_counter() - started,
        )
        if replaced:
            baseline = copy_params(params)
            baseline_costs = candidate_costs
        report.epochs.append(stats)
        completed = epoch + 1
        progress_logger.info(json.dumps(asdict(stats), sort_keys=True))
        snapshot()

    checkpoint = _checkpoint(config, params, baseline, adam, rng, report, completed)
    return checkpoint, report
