"""
The Kemeny Transformer: an encoder over items (no positional encoding) and an
autoregressive pointer decoder that emits one item per step.

Parameters live in a flat, name-sorted dict of `Tensor`s. All functions are
batched: a batch holds profiles with the same item count n; voter counts may
differ, since every profile is padded to `max_m` feature columns.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from core.exceptions import CapacityError, InvalidConfigError, InvalidInputError, InvalidStateError
from core.seeding import make_rng
from policy.tensor import (
    MASK_VALUE, Tensor, add, concat, embedding_lookup, layer_norm, log_softmax, matmul, mul, reduce_sum,
    relu, scale, slice_axis, softmax,
)
from rankings.kernels import Profile, Ranking

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    encoder_layers: int = 2
    decoder_layers: int = 1
    max_m: int = 10
    pe_base: float = 10000.0

    def __post_init__(self):
        errors = {}
        for name in ('d_model', 'n_heads', 'd_ff', 'encoder_layers', 'decoder_layers', 'max_m'):
            if getattr(self, name) < 1:
                errors[name] = ['must be positive']
        if not errors and self.d_model % self.n_heads:
            errors['n_heads'] = [f"must divide d_model={self.d_model}"]
        if self.pe_base <= 1:
            errors['pe_base'] = ['must exceed 1']
        if errors:
            raise InvalidConfigError(errors)

    @classmethod
    def full_scale(cls, max_m=10) -> 'ModelConfig':
        """Three encoder layers, two decoder layers, width 128, eight heads."""
        return cls(d_model=128, n_heads=8, d_ff=512, encoder_layers=3, decoder_layers=2, max_m=max_m)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Trajectory:
    ranking: Ranking
    step_log_probs: tuple

    @property
    def total_log_prob(self) -> float:
        return float(sum(self.step_log_probs))


def _attention_names(prefix):
    return [f"{prefix}.{proj}.{kind}" for proj in ('query', 'key', 'value', 'output') for kind in ('weight', 'bias')]


def parameter_shapes(config: ModelConfig) -> dict:
    d, d_ff = config.d_model, config.d_ff
    shapes = {'encoder.input.weight': (config.max_m, d), 'encoder.input.bias': (d,), 'decoder.start': (d,),
              'decoder.pointer.query.weight': (d, d), 'decoder.pointer.key.weight': (d, d)}

    def attention(prefix):
        for name in _attention_names(prefix):
            shapes[name] = (d, d) if name.endswith('weight') else (d,)

    def feed_forward(prefix):
        shapes.update({f"{prefix}.hidden.weight": (d, d_ff), f"{prefix}.hidden.bias": (d_ff,),
                       f"{prefix}.output.weight": (d_ff, d), f"{prefix}.output.bias": (d,)})

    def norm(prefix):
        shapes.update({f"{prefix}.gain": (d,), f"{prefix}.bias": (d,)})

    for layer in range(config.encoder_layers):
        attention(f"encoder.layers.{layer}.attention")
        norm(f"encoder.layers.{layer}.norm1")
        feed_forward(f"encoder.layers.{layer}.feed_forward")
        norm(f"encoder.layers.{layer}.norm2")
    for layer in range(config.decoder_layers):
        attention(f"decoder.layers.{layer}.self_attention")
        norm(f"decoder.layers.{layer}.norm1")
        attention(f"decoder.layers.{layer}.cross_attention")
        norm(f"decoder.layers.{layer}.norm2")
        feed_forward(f"decoder.layers.{layer}.feed_forward")
        norm(f"decoder.layers.{layer}.norm3")
    return dict(sorted(shapes.items()))


def init_params(config: ModelConfig, seed=1234, dtype=np.float32) -> dict:
    rng = make_rng(seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith('.gain'):
            value = np.ones(shape)
        elif name.endswith('.bias'):
            value = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            value = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(value.astype(dtype), requires_grad=True)
    return params


def params_from_arrays(arrays: dict, dtype=None) -> dict:
    return {name: Tensor(np.array(value, dtype=dtype or value.dtype), requires_grad=True)
            for name, value in sorted(arrays.items())}


def copy_params(params: dict) -> dict:
    return {name: Tensor(param.data.copy(), requires_grad=True) for name, param in params.items()}


def tokenize(profile: Profile, max_m=None) -> np.ndarray:
    """(n, m) matrix of 1-based positions divided by n; row i describes item i."""
    if max_m is not None and profile.m > max_m:
        raise CapacityError(f"profile has m={profile.m} voters, the model supports at most {max_m}")
    return (profile.positions().T + 1) / profile.n


def encoder_features(profiles, max_m, dtype=np.float32) -> np.ndarray:
    """(B, n, max_m) batch; short profiles repeat their mean position column."""
    n = profiles[0].n
    batch = np.empty((len(profiles), n, max_m), dtype=np.float64)
    for index, profile in enumerate(profiles):
        if profile.n != n:
            raise InvalidInputError(f"a batch needs equal item counts, got {n} and {profile.n}")
        features = tokenize(profile, max_m)
        batch[index, :, :profile.m] = features
        batch[index, :, profile.m:] = features.mean(axis=1, keepdims=True)
    return batch.astype(dtype)


@lru_cache(maxsize=64)
def _positional_table(d_model, base, length):
    steps = np.arange(1, length + 1, dtype=np.float64)[:, None]
    pairs = np.arange(0, d_model, 2, dtype=np.float64)
    angles = steps / np.power(base, pairs / d_model)
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, :d_model // 2])
    table.setflags(write=False)
    return table


def positional_encoding(t: int, d_model: int, base=10000.0) -> np.ndarray:
    """Sinusoidal encoding of decoding step t >= 1."""
    if t < 1:
        raise InvalidInputError(f"decoding steps start at 1, got {t}")
    if t <= 1024:
        return _positional_table(d_model, float(base), 1024)[t - 1]
    pairs = np.arange(0, d_model, 2, dtype=np.float64)
    angles = t / np.power(base, pairs / d_model)
    vector = np.zeros(d_model)
    vector[0::2] = np.sin(angles)
    vector[1::2] = np.cos(angles[:d_model // 2])
    return vector


def linear(x, params, prefix, bias=True):
    out = matmul(x, params[f"{prefix}.weight"])
    return add(out, params[f"{prefix}.bias"]) if bias else out


def _heads(query, keys, values, n_heads, mask=None):
    d_model = query.shape[-1]
    width = d_model // n_heads
    outputs = []
    for head in range(n_heads):
        lo, hi = head * width, (head + 1) * width
        scores = scale(matmul(slice_axis(query, lo, hi), slice_axis(keys, lo, hi), transpose_b=True),
                       1.0 / math.sqrt(width))
        outputs.append(matmul(softmax(scores, mask), slice_axis(values, lo, hi)))
    return outputs[0] if n_heads == 1 else concat(outputs, axis=-1)


def attention(x, keys, values, params, prefix, n_heads, mask=None):
    """Multi-head attention of x over already projected keys and values."""
    query = linear(x, params, f"{prefix}.query")
    return linear(_heads(query, keys, values, n_heads, mask), params, f"{prefix}.output")


def feed_forward(x, params, prefix):
    return linear(relu(linear(x, params, f"{prefix}.hidden")), params, f"{prefix}.output")


def norm(x, params, prefix):
    return layer_norm(x, params[f"{prefix}.gain"], params[f"{prefix}.bias"])


def encode(features, params, config: ModelConfig) -> Tensor:
    """(B, n, max_m) features -> (B, n, d_model) item representations."""
    features = np.asarray(features)
    if features.ndim != 3 or features.shape[-1] != config.max_m:
        raise InvalidInputError(f"encoder expects (B, n, {config.max_m}) features, got {features.shape}")
    dtype = params['encoder.input.weight'].dtype
    hidden = linear(Tensor(features.astype(dtype)), params, 'encoder.input')
    for layer in range(config.encoder_layers):
        prefix = f"encoder.layers.{layer}"
        keys = linear(hidden, params, f"{prefix}.attention.key")
        values = linear(hidden, params, f"{prefix}.attention.value")
        hidden = norm(add(hidden, attention(hidden, keys, values, params, f"{prefix}.attention", config.n_heads)),
                      params, f"{prefix}.norm1")
        hidden = norm(add(hidden, feed_forward(hidden, params, f"{prefix}.feed_forward")), params, f"{prefix}.norm2")
    return hidden


@dataclass
class DecoderCache:
    """Keys/values of every query decoded so far, per decoder layer, plus the
    cross-attention and pointer projections of the encoder output."""
    encoded: Tensor
    cross_keys: list
    cross_values: list
    pointer_keys: Tensor
    self_keys: list = field(default_factory=list)
    self_values: list = field(default_factory=list)
    length: int = 0


def start_decoding(encoded: Tensor, params, config: ModelConfig) -> DecoderCache:
    cross_keys, cross_values = [], []
    for layer in range(config.decoder_layers):
        prefix = f"decoder.layers.{layer}.cross_attention"
        cross_keys.append(linear(encoded, params, f"{prefix}.key"))
        cross_values.append(linear(encoded, params, f"{prefix}.value"))
    return DecoderCache(
        encoded=encoded,
        cross_keys=cross_keys,
        cross_values=cross_values,
        pointer_keys=matmul(encoded, params['decoder.pointer.key.weight']),
        self_keys=[[] for _ in range(config.decoder_layers)],
        self_values=[[] for _ in range(config.decoder_layers)],
    )


def additive_mask(selected: np.ndarray, dtype=np.float32) -> np.ndarray:
    """(B, n) boolean selection -> (B, 1, n) additive mask."""
    return np.where(selected, MASK_VALUE, 0.0).astype(dtype)[:, None, :]


def decode_step(t, prev_items, cache: DecoderCache, selected: np.ndarray, params, config: ModelConfig):
    """Masked logits (B, 1, n) for step t and the cache with the step-t query appended.

    `prev_items` holds the item chosen at step t-1 for each batch element and
    is ignored at t = 1, where the learned start vector stands in for it.
    """
    batch, n = selected.shape
    if cache.length != t - 1 or np.any(selected.sum(axis=1) != t - 1):
        raise InvalidStateError(f"step {t} needs {t - 1} cached queries and {t - 1} selected items, "
                                f"got {cache.length} and {selected.sum(axis=1).tolist()}")
    dtype = cache.encoded.dtype
    if t == 1:
        anchor = add(Tensor(np.zeros((batch, 1, config.d_model), dtype=dtype)), params['decoder.start'])
    else:
        anchor = embedding_lookup(cache.encoded, prev_items)
    hidden = add(anchor, positional_encoding(t, config.d_model, config.pe_base).astype(dtype))
    mask = additive_mask(selected, dtype)

    for layer in range(config.decoder_layers):
        prefix = f"decoder.layers.{layer}"
        cache.self_keys[layer].append(linear(hidden, params, f"{prefix}.self_attention.key"))
        cache.self_values[layer].append(linear(hidden, params, f"{prefix}.self_attention.value"))
        keys = concat(cache.self_keys[layer], axis=1) if t > 1 else cache.self_keys[layer][0]
        values = concat(cache.self_values[layer], axis=1) if t > 1 else cache.self_values[layer][0]
        hidden = norm(add(hidden, attention(hidden, keys, values, params, f"{prefix}.self_attention",
                                            config.n_heads)), params, f"{prefix}.norm1")
        hidden = norm(add(hidden, attention(hidden, cache.cross_keys[layer], cache.cross_values[layer], params,
                                            f"{prefix}.cross_attention", config.n_heads, mask)),
                      params, f"{prefix}.norm2")
        hidden = norm(add(hidden, feed_forward(hidden, params, f"{prefix}.feed_forward")), params,
                      f"{prefix}.norm3")
    cache.length += 1

    query = matmul(hidden, params['decoder.pointer.query.weight'])
    logits = scale(matmul(query, cache.pointer_keys, transpose_b=True), 1.0 / math.sqrt(config.d_model))
    return add(logits, mask), cache


def _sample(probabilities, selected, rng):
    cumulative = np.cumsum(probabilities, axis=1)
    thresholds = rng.random(probabilities.shape[0]) * cumulative[:, -1]
    hits = cumulative > thresholds[:, None]
    choice = np.argmax(hits, axis=1)
    # rounding can leave no hit or land on a zero-probability item
    for row in np.flatnonzero(~hits.any(axis=1) | selected[np.arange(len(choice)), choice]):
        choice[row] = np.flatnonzero(~selected[row])[-1]
    return choice


def decode(profiles, params, config: ModelConfig, mode='greedy', rng=None, forced=None):
    """Run the encoder and n decoding steps for a batch of same-n profiles.

    Returns the (B, n) orders and a (B,) tensor of total log-probabilities;
    with `forced` orders the choices are taken from it instead of the policy.
    """
    if mode not in ('greedy', 'sample'):
        raise InvalidInputError(f"rollout mode must be greedy or sample, got {mode!r}")
    if mode == 'sample' and rng is None and forced is None:
        raise InvalidInputError('sample rollouts need a random generator')
    encoded = encode(encoder_features(profiles, config.max_m, params['encoder.input.weight'].dtype), params, config)
    batch, n = len(profiles), profiles[0].n
    cache = start_decoding(encoded, params, config)
    selected = np.zeros((batch, n), dtype=bool)
    orders = np.zeros((batch, n), dtype=np.int64)
    step_log_probs = []
    prev = None
    rows = np.arange(batch)
    for t in range(1, n + 1):
        logits, cache = decode_step(t, prev, cache, selected, params, config)
        log_probs = log_softmax(logits)
        if forced is not None:
            choice = np.asarray(forced, dtype=np.int64)[:, t - 1]
            if selected[rows, choice].any():
                raise InvalidInputError('forced orders must be permutations')
        elif mode == 'greedy':
            choice = np.argmax(logits.data[:, 0, :], axis=1)
        else:
            probabilities = np.exp(log_probs.data[:, 0, :].astype(np.float64))
            choice = _sample(probabilities, selected, rng)
        one_hot = np.zeros((batch, 1, n), dtype=log_probs.dtype)
        one_hot[rows, 0, choice] = 1.0
        step_log_probs.append(reduce_sum(mul(log_probs, one_hot), axis=-1))
        orders[:, t - 1] = choice
        selected[rows, choice] = True
        prev = choice
    per_step = concat(step_log_probs, axis=-1) if n > 1 else step_log_probs[0]
    return orders, per_step


def rollout(profile: Profile, params, config: ModelConfig, mode='greedy', seed=None) -> Trajectory:
    rng = make_rng(seed) if mode == 'sample' else None
    return rollout_batch([profile], params, config, mode, rng)[0]


def rollout_batch(profiles, params, config: ModelConfig, mode='greedy', rng=None) -> list:
    orders, per_step = decode(profiles, params, config, mode, rng)
    return [Trajectory(ranking=Ranking(tuple(int(item) for item in order)),
                       step_log_probs=tuple(float(value) for value in per_step.data[index]))
            for index, order in enumerate(orders)]


def total_log_prob(profiles, params, config: ModelConfig, orders) -> Tensor:
    """(B,) log-probabilities of the given orders, recomputed with the choices forced."""
    _, per_step = decode(profiles, params, config, forced=orders)
    return reduce_sum(per_step, axis=-1)
