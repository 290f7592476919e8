import json
import tempfile
from dataclasses import replace
from io import StringIO
from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, tag
from scipy import stats as scipy_stats

from core import exit_codes
from core.exceptions import (
    CapacityError, CheckpointMismatchError, CorruptCheckpointError, DegenerateTestError, InvalidInputError,
    InvalidStateError, InvalidUseError, ShapeError, UnknownVersionError,
)
from core.seeding import derive_seed, make_rng
from policy.checkpoint import Checkpoint, checkpoint_document, load_checkpoint, save_checkpoint
from policy.forms import TrainConfigForm
from policy.model import (
    ModelConfig, copy_params, decode, decode_step, encode, encoder_features, init_params, positional_encoding,
    rollout, rollout_batch, start_decoding, tokenize, total_log_prob,
)
from policy.optim import AdamState, adam_step
from policy.stats import paired_t_test_one_sided, should_replace_baseline, student_t_cdf
from policy.tensor import (
    MASK_VALUE, Tape, Tensor, add, backward, concat, count_macs, embedding_lookup, layer_norm, log, log_softmax,
    matmul, mean, mul, reduce_sum, relu, scale, slice_axis, softmax,
)
from policy.training import (
    MixEntry, TrainConfig, costs_of, evaluate, log_prob, reinforce_step, solve_with_checkpoint, surrogate_loss,
    train,
)
from rankings.generators import GeneratorSpec, generate
from rankings.instances import write_instance
from rankings.kernels import Profile, kemeny_distance, validate_ranking
from solvers.bench import compare_growth, fit_quadratic, rollout_macs
from solvers.exact import solve_exact
from solvers.heuristics import markov_chain

TINY = ModelConfig(d_model=8, n_heads=2, d_ff=16, encoder_layers=1, decoder_layers=1, max_m=5)


def random_profile(n, m, seed):
    return generate(GeneratorSpec(kind='random', n=n, m=m, seed=seed))


def tiny_train_config(**overrides):
    config = TrainConfig(epochs=2, steps_per_epoch=3, batch_size=4, learning_rate=1e-3, validation_size=8, seed=7,
                         distribution=(MixEntry(n_min=4, n_max=6, m_min=3, m_max=5),), model=TINY)
    return replace(config, **overrides)


def numeric_gradient(loss, array, eps=1e-6):
    grad = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        original = array[index]
        array[index] = original + eps
        plus = loss()
        array[index] = original - eps
        minus = loss()
        array[index] = original
        grad[index] = (plus - minus) / (2 * eps)
    return grad


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale_ = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale_ == 0 else np.linalg.norm(a - b) / scale_


class PrimitiveGradientTests(SimpleTestCase):
    """Every primitive against central differences in double precision."""

    def check(self, build, *arrays, weights=None):
        rng = make_rng(len(arrays))
        inputs = [Tensor(np.array(array, dtype=np.float64), requires_grad=True) for array in arrays]
        output_shape = build(*inputs).shape
        weights = rng.standard_normal(output_shape) if weights is None else weights

        def loss():
            return float(reduce_sum(mul(build(*inputs), weights)).data)

        with Tape() as tape:
            tape.backward(reduce_sum(mul(build(*inputs), weights)))
        for tensor in inputs:
            self.assertLessEqual(relative_error(tensor.grad, numeric_gradient(loss, tensor.data)), 1e-6)

    def setUp(self):
        self.rng = make_rng(2024)

    def normal(self, *shape):
        return self.rng.standard_normal(shape)

    def test_matmul(self):
        self.check(matmul, self.normal(3, 4), self.normal(4, 5))
        self.check(matmul, self.normal(2, 3, 4), self.normal(4, 5))
        self.check(lambda a, b: matmul(a, b, transpose_b=True), self.normal(2, 3, 4), self.normal(2, 5, 4))

    def test_add_and_mul(self):
        self.check(add, self.normal(2, 3, 4), self.normal(4))
        self.check(mul, self.normal(3, 4), self.normal(3, 4))
        self.check(lambda a: scale(a, -2.5), self.normal(3, 2))

    def test_relu(self):
        values = self.normal(4, 5)
        self.check(relu, np.sign(values) * (0.1 + np.abs(values)))

    def test_softmax_family(self):
        mask = np.zeros((2, 5))
        mask[0, 1] = mask[1, 3] = MASK_VALUE
        weights = self.normal(2, 5) * (mask == 0)
        self.check(lambda x: softmax(x, mask), self.normal(2, 5), weights=weights)
        self.check(lambda x: log_softmax(x, mask), self.normal(2, 5), weights=weights)
        self.check(softmax, self.normal(3, 4))

    def test_layer_norm(self):
        self.check(layer_norm, self.normal(3, 6), 1.0 + 0.1 * self.normal(6), self.normal(6))

    def test_gather_and_reshape(self):
        self.check(lambda table: embedding_lookup(table, [0, 2, 2, 4]), self.normal(5, 3))
        self.check(lambda table: embedding_lookup(table, [1, 3]), self.normal(2, 4, 3))
        self.check(lambda a, b: concat([a, b], axis=-1), self.normal(2, 3), self.normal(2, 2))
        self.check(lambda x: slice_axis(x, 1, 4), self.normal(3, 6))

    def test_reductions_and_log(self):
        self.check(lambda x: reduce_sum(x, axis=0), self.normal(3, 4))
        self.check(lambda x: mean(x, axis=-1), self.normal(3, 4))
        self.check(log, 0.5 + np.abs(self.normal(3, 3)))

    def test_log_softmax_is_shift_invariant(self):
        x = self.normal(2, 6)
        np.testing.assert_allclose(log_softmax(Tensor(x)).data, log_softmax(Tensor(x + 3.7)).data, atol=1e-12)


class TapeTests(SimpleTestCase):
    def test_backward_needs_a_scalar(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape() as tape:
            with self.assertRaises(InvalidUseError):
                tape.backward(scale(x, 2.0))

    def test_backward_needs_a_tape(self):
        with self.assertRaises(InvalidUseError):
            backward(reduce_sum(Tensor(np.ones(2), requires_grad=True)))

    def test_untouched_parameters_get_zeros(self):
        used, unused = Tensor(np.ones(3), requires_grad=True), Tensor(np.ones(2), requires_grad=True)
        with Tape() as tape:
            grads = tape.backward(reduce_sum(scale(used, 3.0)), {'used': used, 'unused': unused})
        np.testing.assert_array_equal(grads['used'], [3.0, 3.0, 3.0])
        np.testing.assert_array_equal(grads['unused'], [0.0, 0.0])

    def test_shared_inputs_accumulate(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        with Tape() as tape:
            tape.backward(reduce_sum(mul(x, x)))
        np.testing.assert_array_equal(x.grad, [4.0])

    def test_shape_errors(self):
        with self.assertRaises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with self.assertRaises(ShapeError):
            add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))
        with self.assertRaises(ShapeError):
            slice_axis(Tensor(np.ones(3)), 2, 5)

    def test_no_recording_outside_a_tape(self):
        x = Tensor(np.ones(2), requires_grad=True)
        self.assertIsNone(scale(x, 2.0).node_id)

    def test_count_macs(self):
        with count_macs() as counter:
            matmul(Tensor(np.ones((2, 3, 4))), Tensor(np.ones((4, 5))))
            scale(Tensor(np.ones(3)), 2.0)
        self.assertEqual(counter.total, 2 * 3 * 5 * 4)


class AdamTests(SimpleTestCase):
    def test_first_step_moves_by_the_learning_rate(self):
        params = {'x': Tensor(np.array([1.0, -2.0]), requires_grad=True)}
        state = AdamState(learning_rate=0.1)
        adam_step(params, {'x': 2 * params['x'].data}, state)
        np.testing.assert_allclose(params['x'].data, [0.9, -1.9], atol=1e-6)
        self.assertEqual(state.step, 1)

    def test_constant_gradient_moves_by_the_learning_rate_every_step(self):
        params = {'x': Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)}
        state = AdamState(learning_rate=0.05)
        grad = np.array([0.3, -2.0, 7.5])
        for _ in range(100):
            before = params['x'].data.copy()
            adam_step(params, {'x': grad}, state)
            np.testing.assert_allclose(np.abs(params['x'].data - before), 0.05, rtol=1e-6)
            np.testing.assert_array_equal(np.sign(before - params['x'].data), np.sign(grad))
        self.assertEqual(state.step, 100)

    def test_state_round_trip(self):
        params = {'x': Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)}
        state = AdamState(learning_rate=0.01)
        adam_step(params, {'x': np.array([0.5, -0.5], dtype=np.float32)}, state)
        restored = AdamState.from_document(json.loads(json.dumps(state.to_document())))
        twin = {'x': Tensor(params['x'].data.copy(), requires_grad=True)}
        adam_step(params, {'x': np.array([1.0, 1.0], dtype=np.float32)}, state)
        adam_step(twin, {'x': np.array([1.0, 1.0], dtype=np.float32)}, restored)
        self.assertEqual(params['x'].data.tobytes(), twin['x'].data.tobytes())

    def test_shape_mismatch(self):
        params = {'x': Tensor(np.ones(2), requires_grad=True)}
        with self.assertRaises(ShapeError):
            adam_step(params, {'x': np.ones(3)}, AdamState())


class ModelTests(SimpleTestCase):
    def test_config_validation(self):
        with self.assertRaises(InvalidInputError):
            ModelConfig(d_model=10, n_heads=4)
        full = ModelConfig.full_scale()
        self.assertEqual((full.d_model, full.n_heads, full.d_ff, full.encoder_layers, full.decoder_layers),
                         (128, 8, 512, 3, 2))

    def test_tokenize(self):
        np.testing.assert_array_equal(tokenize(Profile(rankings=((0, 1),))), [[0.5], [1.0]])
        features = tokenize(Profile(rankings=((1, 2, 3, 0),) * 3))
        np.testing.assert_array_equal(features[0], [1.0, 1.0, 1.0])
        self.assertTrue(((features > 0) & (features <= 1)).all())
        with self.assertRaises(CapacityError):
            tokenize(random_profile(4, 6, 1), max_m=5)

    def test_padding_repeats_the_mean_position(self):
        features = encoder_features([Profile(rankings=((0, 1, 2, 3), (3, 2, 1, 0)))], max_m=4)
        np.testing.assert_allclose(features[0, :, 2], features[0, :, :2].mean(axis=1))
        np.testing.assert_allclose(features[0, :, 3], features[0, :, :2].mean(axis=1))
        with self.assertRaises(InvalidInputError):
            encoder_features([random_profile(4, 2, 1), random_profile(5, 2, 1)], max_m=4)

    def test_encoder_is_permutation_equivariant(self):
        config = ModelConfig()
        params = init_params(config, seed=3)
        rng = make_rng(4)
        for n in (3, 10, 25):
            features = encoder_features([random_profile(n, 7, n)], config.max_m)
            permutation = rng.permutation(n)
            encoded = encode(features, params, config).data
            permuted = encode(features[:, permutation], params, config).data
            self.assertEqual(encoded.shape, (1, n, config.d_model))
            self.assertLessEqual(np.abs(encoded[:, permutation] - permuted).max(), 1e-5)

    def test_identical_rows_encode_identically(self):
        params = init_params(TINY, seed=1)
        features = make_rng(2).random((1, 5, TINY.max_m)).astype(np.float32)
        features[0, 3] = features[0, 1]
        encoded = encode(features, params, TINY).data
        self.assertLessEqual(np.abs(encoded[0, 1] - encoded[0, 3]).max(), 1e-6)

    def test_positional_encoding(self):
        for t in (1, 2, 17, 1000, 10 ** 6):
            vector = positional_encoding(t, 16)
            self.assertAlmostEqual(vector[0], np.sin(t), places=12)
            self.assertAlmostEqual(vector[1], np.cos(t), places=12)
            self.assertTrue(np.all(np.abs(vector) <= 1.0))
        table = np.array([positional_encoding(t, 64) for t in range(1, 1001)])
        for index in range(1000):
            distances = np.abs(table - table[index]).max(axis=1)
            distances[index] = np.inf
            self.assertGreater(distances.min(), 1e-8)
        with self.assertRaises(InvalidInputError):
            positional_encoding(0, 8)

    def test_decoder_contract_fuzz(self):
        rng = make_rng(1234)
        rollouts = 0
        for trial in range(40):
            params = init_params(TINY, seed=trial)
            if trial % 2:
                for param in params.values():
                    param.data *= 5.0
            n = int(rng.integers(2, 10))
            profiles = [random_profile(n, int(rng.integers(1, TINY.max_m + 1)), derive_seed(trial, index))
                        for index in range(250)]
            cache = start_decoding(encode(encoder_features(profiles, TINY.max_m), params, TINY), params, TINY)
            selected = np.zeros((len(profiles), n), dtype=bool)
            previous, orders = None, []
            for t in range(1, n + 1):
                self.assertTrue((selected.sum(axis=1) == t - 1).all())
                logits, cache = decode_step(t, previous, cache, selected, params, TINY)
                probabilities = softmax(logits).data[:, 0, :].astype(np.float64)
                if t > 1:
                    self.assertLessEqual(probabilities[selected].max(), 1e-12)
                np.testing.assert_allclose(probabilities.sum(axis=1), 1.0, atol=1e-6)
                if t == n:
                    np.testing.assert_allclose(probabilities[~selected], 1.0, atol=1e-6)
                cumulative = np.cumsum(probabilities, axis=1)
                choice = np.argmax(cumulative > rng.random(len(profiles))[:, None] * cumulative[:, -1:], axis=1)
                choice = np.where(selected[np.arange(len(profiles)), choice],
                                  np.argmax(~selected, axis=1), choice)
                selected[np.arange(len(profiles)), choice] = True
                orders.append(choice)
                previous = choice
            for order in np.stack(orders, axis=1):
                self.assertTrue(validate_ranking(order, n))
            sampled, _ = decode(profiles, params, TINY, mode='sample', rng=rng)
            for order in sampled:
                self.assertTrue(validate_ranking(order, n))
            rollouts += len(profiles)
        self.assertGreaterEqual(rollouts, 10 ** 4)

    def test_inconsistent_mask_is_rejected(self):
        params = init_params(TINY, seed=1)
        profile = random_profile(4, 3, 1)
        cache = start_decoding(encode(encoder_features([profile], TINY.max_m), params, TINY), params, TINY)
        with self.assertRaises(InvalidStateError):
            decode_step(2, np.array([0]), cache, np.zeros((1, 4), dtype=bool), params, TINY)
        selected = np.zeros((1, 4), dtype=bool)
        selected[0, 1] = True
        with self.assertRaises(InvalidStateError):
            decode_step(1, None, cache, selected, params, TINY)

    def uniform_policy(self):
        params = init_params(TINY, seed=5)
        params['decoder.pointer.query.weight'].data[:] = 0.0
        return params

    def test_uniform_logits_sample_uniform_permutations(self):
        params = self.uniform_policy()
        profile = random_profile(4, 3, 9)
        orders, _ = decode([profile] * 10000, params, TINY, mode='sample', rng=make_rng(1234))
        codes = orders @ np.array([64, 16, 4, 1])
        counts = np.array([np.count_nonzero(codes == code) for code in np.unique(codes)])
        self.assertEqual(counts.size, 24)
        self.assertGreater(scipy_stats.chisquare(counts).pvalue, 0.01)

    def test_uniform_policy_matches_random_permutations(self):
        params = self.uniform_policy()
        profiles = [random_profile(8, 5, seed) for seed in range(10000)]
        orders, _ = decode(profiles, params, TINY, mode='sample', rng=make_rng(77))
        mean_cost = costs_of(orders, profiles).mean()
        # a uniform random ranking is n(n-1)/4 swaps from any fixed one on average
        self.assertLess(abs(mean_cost - 8 * 7 / 4), 0.02 * 8 * 7 / 4)

    def test_greedy_ties_pick_the_lowest_index(self):
        trajectory = rollout(random_profile(6, 3, 2), self.uniform_policy(), TINY, mode='greedy')
        self.assertEqual(trajectory.ranking.order, (0, 1, 2, 3, 4, 5))

    def test_rollouts(self):
        params = init_params(TINY, seed=11)
        profile = random_profile(7, 4, 3)
        greedy = rollout(profile, params, TINY, mode='greedy', seed=1)
        self.assertEqual(greedy, rollout(profile, params, TINY, mode='greedy', seed=2))
        self.assertEqual(rollout(profile, params, TINY, mode='sample', seed=5),
                         rollout(profile, params, TINY, mode='sample', seed=5))
        for trajectory in rollout_batch([profile] * 20, params, TINY, mode='sample', rng=make_rng(3)):
            self.assertTrue(validate_ranking(trajectory.ranking.order, 7))
            self.assertEqual(len(trajectory.step_log_probs), 7)
            self.assertLessEqual(trajectory.total_log_prob, 0.0)
            self.assertAlmostEqual(trajectory.total_log_prob, log_prob(profile, params, TINY, trajectory.ranking),
                                   delta=1e-5)
        with self.assertRaises(InvalidInputError):
            decode([profile], params, TINY, mode='beam')

    def test_forced_orders_must_be_permutations(self):
        params = init_params(TINY, seed=1)
        with self.assertRaises(InvalidInputError):
            total_log_prob([random_profile(3, 2, 1)], params, TINY, [[0, 0, 1]])

    def test_rollout_macs_are_quadratic(self):
        config = ModelConfig()
        params = init_params(config, seed=1)
        ns = [20, 50, 100, 150]
        fit = fit_quadratic(ns, [rollout_macs(n, params, config) for n in ns])
        self.assertGreaterEqual(fit.r2, 0.99)
        self.assertGreater(fit.quadratic, 0)

    def test_exact_time_grows_faster_than_rollout_time(self):
        config = ModelConfig()
        comparison = compare_growth(init_params(config, seed=1), config, n_small=12, n_large=18)
        self.assertGreater(comparison.ratio, 2.0)


class CheckpointTests(SimpleTestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.addCleanup(self.directory.cleanup)
        self.path = Path(self.directory.name) / 'model.json'

    def test_round_trip_is_bit_exact(self):
        checkpoint = Checkpoint(config=TINY, params=init_params(TINY, seed=4), metadata={'seed': 4})
        save_checkpoint(checkpoint, self.path)
        loaded = load_checkpoint(self.path, expected_config=TINY)
        self.assertEqual(loaded.config, TINY)
        self.assertEqual(loaded.metadata, {'seed': 4})
        self.assertEqual(sorted(loaded.params), sorted(checkpoint.params))
        for name, param in checkpoint.params.items():
            self.assertEqual(loaded.params[name].dtype, param.dtype)
            self.assertEqual(loaded.params[name].data.tobytes(), param.data.tobytes())
        self.assertEqual(list(json.loads(self.path.read_text())['parameters']), sorted(checkpoint.params))

    def test_truncated_file(self):
        save_checkpoint(Checkpoint(config=TINY, params=init_params(TINY)), self.path)
        text = self.path.read_text()
        self.path.write_text(text[:len(text) // 2])
        with self.assertRaises(CorruptCheckpointError):
            load_checkpoint(self.path)

    def test_unknown_version(self):
        document = checkpoint_document(Checkpoint(config=TINY, params=init_params(TINY)))
        document['version'] = 99
        self.path.write_text(json.dumps(document))
        with self.assertRaises(UnknownVersionError):
            load_checkpoint(self.path)

    def test_config_mismatch(self):
        wide = ModelConfig.full_scale()
        save_checkpoint(Checkpoint(config=wide, params=init_params(wide)), self.path)
        with self.assertRaises(CheckpointMismatchError):
            load_checkpoint(self.path, expected_config=ModelConfig())

    def test_shape_mismatch(self):
        document = checkpoint_document(Checkpoint(config=TINY, params=init_params(TINY)))
        document['parameters']['decoder.start']['shape'] = [2, 4]
        self.path.write_text(json.dumps(document))
        with self.assertRaises(CheckpointMismatchError):
            load_checkpoint(self.path)


class PairedTTestTests(SimpleTestCase):
    def test_worked_example(self):
        result = paired_t_test_one_sided([1, 1, -1, 1], [0, 0, 0, 0])
        self.assertAlmostEqual(result.t, 1.0, places=12)
        self.assertEqual(result.df, 3)
        self.assertAlmostEqual(result.p, 0.804, delta=1e-3)

    def test_matches_student_t(self):
        differences = [
            [1, 2, 3], [-1, -2, -3.5], [0.5, -0.25, 0.75, 1.0], [1, 1, -1, 1], [-1, -1, 1, -1], [3, -2],
            [0.1, 0.2, 0.15, 0.12, 0.3], [-5, 4, -3, 2, -1, 0], [10, 12, 9, 11], [-0.01, 0.02, -0.03],
            [2, 2, 2, 2.5], [-2, -2, -2, -1.5], [100, -50, 25], [1, 0, 0, 0, 0, 0, 0], [-1, 0, 0, 0, 0, 0, 0],
            [0.3, -0.7, 1.1, -0.2, 0.5, 0.9, -1.3, 0.4], [7, 8], [-7, -8], [1e-3, 2e-3, -1e-3],
            list(np.linspace(-1, 2, 30)),
        ]
        for difference in differences:
            difference = np.asarray(difference, dtype=np.float64)
            baseline = np.linspace(5, 6, difference.size)
            result = paired_t_test_one_sided(baseline + difference, baseline)
            expected_t = difference.mean() / (difference.std(ddof=1) / np.sqrt(difference.size))
            self.assertAlmostEqual(result.t, expected_t, delta=1e-9 * max(1.0, abs(expected_t)))
            self.assertLessEqual(abs(result.p - scipy_stats.t.cdf(result.t, difference.size - 1)), 1e-9)
            reference = scipy_stats.ttest_rel(baseline + difference, baseline, alternative='less')
            self.assertLessEqual(abs(result.p - reference.pvalue), 1e-9)

    def test_student_t_cdf_symmetry(self):
        for df in (1, 2, 5, 30):
            self.assertAlmostEqual(student_t_cdf(0.0, df), 0.5, places=15)
            self.assertAlmostEqual(student_t_cdf(1.3, df) + student_t_cdf(-1.3, df), 1.0, places=14)

    def test_degenerate_differences(self):
        with self.assertRaises(DegenerateTestError):
            paired_t_test_one_sided([1, 2, 3], [1, 2, 3])
        self.assertEqual(should_replace_baseline([1, 2, 3], [1, 2, 3]), (False, None))
        self.assertEqual(should_replace_baseline([0, 1, 2, 3], [1, 2, 3, 4]), (True, None))
        self.assertEqual(should_replace_baseline([2, 3], [1, 2]), (False, None))

    def test_replacement_decision(self):
        replace_, result = should_replace_baseline([1.0, 1.1, 0.9, 1.2, 1.0], [2.0, 2.3, 1.9, 2.2, 2.1])
        self.assertTrue(replace_)
        self.assertLess(result.t, 0)
        replace_, _ = should_replace_baseline([2.0, 2.3, 1.9, 2.2, 2.1], [1.0, 1.1, 0.9, 1.2, 1.0])
        self.assertFalse(replace_)

    def test_bad_samples(self):
        with self.assertRaises(InvalidInputError):
            paired_t_test_one_sided([1.0], [2.0])
        with self.assertRaises(InvalidInputError):
            paired_t_test_one_sided([1.0, 2.0], [2.0])


class ReinforceTests(SimpleTestCase):
    def test_zero_advantage_gives_zero_gradients(self):
        params = init_params(TINY, seed=2)
        profiles = [Profile(rankings=((0,), (0,)))] * 3
        grads, stats = reinforce_step(profiles, params, copy_params(params), TINY, make_rng(1))
        np.testing.assert_array_equal(stats.advantages, 0.0)
        for grad in grads.values():
            self.assertFalse(np.any(grad))

    def test_forced_zero_advantage_gives_zero_gradients(self):
        params = init_params(TINY, seed=2)
        profiles = [random_profile(5, 3, seed) for seed in range(3)]
        orders, _ = decode(profiles, params, TINY, mode='sample', rng=make_rng(4))
        with Tape() as tape:
            grads = tape.backward(surrogate_loss(total_log_prob(profiles, params, TINY, orders), [0.0] * 3), params)
        for grad in grads.values():
            self.assertFalse(np.any(grad))

    def test_advantages_match_kemeny_distance(self):
        params = init_params(TINY, seed=3)
        baseline = init_params(TINY, seed=4)
        profiles = [random_profile(6, 4, seed) for seed in range(8)]
        _, stats = reinforce_step(profiles, params, baseline, TINY, make_rng(5))
        for index, profile in enumerate(profiles):
            self.assertEqual(stats.sample_costs[index], float(kemeny_distance(stats.orders[index], profile)))
            self.assertEqual(stats.baseline_costs[index],
                             float(kemeny_distance(stats.baseline_orders[index], profile)))

    def test_surrogate_gradient_matches_finite_differences(self):
        params = init_params(TINY, seed=6, dtype=np.float64)
        profiles = [random_profile(5, 4, 1), random_profile(5, 3, 2)]
        orders, _ = decode(profiles, params, TINY, mode='sample', rng=make_rng(8))
        advantages = [1.5, -0.75]

        def loss():
            return float(surrogate_loss(total_log_prob(profiles, params, TINY, orders), advantages).data)

        with Tape() as tape:
            grads = tape.backward(surrogate_loss(total_log_prob(profiles, params, TINY, orders), advantages), params)

        analytic, numeric = [], []
        for name in sorted(params):
            data = params[name].data
            for index in np.ndindex(data.shape):
                original = data[index]
                data[index] = original + 1e-6
                plus = loss()
                data[index] = original - 1e-6
                minus = loss()
                data[index] = original
                analytic.append(grads[name][index])
                numeric.append((plus - minus) / 2e-6)
        self.assertEqual(len(analytic), sum(param.data.size for param in params.values()))
        self.assertLessEqual(relative_error(analytic, numeric), 1e-4)


class TrainingTests(SimpleTestCase):
    def test_zero_epochs_returns_the_initialization(self):
        config = tiny_train_config(epochs=0)
        checkpoint, report = train(config)
        self.assertEqual(report.epochs, [])
        fresh = init_params(TINY, seed=derive_seed(config.seed, 0))
        for name, param in fresh.items():
            self.assertEqual(checkpoint.params[name].data.tobytes(), param.data.tobytes())

    def test_zero_learning_rate_keeps_validation_constant(self):
        _, report = train(tiny_train_config(learning_rate=0.0))
        self.assertEqual(len(report.epochs), 2)
        for epoch in report.epochs:
            self.assertEqual(epoch.validation_cost, report.initial_validation_cost)
            self.assertFalse(epoch.replaced)

    def test_runs_are_reproducible(self):
        first_checkpoint, first = train(tiny_train_config())
        second_checkpoint, second = train(tiny_train_config())
        self.assertEqual(first, second)
        for name, param in first_checkpoint.params.items():
            self.assertEqual(second_checkpoint.params[name].data.tobytes(), param.data.tobytes())

    def test_resume_matches_an_uninterrupted_run(self):
        config = tiny_train_config(epochs=3)
        full_checkpoint, full = train(config)
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'partial.json'
            train(replace(config, epochs=1), checkpoint_path=path)
            resumed_checkpoint, resumed = train(config, resume_from=load_checkpoint(path))
        self.assertEqual(resumed.epochs, full.epochs)
        for name, param in full_checkpoint.params.items():
            self.assertEqual(resumed_checkpoint.params[name].data.tobytes(), param.data.tobytes())

    def test_resume_rejects_another_config(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'partial.json'
            train(tiny_train_config(epochs=1), checkpoint_path=path)
            with self.assertRaises(CheckpointMismatchError):
                train(tiny_train_config(batch_size=5), resume_from=load_checkpoint(path))

    def test_replacement_only_follows_a_better_candidate(self):
        _, report = train(tiny_train_config(epochs=4, learning_rate=1e-2, validation_size=16))
        for epoch in report.epochs:
            if epoch.replaced:
                self.assertLess(epoch.validation_cost, epoch.baseline_validation_cost)

    def test_mixed_distribution(self):
        config = tiny_train_config(epochs=1, distribution=(
            MixEntry(kind='random', n_min=4, n_max=6, m_min=2, m_max=5, weight=2.0),
            MixEntry(kind='jiggling', n_min=4, n_max=6, m_min=2, m_max=5),
            MixEntry(kind='repeat', n_min=4, n_max=6, m_min=2, m_max=5, repeat_count=2),
        ))
        checkpoint, report = train(config)
        self.assertEqual(len(report.epochs), 1)
        self.assertEqual(checkpoint.metadata['epochs_completed'], 1)

    def test_config_validation(self):
        with self.assertRaises(InvalidInputError):
            tiny_train_config(alpha=1.0)
        with self.assertRaises(InvalidInputError):
            tiny_train_config(distribution=(MixEntry(m_min=3, m_max=9),))
        with self.assertRaises(InvalidInputError):
            MixEntry(n_min=5, n_max=4)


class EvaluationTests(SimpleTestCase):
    def setUp(self):
        self.checkpoint = Checkpoint(config=TINY, params=init_params(TINY, seed=12))
        self.profiles = [random_profile(n, 4, n) for n in (5, 6, 5, 7)]

    def test_gap_against_itself_is_zero(self):
        first = evaluate(self.checkpoint, self.profiles)
        second = evaluate(self.checkpoint, self.profiles, oracle_costs=first.costs)
        self.assertEqual(second.mean_gap, 0.0)
        self.assertAlmostEqual(first.mean_cost, sum(float(cost) for cost in first.costs) / 4, delta=1e-9)

    def test_gap_against_exact_is_non_negative(self):
        exact = [solve_exact(profile).cost for profile in self.profiles]
        evaluation = evaluate(self.checkpoint, self.profiles, oracle_costs=exact)
        self.assertGreaterEqual(evaluation.mean_gap, 0.0)
        for ranking, profile in zip(evaluation.rankings, self.profiles):
            self.assertTrue(validate_ranking(ranking.order, profile.n))

    def test_too_many_voters(self):
        with self.assertRaises(CheckpointMismatchError):
            solve_with_checkpoint(self.checkpoint, random_profile(5, 6, 1))


class CommandTests(SimpleTestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.addCleanup(self.directory.cleanup)
        self.root = Path(self.directory.name)

    def config_file(self, **overrides):
        document = {
            'epochs': 1, 'steps_per_epoch': 2, 'batch_size': 3, 'validation_size': 4, 'seed': 3,
            'learning_rate': 0.001,
            'model': {'d_model': 8, 'n_heads': 2, 'd_ff': 16, 'encoder_layers': 1, 'decoder_layers': 1, 'max_m': 5},
            'distribution': [{'kind': 'random', 'n_min': 4, 'n_max': 5, 'm_min': 2, 'm_max': 4}],
        }
        document.update(overrides)
        path = self.root / 'train.json'
        path.write_text(json.dumps(document))
        return path

    def test_form_names_missing_fields(self):
        form = TrainConfigForm(data={'epochs': 1, 'steps_per_epoch': 1, 'batch_size': 1})
        self.assertFalse(form.is_valid())
        self.assertIn('distribution', form.errors)
        form = TrainConfigForm(data={'epochs': 1, 'steps_per_epoch': 1, 'batch_size': 1,
                                     'distribution': [{'kind': 'random', 'm_max': 20}]})
        self.assertFalse(form.is_valid())
        self.assertIn('distribution', form.errors)

    def test_zero_epochs_writes_a_checkpoint(self):
        out = self.root / 'init.json'
        call_command('train', '--config', str(self.config_file(epochs=0)), '--out', str(out), stdout=StringIO())
        checkpoint = load_checkpoint(out, expected_config=TINY)
        self.assertEqual(checkpoint.metadata['epochs_completed'], 0)

    def test_progress_records(self):
        out, progress = self.root / 'model.json', self.root / 'progress.jsonl'
        call_command('train', '--config', str(self.config_file()), '--out', str(out), '--progress', str(progress),
                     stdout=StringIO())
        (line,) = progress.read_text().splitlines()
        record = json.loads(line)
        self.assertEqual(record['epoch'], 1)
        self.assertIn('replaced', record)

    def test_missing_distribution_is_a_usage_error(self):
        path = self.config_file()
        document = json.loads(path.read_text())
        del document['distribution']
        path.write_text(json.dumps(document))
        with self.assertRaises(CommandError) as raised:
            call_command('train', '--config', str(path), '--out', str(self.root / 'x.json'))
        self.assertEqual(raised.exception.returncode, exit_codes.USAGE)
        self.assertIn('distribution', str(raised.exception))

    def test_unknown_field_is_a_usage_error(self):
        with self.assertRaises(CommandError) as raised:
            call_command('train', '--config', str(self.config_file(batchsize=3)), '--out', str(self.root / 'x.json'))
        self.assertEqual(raised.exception.returncode, exit_codes.USAGE)

    def test_transformer_solve_with_mismatched_voters(self):
        checkpoint_path = self.root / 'model.json'
        save_checkpoint(Checkpoint(config=TINY, params=init_params(TINY)), checkpoint_path)
        instance = write_instance(random_profile(5, 6, 1), self.root / 'wide.json')
        with self.assertRaises(CommandError) as raised:
            call_command('solve', '--method', 'transformer', '--checkpoint', str(checkpoint_path),
                         '--in', str(instance))
        self.assertEqual(raised.exception.returncode, exit_codes.CONFIG_MISMATCH)

        narrow = write_instance(random_profile(5, 4, 1), self.root / 'narrow.json')
        out = self.root / 'solved.json'
        call_command('solve', '--method', 'transformer', '--checkpoint', str(checkpoint_path), '--in', str(narrow),
                     '--out', str(out), stdout=StringIO())
        (record,) = json.loads(out.read_text())
        self.assertTrue(validate_ranking(record['ranking'], 5))


@tag('slow')
class DeskTrainingTests(SimpleTestCase):
    """Full desk-scale run: n=10, m=5 random profiles, 20 epochs of 100 steps of 64."""

    def test_training_improves_greedy_cost(self):
        form = TrainConfigForm(data=json.loads((settings.BASE_DIR / 'configs' / 'desk.json').read_text()))
        self.assertTrue(form.is_valid(), form.errors)
        config = form.to_config()
        checkpoint, report = train(config)
        final = report.epochs[-1].validation_cost
        self.assertLessEqual(final, 0.8 * report.initial_validation_cost)

        validation = [generate(GeneratorSpec(kind='random', n=10, m=5, seed=derive_seed(4321, index)))
                      for index in range(64)]
        exact = [solve_exact(profile).cost for profile in validation]
        transformer_gap = evaluate(checkpoint, validation, oracle_costs=exact).mean_gap
        mc4_gap = np.mean([float(markov_chain(profile).cost - optimum)
                           for profile, optimum in zip(validation, exact)])
        print(f"\nmean gap to exact: transformer {transformer_gap:.4f}, mc4 {mc4_gap:.4f}")
