import itertools
import tempfile
from fractions import Fraction
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from scipy import stats

from core import exit_codes
from core.exceptions import IngestionError, InvalidConfigError, InvalidInputError, UnsupportedFormatError
from core.seeding import make_rng
from rankings.forms import GenerateForm, IngestForm
from rankings.generators import GeneratorSpec, generate, jiggle, jiggle_target, jiggle_weights, reference_of
from rankings.ingest import MetricTable, parse_soc, rankings_from_metric_table, read_metric_table
from rankings.instances import dumps, list_instances, read_instance, write_instance
from rankings.kernels import (
    PrecedenceMatrix, Profile, Ranking, condorcet_winner, count_inversions, kemeny_cost_via_precedence,
    kemeny_distance, kendall_tau, kendall_tau_naive, order_cost_numerator, precedence_matrix,
    total_disagreements, validate_ranking,
)


def permutation_pairs(max_n=40):
    return st.integers(1, max_n).flatmap(
        lambda n: st.tuples(st.permutations(range(n)), st.permutations(range(n))))


def permutation_triples(max_n=25):
    return st.integers(1, max_n).flatmap(
        lambda n: st.tuples(st.permutations(range(n)), st.permutations(range(n)), st.permutations(range(n))))


class ValidateRankingTests(SimpleTestCase):
    def test_examples(self):
        self.assertTrue(validate_ranking([2, 0, 1], 3))
        self.assertFalse(validate_ranking([0, 0, 1], 3))
        self.assertFalse(validate_ranking([0, 1, 3], 3))
        self.assertTrue(validate_ranking([], 0))
        self.assertFalse(validate_ranking([0, 1], 3))

    def test_ranking_rejects_non_permutations(self):
        with self.assertRaises(InvalidInputError):
            Ranking((0, 2))
        self.assertEqual(Ranking((2, 0, 1)).position, (1, 2, 0))

    def test_profile_requires_equal_lengths(self):
        with self.assertRaises(InvalidInputError):
            Profile(rankings=((0, 1, 2), (0, 1)))
        with self.assertRaises(InvalidInputError):
            Profile(rankings=())


class KendallTauTests(SimpleTestCase):
    def test_examples(self):
        self.assertEqual(kendall_tau([0, 1, 2, 3], [0, 1, 2, 3]), 0)
        self.assertEqual(kendall_tau([0, 1, 2, 3], [3, 2, 1, 0]), 6)
        self.assertEqual(kendall_tau([0, 1, 2], [1, 0, 2]), 1)
        self.assertEqual(kendall_tau([0], [0]), 0)

    def test_length_mismatch(self):
        with self.assertRaises(InvalidInputError):
            kendall_tau([0, 1], [0, 1, 2])

    def test_count_inversions(self):
        self.assertEqual(count_inversions([]), 0)
        self.assertEqual(count_inversions([3, 1, 2, 0]), 5)
        self.assertEqual(count_inversions(list(range(50, 0, -1))), 50 * 49 // 2)

    def test_matches_pair_enumeration_up_to_200_items(self):
        rng = make_rng(2024)
        for _ in range(1000):
            n = int(rng.integers(1, 201))
            rho, sigma = rng.permutation(n), rng.permutation(n)
            self.assertEqual(kendall_tau(rho, sigma), kendall_tau_naive(rho, sigma))

    def test_agrees_with_scipy_tau(self):
        rng = make_rng(11)
        for _ in range(50):
            n = int(rng.integers(3, 60))
            rho, sigma = rng.permutation(n), rng.permutation(n)
            position_rho, position_sigma = np.argsort(rho), np.argsort(sigma)
            tau = stats.kendalltau(position_rho, position_sigma).statistic
            pairs = n * (n - 1) // 2
            self.assertEqual(kendall_tau(rho, sigma), round((1 - tau) * pairs / 2))

    @given(permutation_pairs())
    def test_symmetry_and_bounds(self, pair):
        rho, sigma = pair
        n = len(rho)
        distance = kendall_tau(rho, sigma)
        self.assertEqual(distance, kendall_tau(sigma, rho))
        self.assertTrue(0 <= distance <= n * (n - 1) // 2)
        self.assertEqual(kendall_tau(rho, rho), 0)
        self.assertEqual(kendall_tau(rho, rho[::-1]), n * (n - 1) // 2)

    @settings(max_examples=300)
    @given(permutation_triples())
    def test_triangle_inequality(self, triple):
        a, b, c = triple
        self.assertLessEqual(kendall_tau(a, c), kendall_tau(a, b) + kendall_tau(b, c))

    def test_triangle_inequality_sweep(self):
        rng = make_rng(5)
        for _ in range(10000):
            n = int(rng.integers(1, 12))
            a, b, c = rng.permutation(n), rng.permutation(n), rng.permutation(n)
            self.assertLessEqual(kendall_tau(a, c), kendall_tau(a, b) + kendall_tau(b, c))


class KemenyCostTests(SimpleTestCase):
    def test_kemeny_distance_examples(self):
        profile = Profile(rankings=((0, 1, 2), (0, 1, 2), (2, 1, 0)))
        self.assertEqual(kemeny_distance([0, 1, 2], profile), Fraction(3, 3))
        self.assertEqual(kemeny_distance([2, 1, 0], profile), Fraction(6, 3))
        self.assertEqual(kemeny_distance([1, 0], Profile(rankings=((0, 1), (1, 0)))), Fraction(1, 2))

    def test_unanimous_profile_has_zero_cost_at_consensus(self):
        profile = Profile(rankings=((3, 1, 0, 2),) * 4)
        self.assertEqual(kemeny_distance([3, 1, 0, 2], profile), 0)

    def test_precedence_matrix(self):
        profile = Profile(rankings=((0, 1, 2), (0, 1, 2), (2, 1, 0)))
        w = precedence_matrix(profile)
        np.testing.assert_array_equal(w.w, [[0, 2, 2], [1, 0, 2], [1, 1, 0]])
        np.testing.assert_array_equal(w.w + w.w.T + np.eye(3, dtype=np.int64) * 3, np.full((3, 3), 3))
        self.assertFalse(w.w.flags.writeable)

    def test_precedence_cost_equals_pairwise_cost(self):
        rng = make_rng(17)
        for _ in range(200):
            n, m = int(rng.integers(1, 15)), int(rng.integers(1, 9))
            profile = generate(GeneratorSpec(kind='random', n=max(n, 2), m=m, seed=int(rng.integers(1 << 32))))
            rho = rng.permutation(profile.n)
            w = precedence_matrix(profile)
            self.assertEqual(order_cost_numerator(rho, w), total_disagreements(rho, profile))
            self.assertEqual(kemeny_cost_via_precedence(rho, w), kemeny_distance(rho, profile))

    def test_precedence_dimension_mismatch(self):
        w = precedence_matrix(Profile(rankings=((0, 1, 2),)))
        with self.assertRaises(InvalidInputError):
            order_cost_numerator([0, 1], w)

    def test_condorcet_winner(self):
        profile = Profile(rankings=((1, 0, 2), (1, 2, 0), (0, 1, 2)))
        self.assertEqual(condorcet_winner(precedence_matrix(profile)), 1)
        cycle = Profile(rankings=((0, 1, 2), (1, 2, 0), (2, 0, 1)))
        self.assertIsNone(condorcet_winner(precedence_matrix(cycle)))
        self.assertIsNone(condorcet_winner(PrecedenceMatrix(w=[[0, 1], [1, 0]], m=2)))


class GeneratorTests(SimpleTestCase):
    def test_same_spec_same_profile(self):
        for kind in ('random', 'repeat', 'jiggling'):
            spec = GeneratorSpec(kind=kind, n=12, m=6, seed=1234)
            self.assertEqual(generate(spec), generate(spec))
        self.assertNotEqual(generate(GeneratorSpec(kind='random', n=12, m=6, seed=1)),
                            generate(GeneratorSpec(kind='random', n=12, m=6, seed=2)))

    def test_shapes(self):
        profile = generate(GeneratorSpec(kind='jiggling', n=30, m=4, seed=9))
        self.assertEqual((profile.n, profile.m), (30, 4))
        for ranking in profile.rankings:
            self.assertTrue(validate_ranking(ranking.order, 30))

    def test_repeat_count(self):
        profile = generate(GeneratorSpec(kind='repeat', n=10, m=8, seed=3, repeat_count=8))
        self.assertEqual(len(set(profile.rankings)), 1)
        profile = generate(GeneratorSpec(kind='repeat', n=10, m=8, seed=3, repeat_count=5))
        reference = tuple(int(item) for item in reference_of(GeneratorSpec(kind='repeat', n=10, m=8, seed=3,
                                                                           repeat_count=5)))
        self.assertEqual([ranking.order for ranking in profile.rankings[:5]], [reference] * 5)

    def test_invalid_specs(self):
        with self.assertRaises(InvalidConfigError) as raised:
            GeneratorSpec(kind='random', n=1, m=0, seed=1)
        self.assertEqual(set(raised.exception.errors), {'n', 'm'})
        with self.assertRaises(InvalidConfigError):
            GeneratorSpec(kind='repeat', n=5, m=3, seed=1, repeat_count=4)
        with self.assertRaises(InvalidConfigError):
            GeneratorSpec(kind='zipf', n=5, m=3, seed=1)

    def test_jiggle_weights_do_not_depend_on_scale(self):
        for n in (2, 7, 50):
            for position in range(n):
                difference = np.abs(jiggle_weights(position, n, 1.0) - jiggle_weights(position, n, 10.0))
                self.assertLessEqual(difference.max(), 1e-12)

    def test_jiggle_weights_shape(self):
        weights = jiggle_weights(0, 4, 1.0)
        expected = np.exp(-np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(weights, np.r_[0.0, expected / expected.sum()], atol=1e-12)
        self.assertEqual(jiggle_weights(1, 2)[0], 1.0)

    def test_jiggle_is_a_permutation(self):
        rng = make_rng(1)
        reference = rng.permutation(40)
        for passes in (1, 3):
            self.assertTrue(validate_ranking(jiggle(reference, rng, 1.0, passes), 40))

    def test_jiggling_stays_near_the_reference(self):
        n = 100
        distances = []
        for seed in range(500):
            profile = generate(GeneratorSpec(kind='jiggling', n=n, m=1, seed=seed))
            distances.append(kendall_tau(profile.rankings[0], profile.provenance['reference']))
        self.assertLess(np.mean(distances), 0.25 * n * (n - 1) / 4)

    def test_random_profiles_are_uncorrelated(self):
        n = 20
        distances = []
        for seed in range(200):
            profile = generate(GeneratorSpec(kind='random', n=n, m=10, seed=seed))
            distances.extend(kendall_tau(a, b) for a, b in itertools.combinations(profile.rankings, 2))
        expected = n * (n - 1) / 4
        self.assertLess(abs(np.mean(distances) - expected), 0.05 * expected)

    def test_difficulty_ordering(self):
        def spread(kind):
            means = []
            for seed in range(200):
                profile = generate(GeneratorSpec(kind=kind, n=100, m=8, seed=seed))
                w = precedence_matrix(profile).w
                # each item pair contributes one disagreement per split voter pair
                means.append(np.triu(w * w.T).sum() / (8 * 7 / 2))
            return np.mean(means)

        uniform, repeated, jiggled = spread('random'), spread('repeat'), spread('jiggling')
        self.assertGreater(uniform, repeated)
        self.assertGreater(repeated, jiggled)

    def test_inter_voter_spread_matches_pairwise_distances(self):
        profile = generate(GeneratorSpec(kind='jiggling', n=30, m=5, seed=3))
        w = precedence_matrix(profile).w
        pairwise = [kendall_tau(a, b) for a, b in itertools.combinations(profile.rankings, 2)]
        self.assertEqual(np.triu(w * w.T).sum(), sum(pairwise))

    def test_two_item_random_rankings_are_uniform(self):
        identity = sum(generate(GeneratorSpec(kind='random', n=2, m=1, seed=seed)).rankings[0].order == (0, 1)
                       for seed in range(10000))
        self.assertLess(abs(identity / 10000 - 0.5), 0.05)

    def test_jiggle_never_targets_the_source(self):
        below_one = np.nextafter(1.0, 0.0)
        for n in (2, 3, 10, 60):
            for source in range(n):
                for draw in (0.0, 0.5, below_one):
                    target = jiggle_target(source, n, draw)
                    self.assertNotEqual(target, source)
                    self.assertTrue(0 <= target < n)


class IngestTests(SimpleTestCase):
    def test_descending_column(self):
        table = MetricTable(labels=('a', 'b', 'c'), columns=('score',), values=np.array([[3.0], [1.0], [2.0]]))
        profile = rankings_from_metric_table(table, 'desc')
        self.assertEqual(profile.rankings[0].order, (0, 2, 1))
        self.assertEqual(profile.label(2), 'c')

    def test_ties_keep_row_order(self):
        table = MetricTable(labels=('a', 'b', 'c'), columns=('x',), values=np.array([[1.0], [1.0], [0.0]]))
        self.assertEqual(rankings_from_metric_table(table, ['asc']).rankings[0].order, (2, 0, 1))

    def test_direction_count_mismatch(self):
        table = MetricTable(labels=('a', 'b'), columns=('x', 'y'), values=np.zeros((2, 2)))
        with self.assertRaises(InvalidInputError):
            rankings_from_metric_table(table, 'asc')

    def test_read_metric_table(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'countries.csv'
            path.write_text('country,gdp,crime\nAlpha,3.5,10\nBeta,1.0,30\nGamma,2.0,20\n')
            table = read_metric_table(path)
            self.assertEqual(table.columns, ('gdp', 'crime'))
            profile = rankings_from_metric_table(table, 'desc,asc')
            self.assertEqual([ranking.order for ranking in profile.rankings], [(0, 2, 1), (0, 2, 1)])

            path.write_text('country,gdp\nAlpha,3.5\nBeta,\n')
            with self.assertRaises(IngestionError) as raised:
                read_metric_table(path)
            self.assertEqual((raised.exception.row, raised.exception.column), (3, 'gdp'))

    def test_soc_counts_expand(self):
        profile = parse_soc('# NUMBER ALTERNATIVES: 3\n# ALTERNATIVE NAME 1: x\n2: 1,3,2\n1: 2,1,3\n')
        self.assertEqual([ranking.order for ranking in profile.rankings], [(0, 2, 1), (0, 2, 1), (1, 0, 2)])
        self.assertEqual(profile.label(0), 'x')
        self.assertEqual(profile.label(1), '2')

    def test_soc_rejects_incomplete_and_tied_orders(self):
        with self.assertRaises(UnsupportedFormatError):
            parse_soc('# NUMBER ALTERNATIVES: 3\n1: 1,2\n')
        with self.assertRaises(UnsupportedFormatError):
            parse_soc('1: 1,{2,3}\n')
        with self.assertRaises(IngestionError) as raised:
            parse_soc('1: 1,2\nnot a line\n')
        self.assertEqual(raised.exception.row, 2)


class InstanceFileTests(SimpleTestCase):
    def test_round_trip(self):
        profile = generate(GeneratorSpec(kind='jiggling', n=15, m=4, seed=8))
        with tempfile.TemporaryDirectory() as directory:
            path = write_instance(profile, Path(directory) / 'one.json')
            loaded = read_instance(path)
        self.assertEqual(loaded, profile)
        self.assertEqual(loaded.provenance['generator']['kind'], 'jiggling')
        self.assertEqual(dumps(loaded), dumps(profile))

    def test_rejects_bad_documents(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'bad.json'
            path.write_text('{"format": "kemeny-instance", "version": 1, "n": 3, "m": 1, "rankings": [[0, 0, 1]]}')
            with self.assertRaises(IngestionError):
                read_instance(path)
            path.write_text('{"format": "kemeny-instance", "version": 9}')
            with self.assertRaises(IngestionError):
                read_instance(path)
            path.write_text('{"format": ')
            with self.assertRaises(IngestionError):
                read_instance(path)
            for document in ('[]', '3', '"kemeny-instance"'):
                path.write_text(document)
                with self.assertRaises(IngestionError):
                    read_instance(path)


class FormTests(SimpleTestCase):
    def test_generate_form(self):
        form = GenerateForm(data={'kind': 'repeat', 'n': 10, 'm': 4, 'seed': 1, 'count': 2, 'repeat_count': 5})
        self.assertFalse(form.is_valid())
        self.assertIn('repeat_count', form.errors)
        form = GenerateForm(data={'kind': 'random', 'n': 10, 'm': 4, 'seed': 1, 'count': 2})
        self.assertTrue(form.is_valid())
        self.assertEqual(form.to_spec(seed=9), GeneratorSpec(kind='random', n=10, m=4, seed=9))

    def test_ingest_form_requires_directions_for_csv(self):
        self.assertFalse(IngestForm(data={'format': 'features-csv'}).is_valid())
        self.assertTrue(IngestForm(data={'format': 'preflib-soc'}).is_valid())


class CommandTests(SimpleTestCase):
    def test_gen_is_byte_identical(self):
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            for out in (first, second):
                call_command('gen', '--type', 'random', '--n', '10', '--m', '8', '--count', '5', '--seed', '1234',
                             '--out', out, stdout=StringIO())
            first_files, second_files = list_instances(first), list_instances(second)
            self.assertEqual([path.name for path in first_files], [path.name for path in second_files])
            self.assertEqual(len(first_files), 5)
            self.assertEqual(first_files[0].name, 'random_n10_m8_s1234_00000.json')
            for a, b in zip(first_files, second_files):
                self.assertEqual(a.read_bytes(), b.read_bytes())

    def test_gen_repeat_all_equal(self):
        with tempfile.TemporaryDirectory() as out:
            call_command('gen', '--type', 'repeat', '--n', '6', '--m', '8', '--repeat-count', '8', '--count', '3',
                         '--out', out, stdout=StringIO())
            for path in list_instances(out):
                self.assertEqual(len(set(read_instance(path).rankings)), 1)

    def test_gen_rejects_bad_flags(self):
        with self.assertRaises(CommandError) as raised:
            call_command('gen', '--type', 'random', '--n', '1', '--m', '3', '--out', '/tmp/unused')
        self.assertEqual(raised.exception.returncode, exit_codes.USAGE)
        self.assertIn('n:', str(raised.exception))

    def test_ingest_soc(self):
        with tempfile.TemporaryDirectory() as directory:
            source = Path(directory) / 'votes.soc'
            source.write_text('# NUMBER ALTERNATIVES: 3\n2: 1,3,2\n')
            out = Path(directory) / 'votes.json'
            call_command('ingest', '--format', 'preflib-soc', '--in', str(source), '--out', str(out),
                         stdout=StringIO())
            profile = read_instance(out)
            self.assertEqual([ranking.order for ranking in profile.rankings], [(0, 2, 1), (0, 2, 1)])
            self.assertEqual(profile.provenance['source'], 'preflib-soc')

            source.write_text('# NUMBER ALTERNATIVES: 3\n1: 1,2\n')
            with self.assertRaises(CommandError) as raised:
                call_command('ingest', '--format', 'preflib-soc', '--in', str(source), '--out', str(out))
            self.assertEqual(raised.exception.returncode, exit_codes.IO_FAILURE)

    def test_ingest_features_csv(self):
        with tempfile.TemporaryDirectory() as directory:
            source = Path(directory) / 'table.csv'
            source.write_text('item,score\na,3\nb,1\nc,2\n')
            out = Path(directory) / 'table.json'
            call_command('ingest', '--format', 'features-csv', '--in', str(source), '--directions', 'desc',
                         '--out', str(out), stdout=StringIO())
            profile = read_instance(out)
            self.assertEqual(profile.rankings[0].order, (0, 2, 1))
            self.assertEqual(profile.item_labels, ('a', 'b', 'c'))
            self.assertEqual(profile.provenance['path'], str(source))
