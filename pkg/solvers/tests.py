import json
import tempfile
from fractions import Fraction
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from core import exit_codes
from core.exceptions import CapacityError, ConvergenceError, InvalidConfigError, InvalidInputError
from core.seeding import derive_seed, make_rng
from rankings.generators import GeneratorSpec, generate
from rankings.instances import instance_name, write_instance
from rankings.kernels import Profile, condorcet_winner, kemeny_distance, precedence_matrix, validate_ranking
from solvers.bench import fit_quadratic, read_csv_records, run_bench, run_instance, sibling, write_report
from solvers.exact import lower_bound, solve_brute_force, solve_exact, solve_subset_dp
from solvers.heuristics import (
    DecorConfig, agreement_scores, decor, greedy_max_agreement, greedy_min_regret, kiwisort, markov_chain,
    mc4_transition_matrix, regret_scores, stationary_distribution,
)
from solvers.registry import SolveOptions, solve


def random_profile(n, m, seed, kind='random'):
    return generate(GeneratorSpec(kind=kind, n=n, m=m, seed=seed))


class ExactSolverTests(SimpleTestCase):
    def test_dp_matches_brute_force(self):
        rng = make_rng(1234)
        for index in range(500):
            n, m = int(rng.integers(4, 9)), int(rng.integers(1, 9))
            profile = random_profile(n, m, derive_seed(1234, index))
            brute, dp = solve_brute_force(profile), solve_subset_dp(profile)
            self.assertEqual(dp.cost_numerator, brute.cost_numerator)
            self.assertEqual(dp.ranking, brute.ranking)
            self.assertEqual(dp.cost, kemeny_distance(dp.ranking, profile))

    def test_unanimous_profile(self):
        profile = Profile(rankings=((2, 0, 3, 1),) * 5)
        result = solve_exact(profile)
        self.assertEqual(result.ranking.order, (2, 0, 3, 1))
        self.assertEqual(result.cost, 0)

    def test_lexicographic_tie_break(self):
        profile = Profile(rankings=((0, 1), (1, 0)))
        self.assertEqual(solve_subset_dp(profile).ranking.order, (0, 1))
        self.assertEqual(solve_brute_force(profile).ranking.order, (0, 1))
        self.assertEqual(solve_exact(profile).cost, Fraction(1, 2))

    def test_condorcet_cycle(self):
        profile = Profile(rankings=((0, 1, 2), (1, 2, 0), (2, 0, 1)))
        result = solve_exact(profile)
        self.assertEqual(result.cost_numerator, 4)
        self.assertEqual(result.ranking.order, (0, 1, 2))

    def test_single_item(self):
        self.assertEqual(solve_subset_dp(Profile(rankings=((0,),))).ranking.order, (0,))

    def test_capacity(self):
        with self.assertRaises(CapacityError):
            solve_subset_dp(random_profile(21, 2, 1))
        with self.assertRaises(CapacityError):
            solve_brute_force(random_profile(11, 2, 1))

    def test_lower_bound_is_a_floor(self):
        for seed in range(50):
            profile = random_profile(9, 5, seed)
            self.assertLessEqual(lower_bound(precedence_matrix(profile)), solve_exact(profile).cost_numerator)

    def test_condorcet_winner_comes_first(self):
        winners = 0
        for index in range(300):
            kind = 'jiggling' if index % 2 else 'random'
            profile = random_profile(4 + index % 5, 3 + 2 * (index % 3), derive_seed(77, index), kind=kind)
            winner = condorcet_winner(precedence_matrix(profile))
            if winner is None:
                continue
            winners += 1
            self.assertEqual(solve_exact(profile).ranking.order[0], winner)
        self.assertGreater(winners, 50)

    def test_dp_handles_twenty_items(self):
        profile = random_profile(20, 3, 7, kind='jiggling')
        result = solve_subset_dp(profile)
        self.assertTrue(validate_ranking(result.ranking.order, 20))
        self.assertLessEqual(result.cost, kemeny_distance(profile.provenance['reference'], profile))


class HeuristicTests(SimpleTestCase):
    def test_quality_against_exact(self):
        exact_costs, kiwi_costs, decor_costs, ratios = [], [], [], []
        for seed in range(200):
            profile = random_profile(10, 8, derive_seed(99, seed))
            optimum = solve_exact(profile).cost
            results = [kiwisort(profile, seed=seed), markov_chain(profile), greedy_max_agreement(profile),
                       greedy_min_regret(profile), decor(profile, DecorConfig(seed=seed))]
            for result in results:
                self.assertTrue(validate_ranking(result.ranking.order, 10))
                self.assertGreaterEqual(result.cost, optimum, result.method)
                self.assertEqual(result.cost, kemeny_distance(result.ranking, profile))
            exact_costs.append(optimum)
            kiwi_costs.append(results[0].cost)
            decor_costs.append(results[-1].cost)
            if optimum:
                ratios.append(float(results[0].cost / optimum))
        self.assertLessEqual(np.mean(ratios), 2.0)
        self.assertLessEqual(np.mean([float(cost) for cost in decor_costs]),
                             np.mean([float(cost) for cost in kiwi_costs]))

    def test_unanimous_consensus_is_recovered(self):
        profile = Profile(rankings=((3, 0, 2, 1),) * 3)
        for result in (kiwisort(profile), markov_chain(profile), greedy_max_agreement(profile),
                       greedy_min_regret(profile), decor(profile)):
            self.assertEqual(result.ranking.order, (3, 0, 2, 1), result.method)
            self.assertEqual(result.cost, 0)

    def test_kiwisort_is_seeded(self):
        profile = random_profile(30, 7, 5)
        self.assertEqual(kiwisort(profile, seed=3).ranking, kiwisort(profile, seed=3).ranking)

    def test_mc4_stationary_distribution(self):
        profile = Profile(rankings=((1, 0, 2, 3), (1, 2, 0, 3), (0, 1, 3, 2)))
        w = precedence_matrix(profile).w
        transition = mc4_transition_matrix(w, profile.m)
        np.testing.assert_allclose(transition.sum(axis=1), 1.0, atol=1e-12)
        pi = stationary_distribution(transition)
        self.assertAlmostEqual(pi.sum(), 1.0, places=12)
        np.testing.assert_allclose(pi @ transition, pi, atol=1e-9)
        # item 1 is the Condorcet winner
        self.assertEqual(markov_chain(profile).ranking.order[0], 1)

    def test_mc4_convergence_error(self):
        profile = Profile(rankings=((0, 1, 2, 3),) * 3)
        with self.assertRaises(ConvergenceError) as raised:
            markov_chain(profile, tol=1e-15, max_iters=1)
        self.assertEqual(raised.exception.last_iterate.shape, (4,))

    def test_mc4_teleport_range(self):
        with self.assertRaises(InvalidConfigError):
            markov_chain(Profile(rankings=((0, 1),)), teleport=0.0)

    def test_greedy_tie_break(self):
        profile = Profile(rankings=((0, 1), (1, 0)))
        self.assertEqual(greedy_max_agreement(profile).ranking.order, (0, 1))
        self.assertEqual(greedy_min_regret(profile).ranking.order, (0, 1))

    def test_agreement_plus_regret_is_constant(self):
        rng = make_rng(31)
        for seed in range(50):
            profile = random_profile(9, 1 + seed % 7, seed)
            w = precedence_matrix(profile).w
            remaining = list(range(profile.n))
            while remaining:
                totals = agreement_scores(w, remaining) + regret_scores(w, remaining)
                np.testing.assert_array_equal(totals, profile.m * (len(remaining) - 1))
                remaining.pop(int(rng.integers(len(remaining))))

    def test_decor_config(self):
        with self.assertRaises(InvalidConfigError):
            DecorConfig(population_size=3)
        result = decor(random_profile(8, 20, 4), DecorConfig(population_size=5, max_generations=3))
        self.assertLessEqual(result.details['generations'], 3)
        history = result.details['best_history']
        self.assertEqual(history, sorted(history, reverse=True))

    def test_registry(self):
        profile = random_profile(6, 3, 2)
        self.assertEqual(solve('exact', profile).cost, solve_exact(profile).cost)
        self.assertEqual(solve('mc4', profile, SolveOptions(teleport=0.1)).method, 'mc4')
        with self.assertRaises(InvalidInputError):
            solve('borda', profile)
        with self.assertRaises(InvalidInputError):
            solve('transformer', profile)


class BenchTests(SimpleTestCase):
    def instances(self, n=8, count=6, seed=1234):
        return [(instance_name('random', n, 6, seed, index), random_profile(n, 6, derive_seed(seed, index)))
                for index in range(count)]

    def test_exact_against_itself(self):
        report = run_bench(self.instances(), ['exact'], oracle='exact')
        self.assertEqual(report.failures, 0)
        for record in report.records:
            self.assertEqual(record.gap, 0.0)
            self.assertTrue(record.gap_exact)
        self.assertEqual(report.summary[0]['mean_gap'], 0.0)

    def test_run_instance_records_the_oracle(self):
        name, profile = self.instances(count=1)[0]
        optimum = solve_exact(profile).cost
        (exact, kiwi) = run_instance(name, profile, ['exact', 'kiwisort'], 'exact', SolveOptions(seed=3))
        self.assertEqual((exact.status, kiwi.status), ('ok', 'ok'))
        self.assertEqual(exact.oracle, 'exact')
        self.assertEqual(exact.oracle_cost, float(optimum))
        self.assertEqual(kiwi.oracle_cost, float(optimum))
        self.assertEqual(kiwi.gap, float(kiwisort(profile, seed=3).cost - optimum))
        (record,) = run_instance(name, profile, ['mc4'], 'none', SolveOptions())
        self.assertIsNone(record.oracle_cost)
        self.assertIsNone(record.gap)

    def test_oracle_dominance(self):
        methods = ['exact', 'kiwisort', 'mc4', 'max-agreement', 'min-regret', 'decor']
        report = run_bench(self.instances(n=10), methods, oracle='exact')
        by_instance = {}
        for record in report.records:
            self.assertGreaterEqual(record.gap, 0.0)
            self.assertGreaterEqual(record.normalized_gap, 0.0)
            by_instance.setdefault(record.instance, {})[record.method] = record.gap
        for gaps in by_instance.values():
            self.assertEqual(gaps['exact'], min(gaps.values()))
        summary = {row['method']: row for row in report.summary}
        self.assertEqual(summary['exact']['mean_normalized_gap'], 0.0)

    def test_totals_equal_sums(self):
        report = run_bench(self.instances(), ['kiwisort', 'mc4'], oracle='exact')
        for method in ('kiwisort', 'mc4'):
            seconds = [record.seconds for record in report.records if record.method == method]
            self.assertTrue(all(value >= 0 for value in seconds))
            total = [row for row in report.series if row['method'] == method and row['n'] == 'all'][0]
            self.assertAlmostEqual(total['total_seconds'], sum(seconds), delta=1e-6)

    def test_lower_bound_oracle_beyond_dp_range(self):
        instances = [('big.json', random_profile(22, 4, 3))]
        report = run_bench(instances, ['kiwisort', 'exact'], oracle='exact')
        kiwi, exact = report.records
        self.assertEqual(kiwi.oracle, 'lower_bound')
        self.assertFalse(kiwi.gap_exact)
        self.assertGreaterEqual(kiwi.gap, 0.0)
        self.assertEqual(exact.status, 'failed')
        self.assertIn('n <= 20', exact.error)
        self.assertEqual(report.failures, 1)

    def test_no_oracle(self):
        report = run_bench(self.instances(count=2), ['min-regret'], oracle='none')
        self.assertIsNone(report.records[0].gap)
        self.assertIsNone(report.summary[0]['mean_gap'])

    def test_unknown_method(self):
        with self.assertRaises(InvalidInputError):
            run_bench(self.instances(count=1), ['borda'])

    def test_csv_and_json_carry_the_same_numbers(self):
        report = run_bench(self.instances(), ['exact', 'kiwisort', 'decor'], oracle='exact')
        with tempfile.TemporaryDirectory() as directory:
            csv_path, json_path = Path(directory) / 'report.csv', Path(directory) / 'report.json'
            write_report(report, csv_path, 'csv')
            write_report(report, json_path, 'json')
            from_csv = read_csv_records(csv_path)
            from_json = json.loads(json_path.read_text())['records']
            self.assertTrue(sibling(csv_path, 'timing').exists())
            self.assertTrue(sibling(csv_path, 'summary').exists())
        self.assertEqual(from_csv, from_json)

    def test_reports_are_byte_identical(self):
        with tempfile.TemporaryDirectory() as directory:
            paths = [Path(directory) / 'first.csv', Path(directory) / 'second.csv']
            for path in paths:
                report = run_bench(self.instances(), ['exact', 'kiwisort', 'mc4', 'decor'], oracle='exact',
                                   options=SolveOptions(seed=7), workers=2)
                write_report(report, path)
            self.assertEqual(paths[0].read_bytes(), paths[1].read_bytes())
            self.assertEqual(sibling(paths[0], 'summary').read_bytes(), sibling(paths[1], 'summary').read_bytes())

    def test_fit_quadratic(self):
        ns = [20, 50, 100, 150]
        fit = fit_quadratic(ns, [3 * n * n + 7 * n for n in ns])
        self.assertAlmostEqual(fit.quadratic, 3.0, places=6)
        self.assertAlmostEqual(fit.linear, 7.0, places=4)
        self.assertAlmostEqual(fit.r2, 1.0, places=9)


class CommandTests(SimpleTestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.root = Path(self.directory.name)
        self.addCleanup(self.directory.cleanup)

    def write(self, profile, name):
        return write_instance(profile, self.root / 'data' / name)

    def test_exact_on_unanimous_instance(self):
        path = self.write(Profile(rankings=((1, 0, 2),) * 4, item_labels=('a', 'b', 'c')), 'unanimous.json')
        out = self.root / 'solved.json'
        stdout = StringIO()
        call_command('solve', '--method', 'exact', '--in', str(path), '--out', str(out), '--top', '2',
                     stdout=stdout)
        (record,) = json.loads(out.read_text())
        self.assertEqual(record['cost'], 0.0)
        self.assertEqual(record['ranking'], [1, 0, 2])
        self.assertIn('top: b, a', stdout.getvalue())

    def test_seeded_kiwisort_is_reproducible(self):
        self.write(random_profile(12, 5, 1), 'a.json')
        self.write(random_profile(12, 5, 2), 'b.json')
        outputs = []
        for name in ('first.json', 'second.json'):
            call_command('solve', '--method', 'kiwisort', '--seed', '42', '--in', str(self.root / 'data'),
                         '--out', str(self.root / name), stdout=StringIO())
            records = json.loads((self.root / name).read_text())
            outputs.append([(record['ranking'], record['cost_exact']) for record in records])
        self.assertEqual(outputs[0], outputs[1])
        self.assertEqual(len(outputs[0]), 2)

    def test_non_object_instance_is_an_io_failure(self):
        path = self.root / 'list.json'
        path.write_text('[]')
        with self.assertRaises(CommandError) as raised:
            call_command('solve', '--method', 'mc4', '--in', str(path))
        self.assertEqual(raised.exception.returncode, exit_codes.IO_FAILURE)

    def test_exact_capacity_exit_code(self):
        path = self.write(random_profile(21, 3, 1), 'big.json')
        with self.assertRaises(CommandError) as raised:
            call_command('solve', '--method', 'exact', '--in', str(path))
        self.assertEqual(raised.exception.returncode, exit_codes.CAPACITY)
        self.assertIn('n <= 20', str(raised.exception))

    def test_unknown_method_is_a_usage_error(self):
        path = self.write(random_profile(5, 3, 1), 'small.json')
        with self.assertRaises(CommandError) as raised:
            call_command('solve', '--method', 'borda', '--in', str(path))
        self.assertEqual(raised.exception.returncode, exit_codes.USAGE)

    def test_transformer_needs_checkpoint(self):
        path = self.write(random_profile(5, 3, 1), 'small.json')
        with self.assertRaises(CommandError) as raised:
            call_command('solve', '--method', 'transformer', '--in', str(path))
        self.assertIn('checkpoint', str(raised.exception))

    def test_solve_reports_gap(self):
        path = self.write(random_profile(7, 4, 3), 'gap.json')
        out = self.root / 'gap-out.json'
        call_command('solve', '--method', 'min-regret', '--oracle', 'exact', '--in', str(path), '--out', str(out),
                     stdout=StringIO())
        (record,) = json.loads(out.read_text())
        self.assertGreaterEqual(record['gap'], 0.0)
        self.assertTrue(record['gap_exact'])

    def test_bench_writes_report(self):
        call_command('gen', '--type', 'random', '--n', '7', '--m', '5', '--count', '3', '--seed', '5',
                     '--out', str(self.root / 'data'), stdout=StringIO())
        report = self.root / 'bench.csv'
        call_command('bench', '--methods', 'exact,kiwisort', '--dataset', str(self.root / 'data'),
                     '--report', str(report), stdout=StringIO())
        records = read_csv_records(report)
        self.assertEqual(len(records), 6)
        self.assertEqual({record['gap'] for record in records if record['method'] == 'exact'}, {0.0})
        self.assertTrue(sibling(report, 'series').exists())

    def test_bench_partial_failure_exit_code(self):
        self.write(random_profile(21, 3, 1), 'big.json')
        with self.assertRaises(CommandError) as raised:
            call_command('bench', '--methods', 'exact,kiwisort', '--dataset', str(self.root / 'data'),
                         '--report', str(self.root / 'bench.csv'), stdout=StringIO())
        self.assertEqual(raised.exception.returncode, exit_codes.PARTIAL_FAILURE)
