"""
Benchmark runs: every method on every instance, with gaps against an oracle.

The report itself carries no wall-clock values, so equal inputs give
byte-identical reports; timings go to sibling `.timing.csv` (per record)
and `.series.csv` (per method and n, for log-time plots) files.
"""
import csv
import json
import logging
import time
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from sklearn.metrics import r2_score

from core.exceptions import InvalidInputError, KemenyError
from core.seeding import derive_seed
from policy.model import decode
from policy.tensor import count_macs
from rankings.generators import GeneratorSpec, generate
from rankings.kernels import Profile, precedence_matrix
from solvers.exact import SUBSET_DP_MAX_N, lower_bound, solve_subset_dp
from solvers.registry import METHODS, SolveOptions, solve

logger = logging.getLogger(__name__)

ORACLES = ('exact', 'none') + tuple(method for method in METHODS if method != 'exact')

RECORD_FIELDS = ('instance', 'n', 'm', 'method', 'status', 'ranking', 'cost', 'oracle', 'oracle_cost', 'gap',
                 'relative_gap', 'normalized_gap', 'gap_exact', 'error')
SUMMARY_FIELDS = ('method', 'instances', 'failures', 'mean_obj', 'mean_gap', 'mean_relative_gap',
                  'mean_normalized_gap', 'gap_exact')
TIMING_FIELDS = ('instance', 'n', 'method', 'seconds')
SERIES_FIELDS = ('method', 'n', 'instances', 'mean_seconds', 'total_seconds')


@dataclass(frozen=True)
class BenchRecord:
    instance: str
    n: int
    m: int
    method: str
    status: str
    ranking: Optional[tuple] = None
    cost: Optional[float] = None
    oracle: Optional[str] = None
    oracle_cost: Optional[float] = None
    gap: Optional[float] = None
    relative_gap: Optional[float] = None
    normalized_gap: Optional[float] = None
    gap_exact: Optional[bool] = None
    error: Optional[str] = None
    seconds: float = 0.0

    def row(self) -> dict:
        row = asdict(self)
        del row['seconds']
        return row


@dataclass
class BenchReport:
    records: list
    summary: list
    series: list

    @property
    def failures(self) -> int:
        return sum(record.status != 'ok' for record in self.records)


def oracle_cost(name, profile, options, results=None):
    """(label, exact cost or floor, whether the gap is exact) or None."""
    if name == 'none':
        return None
    if name == 'exact' and profile.n > SUBSET_DP_MAX_N:
        w = precedence_matrix(profile)
        return 'lower_bound', Fraction(lower_bound(w), profile.m), False
    cost = results[name].cost if results and name in results else None
    if cost is None:
        if name == 'exact':
            cost = Fraction(solve_subset_dp(profile).cost_numerator, profile.m)
        else:
            cost = solve(name, profile, options).cost
    return name, cost, name == 'exact'


def run_instance(name: str, profile: Profile, methods, oracle: str, options: SolveOptions) -> list:
    """Records for one instance, in `methods` order."""
    results, errors = {}, {}
    for method in methods:
        try:
            results[method] = solve(method, profile, options)
        except KemenyError as error:
            logger.warning('%s failed on %s: %s', method, name, error)
            errors[method] = str(error)
    try:
        reference = oracle_cost(oracle, profile, options, results)
    except KemenyError as error:
        logger.warning('oracle %s failed on %s: %s', oracle, name, error)
        reference = None
    best = min((result.cost for result in results.values()), default=None)

    records = []
    for method in methods:
        if method in errors:
            records.append(BenchRecord(instance=name, n=profile.n, m=profile.m, method=method, status='failed',
                                       error=errors[method]))
            continue
        result = results[method]
        gap = relative = None
        label = floor = exact = None
        if reference is not None:
            label, floor, exact = reference
            gap = result.cost - floor
            relative = gap / floor if floor else (Fraction(0) if gap == 0 else None)
        if best:
            normalized = (result.cost - best) / best
        else:
            normalized = Fraction(0) if result.cost == best else None
        records.append(BenchRecord(
            instance=name,
            n=profile.n,
            m=profile.m,
            method=method,
            status='ok',
            ranking=result.ranking.order,
            cost=float(result.cost),
            oracle=label,
            oracle_cost=None if floor is None else float(floor),
            gap=None if gap is None else float(gap),
            relative_gap=None if relative is None else float(relative),
            normalized_gap=None if normalized is None else float(normalized),
            gap_exact=exact,
            seconds=result.elapsed,
        ))
    return records


def _mean(values):
    values = [value for value in values if value is not None]
    return float(np.mean(values)) if values else None


def summarize(records, methods) -> list:
    summary = []
    for method in methods:
        rows = [record for record in records if record.method == method]
        ok = [record for record in rows if record.status == 'ok']
        gapped = [record for record in ok if record.gap is not None]
        summary.append({
            'method': method,
            'instances': len(rows),
            'failures': len(rows) - len(ok),
            'mean_obj': _mean(record.cost for record in ok),
            'mean_gap': _mean(record.gap for record in gapped),
            'mean_relative_gap': _mean(record.relative_gap for record in gapped),
            'mean_normalized_gap': _mean(record.normalized_gap for record in ok),
            'gap_exact': bool(gapped) and all(record.gap_exact for record in gapped),
        })
    return summary


def time_series(records, methods) -> list:
    """Per method: mean and total solver seconds for each n, then an 'all' row."""
    series = []
    for method in methods:
        ok = [record for record in records if record.method == method and record.status == 'ok']
        for n in sorted({record.n for record in ok}):
            seconds = [record.seconds for record in ok if record.n == n]
            series.append({'method': method, 'n': n, 'instances': len(seconds),
                           'mean_seconds': float(np.mean(seconds)), 'total_seconds': float(np.sum(seconds))})
        if ok:
            seconds = [record.seconds for record in ok]
            series.append({'method': method, 'n': 'all', 'instances': len(seconds),
                           'mean_seconds': float(np.mean(seconds)), 'total_seconds': float(np.sum(seconds))})
    return series


def run_bench(instances, methods, oracle='exact', options: SolveOptions = None, workers=1) -> BenchReport:
    """`instances` is a sequence of (name, Profile); records come back sorted
    by instance name, then in `methods` order."""
    methods = tuple(methods)
    unknown = [method for method in methods if method not in METHODS]
    if not methods or unknown:
        raise InvalidInputError(f"unknown methods {unknown}; choose from {', '.join(METHODS)}")
    if oracle not in ORACLES:
        raise InvalidInputError(f"unknown oracle {oracle!r}; choose from {', '.join(ORACLES)}")
    options = options or SolveOptions()
    instances = sorted(instances, key=lambda item: item[0])
    logger.info('Running %d methods on %d instances with %d workers', len(methods), len(instances), workers)
    batches = Parallel(n_jobs=workers)(
        delayed(run_instance)(name, profile, methods, oracle, options) for name, profile in instances
    )
    records = [record for batch in batches for record in batch]
    return BenchReport(records=records, summary=summarize(records, methods), series=time_series(records, methods))


def _cell(value):
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ' '.join(str(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return value


def _write_csv(path, fields, rows):
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.DictWriter(handle, fieldnames=fields, lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({name: _cell(row[name]) for name in fields})


def sibling(path, suffix) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.{suffix}.csv")


def write_report(report: BenchReport, path, fmt='csv') -> list:
    """Writes the report plus its timing files; returns every path written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [record.row() for record in report.records]
    if fmt == 'csv':
        _write_csv(path, RECORD_FIELDS, rows)
        written = [path, sibling(path, 'summary')]
        _write_csv(written[1], SUMMARY_FIELDS, report.summary)
    elif fmt == 'json':
        for row in rows:
            row['ranking'] = None if row['ranking'] is None else list(row['ranking'])
        document = {'records': rows, 'summary': report.summary}
        path.write_text(json.dumps(document, sort_keys=True, indent=2) + '\n', encoding='utf-8')
        written = [path]
    else:
        raise InvalidInputError(f"unknown report format {fmt!r}; choose csv or json")
    timing = [{'instance': record.instance, 'n': record.n, 'method': record.method, 'seconds': record.seconds}
              for record in report.records if record.status == 'ok']
    _write_csv(sibling(path, 'timing'), TIMING_FIELDS, timing)
    _write_csv(sibling(path, 'series'), SERIES_FIELDS, report.series)
    return written + [sibling(path, 'timing'), sibling(path, 'series')]


def read_csv_records(path) -> list:
    """Report rows parsed back into the values `write_report` emits as JSON."""
    integers, floats = {'n', 'm'}, {'cost', 'oracle_cost', 'gap', 'relative_gap', 'normalized_gap'}
    records = []
    with open(path, newline='', encoding='utf-8') as handle:
        for row in csv.DictReader(handle):
            parsed = {}
            for name, value in row.items():
                if value == '':
                    parsed[name] = None
                elif name in integers:
                    parsed[name] = int(value)
                elif name in floats:
                    parsed[name] = float(value)
                elif name == 'gap_exact':
                    parsed[name] = value == 'true'
                elif name == 'ranking':
                    parsed[name] = [int(item) for item in value.split()]
                else:
                    parsed[name] = value
            records.append(parsed)
    return records


@dataclass(frozen=True)
class QuadraticFit:
    quadratic: float
    linear: float
    r2: float


def fit_quadratic(ns, values) -> QuadraticFit:
    """Least-squares fit of values ~ a*n^2 + b*n."""
    ns = np.asarray(ns, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    design = np.stack([ns ** 2, ns], axis=1)
    (quadratic, linear), *_ = np.linalg.lstsq(design, values, rcond=None)
    fitted = design @ np.array([quadratic, linear])
    return QuadraticFit(quadratic=float(quadratic), linear=float(linear), r2=float(r2_score(values, fitted)))


def _random_profile(n, m, seed) -> Profile:
    return generate(GeneratorSpec(kind='random', n=n, m=m, seed=seed))


def rollout_macs(n, params, config, m=5, seed=1234) -> int:
    """Multiply-accumulates of one greedy rollout over a random n-item profile."""
    profile = _random_profile(n, min(m, config.max_m), derive_seed(seed, n))
    with count_macs() as counter:
        decode([profile], params, config, mode='greedy')
    return counter.total


@dataclass(frozen=True)
class GrowthComparison:
    n_small: int
    n_large: int
    exact_seconds: tuple
    transformer_seconds: tuple

    @property
    def exact_growth(self) -> float:
        return self.exact_seconds[1] / self.exact_seconds[0]

    @property
    def transformer_growth(self) -> float:
        return self.transformer_seconds[1] / self.transformer_seconds[0]

    @property
    def ratio(self) -> float:
        return self.exact_growth / self.transformer_growth


def _best_time(run, repeats):
    times = []
    for _ in range(repeats):
        started = time.perf_counter()
        run()
        times.append(time.perf_counter() - started)
    return min(times)


def compare_growth(params, config, n_small=12, n_large=18, m=5, seed=1234, repeats=3) -> GrowthComparison:
    """Wall-time growth of the subset DP against a greedy rollout between two sizes."""
    exact, transformer = [], []
    for n in (n_small, n_large):
        profile = _random_profile(n, min(m, config.max_m), derive_seed(seed, n))
        exact.append(_best_time(lambda: solve_subset_dp(profile), repeats))
        transformer.append(_best_time(lambda: decode([profile], params, config, mode='greedy'), repeats))
    return GrowthComparison(n_small=n_small, n_large=n_large, exact_seconds=tuple(exact),
                            transformer_seconds=tuple(transformer))


@dataclass(frozen=True)
class ScalingReport:
    ns: tuple
    macs: tuple
    fit: QuadraticFit
    growth: GrowthComparison


def run_scaling(params, config, ns=(20, 50, 100, 150), seed=1234, growth_sizes=(12, 18)) -> ScalingReport:
    macs = tuple(rollout_macs(n, params, config, seed=seed) for n in ns)
    fit = fit_quadratic(ns, macs)
    logger.info('Rollout MACs %s fit %.1f n^2 + %.1f n (R^2 %.6f)', dict(zip(ns, macs)), fit.quadratic, fit.linear,
                fit.r2)
    growth = compare_growth(params, config, *growth_sizes, seed=seed)
    return ScalingReport(ns=tuple(ns), macs=macs, fit=fit, growth=growth)
