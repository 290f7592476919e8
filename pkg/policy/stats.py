"""One-sided paired t-test deciding when the rollout baseline is replaced."""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from core.exceptions import DegenerateTestError, InvalidInputError


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: int


def student_t_cdf(t, df) -> float:
    """P(T_df <= t) through the regularized incomplete beta function."""
    x = df / (df + t * t)
    tail = 0.5 * float(betainc(df / 2.0, 0.5, x))
    return tail if t < 0 else 1.0 - tail


def paired_t_test_one_sided(costs_a, costs_b) -> TTestResult:
    """Tests "a has lower cost than b"; small p favours a.

    Raises DegenerateTestError when the differences have zero variance.
    """
    a = np.asarray(costs_a, dtype=np.float64)
    b = np.asarray(costs_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInputError(f"paired samples need equal lengths, got {a.shape} and {b.shape}")
    k = a.size
    if k < 2:
        raise InvalidInputError(f"paired t-test needs at least 2 pairs, got {k}")
    differences = a - b
    sd = float(np.std(differences, ddof=1))
    if sd == 0.0:
        raise DegenerateTestError(f"all {k} differences equal {differences[0]!r}")
    t = float(np.mean(differences)) / (sd / math.sqrt(k))
    return TTestResult(t=t, p=student_t_cdf(t, k - 1), df=k - 1)


def should_replace_baseline(candidate_costs, baseline_costs, alpha=0.05):
    """(replace, test result or None). Zero variance replaces only a strict
    improvement on every instance."""
    try:
        result = paired_t_test_one_sided(candidate_costs, baseline_costs)
    except DegenerateTestError:
        differences = np.asarray(candidate_costs, dtype=np.float64) - np.asarray(baseline_costs, dtype=np.float64)
        return bool(np.all(differences < 0)), None
    return result.p < alpha, result
