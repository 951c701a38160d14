"""Two-sample tests used to compare scenarios and corpora."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import norm, t as t_dist

EXACT_MAX_N = 10


def _rank_sum_counts(n: int, total: int) -> np.ndarray:
    """Number of size-n subsets of ranks 1..total with each possible sum."""
    max_sum = n * total
    counts = np.zeros((n + 1, max_sum + 1))
    counts[0, 0] = 1.0
    for r in range(1, total + 1):
        for k in range(min(n, r), 0, -1):
            counts[k, r:] += counts[k - 1, :max_sum + 1 - r]
    return counts[n]


def wilcoxon_rank_sum(x, y) -> float:
    """Two-sided Wilcoxon rank-sum p-value.

    Exact null distribution when the smaller sample has at most 10 values and
    there are no ties; otherwise normal approximation with tie and
    continuity corrections.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) == 0 or len(y) == 0:
        raise ValueError("both samples must be non-empty")
    n, m = len(x), len(y)
    total = n + m
    pooled = np.concatenate([x, y])
    order = np.argsort(pooled, kind="mergesort")
    ranks = np.empty(total)
    sorted_vals = pooled[order]
    tie_term = 0.0
    i = 0
    while i < total:
        j = i
        while j + 1 < total and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        size = j - i + 1
        tie_term += size ** 3 - size
        i = j + 1
    w = ranks[:n].sum()

    if min(n, m) <= EXACT_MAX_N and tie_term == 0:
        counts = _rank_sum_counts(n, total)
        w_int = int(round(w))
        denom = counts.sum()
        lower = counts[:w_int + 1].sum() / denom
        upper = counts[w_int:].sum() / denom
        return float(min(1.0, 2 * min(lower, upper)))

    mean = n * (total + 1) / 2
    var = n * m / 12 * ((total + 1) - tie_term / (total * (total - 1)))
    if var <= 0:
        return 1.0
    diff = w - mean
    z = (diff - 0.5 * np.sign(diff)) / math.sqrt(var)
    return float(min(1.0, 2 * norm.sf(abs(z))))


def student_t(x, y) -> tuple[float, int] | None:
    """Pooled-variance t statistic and degrees of freedom, None if variance is zero."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, m = len(x), len(y)
    if n < 2 or m < 2:
        raise ValueError("each sample needs at least 2 values")
    df = n + m - 2
    pooled = (((x - x.mean()) ** 2).sum() + ((y - y.mean()) ** 2).sum()) / df
    if pooled <= 0:
        return None
    return float((x.mean() - y.mean()) / math.sqrt(pooled * (1 / n + 1 / m))), df


def t_test_two_sample(x, y) -> float | None:
    """Two-sided equal-variance Student's t-test p-value."""
    res = student_t(x, y)
    if res is None:
        return None
    t, df = res
    return float(min(1.0, 2 * t_dist.sf(abs(t), df)))
