"""Independent reference implementations used only by the tests.

Each oracle is deliberately brute force or computed by a different method than
the production code so that agreement is meaningful.
"""

from __future__ import annotations

import itertools
import math

import mpmath
import numpy as np

from respsed.detector.model import ModelParams, loss_and_grad
from respsed.detector.model import bce_from_logits, predict_logits


# ---------------------------------------------------------------- gradients

def finite_difference_grads(m: ModelParams, x, target, step: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences of the mean BCE, one coordinate at a time."""
    out = {}
    for name, arr in m.tensors.items():
        g = np.empty(arr.shape)
        for idx in np.ndindex(arr.shape):
            vals = []
            for sign in (1, -1):
                t = {k: v.copy() for k, v in m.tensors.items()}
                t[name][idx] += sign * step
                vals.append(bce_from_logits(predict_logits(m.replace(t), x), target))
            g[idx] = (vals[0] - vals[1]) / (2 * step)
        out[name] = g
    return out


def block_relative_errors(m: ModelParams, x, target, floor: float = 1e-6) -> dict[str, float]:
    """Max relative error between analytic and numeric gradients per parameter block."""
    _, analytic = loss_and_grad(m, x, target)
    numeric = finite_difference_grads(m, x, target)
    errors = {}
    for name in m.tensors:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        errors[name] = float(np.max(np.abs(a - n) / denom))
    return errors


# ---------------------------------------------------------------- events

def interval_ji(a, b) -> float:
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def optimal_pairing_tp(truth, pred, threshold: float = 0.5) -> int:
    """Maximum number of disjoint (truth, pred) pairs with JI >= threshold.

    Exhaustive depth-first search: every truth event is tried against every
    still-free qualifying prediction and against staying unpaired.
    """
    partners = [[j for j, p in enumerate(pred) if interval_ji(t, p) >= threshold] for t in truth]

    def search(i: int, used: frozenset) -> int:
        if i == len(truth):
            return 0
        best = search(i + 1, used)
        for j in partners[i]:
            if j not in used:
                best = max(best, 1 + search(i + 1, used | {j}))
        return best

    return search(0, frozenset())


# ---------------------------------------------------------------- AUC

def trapezoid_auc(scores, truth) -> float:
    """Area under the empirical ROC curve by the trapezoid rule over distinct thresholds."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    pos, neg = truth.sum(), (~truth).sum()
    tpr, fpr = [0.0], [0.0]
    for thr in sorted(set(scores.tolist()), reverse=True):
        hit = scores >= thr
        tpr.append((hit & truth).sum() / pos)
        fpr.append((hit & ~truth).sum() / neg)
    area = 0.0
    for i in range(1, len(tpr)):
        area += (fpr[i] - fpr[i - 1]) * (tpr[i] + tpr[i - 1]) / 2
    return area


# ---------------------------------------------------------------- tests

def permutation_rank_sum_p(x, y) -> float:
    """Two-sided exact p by enumerating every split of the pooled ranks."""
    pooled = sorted(list(x) + list(y))
    ranks = {v: i + 1 for i, v in enumerate(pooled)}  # no ties assumed
    n, total = len(x), len(x) + len(y)
    w = sum(ranks[v] for v in x)
    sums = [sum(c) for c in itertools.combinations(range(1, total + 1), n)]
    lower = sum(s <= w for s in sums) / len(sums)
    upper = sum(s >= w for s in sums) / len(sums)
    return min(1.0, 2 * min(lower, upper))


def t_test_p_betainc(x, y) -> float:
    """Pooled two-sample t p-value via the regularized incomplete beta function."""
    mpmath.mp.dps = 30
    n, m = len(x), len(y)
    mx, my = sum(x) / n, sum(y) / m
    ss = sum((v - mx) ** 2 for v in x) + sum((v - my) ** 2 for v in y)
    df = n + m - 2
    t = (mx - my) / math.sqrt(ss / df * (1 / n + 1 / m))
    return float(mpmath.betainc(df / 2, mpmath.mpf(1) / 2, 0, df / (df + t * t), regularized=True))
