"""Earth mover's distance between equal-size point sets via exact assignment."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

MAX_POINTS = 1024


class EMDError(ValueError):
    pass


def _solve(cost: np.ndarray) -> float:
    if cost.size == 0:
        return 0.0
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].sum())


def lexicographic_assignment(cost: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """Lexicographically smallest permutation among cost-optimal assignments.

    Rows are fixed in order, each to the lowest column that still admits an
    optimal completion. Costs O(n^2) extra solves, so use it on small sets.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = len(cost)
    best = _solve(cost)
    tol = rtol * max(1.0, abs(best))
    free = list(range(n))
    perm = np.empty(n, dtype=np.int64)
    spent = 0.0
    for i in range(n):
        rest = np.arange(i + 1, n)
        for j in free:
            cols = [c for c in free if c != j]
            total = spent + cost[i, j] + _solve(cost[np.ix_(rest, cols)])
            if total <= best + tol:
                perm[i] = j
                spent += cost[i, j]
                free.remove(j)
                break
    return perm


def assignment(generated: np.ndarray, target: np.ndarray, lexicographic: bool = False) -> np.ndarray:
    """Optimal one-to-one matching: ``perm[i]`` is the target index paired with point ``i``.

    The default solver breaks ties deterministically; ``lexicographic=True``
    returns the lexicographically smallest optimum instead.
    """
    cost = cdist(generated, target)
    if lexicographic:
        return lexicographic_assignment(cost)
    _, cols = linear_sum_assignment(cost)
    return cols


def emd(generated, target, lexicographic: bool = False) -> tuple[float, np.ndarray]:
    """Mean matched Euclidean distance and its gradient w.r.t. ``generated``.

    The gradient holds the optimal assignment fixed; pairs at zero distance
    contribute zero.
    """
    x = np.asarray(generated, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3:
        raise EMDError(f"cardinality mismatch: {x.shape} vs {y.shape}")
    n = len(x)
    if not 1 <= n <= MAX_POINTS:
        raise EMDError(f"set size {n} outside [1, {MAX_POINTS}]")
    perm = assignment(x, y, lexicographic)
    diff = x - y[perm]
    dist = np.sqrt(np.sum(diff**2, axis=1))
    safe = np.where(dist > 0, dist, 1.0)
    grad = np.where(dist[:, None] > 0, diff / safe[:, None], 0.0) / n
    return float(dist.mean()), grad
