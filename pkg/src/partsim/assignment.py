"""Linear sum assignment solvers.

Two independent exact solvers for square cost matrices: a jit-compiled
Hungarian implementation (shortest augmenting paths with potentials, O(n^3))
and scipy's linear_sum_assignment, which implements a modified
Jonker-Volgenant algorithm.  Both return, for each row, the column it is
assigned to.  Costs must be finite; encode forbidden cells with a large
finite penalty.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy.optimize import linear_sum_assignment


@njit(cache=True)
def _hungarian_core(cost):  # pragma: no cover - exercised via hungarian_assignment
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = -1
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    out = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        out[p[j] - 1] = j - 1
    return out


def _check_matrix(cost) -> np.ndarray:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square 2-D, got shape {cost.shape}")
    if cost.shape[0] == 0:
        raise ValueError("cost matrix must be nonempty")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix entries must be finite")
    return cost


def hungarian_assignment(cost) -> np.ndarray:
    """Optimal column for each row, Hungarian algorithm."""
    return _hungarian_core(_check_matrix(cost))


def vj_assignment(cost) -> np.ndarray:
    """Optimal column for each row via scipy (modified Jonker-Volgenant)."""
    cost = _check_matrix(cost)
    rows, cols = linear_sum_assignment(cost)
    out = np.empty(cost.shape[0], dtype=np.int64)
    out[rows] = cols
    return out


def assignment_cost(cost, cols) -> float:
    cost = np.asarray(cost, dtype=np.float64)
    return float(cost[np.arange(cost.shape[0]), cols].sum())
