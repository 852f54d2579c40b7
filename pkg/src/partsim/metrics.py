"""Regression and ranking metrics, plus the evaluation report container.

Rank correlations are computed exactly where possible: ranks are doubled so
average ranks of ties stay integral, and Spearman goes through rational
arithmetic, falling back to a float square root only when ties make the
denominator irrational.  On tie-free data both correlations therefore equal
a direct textbook implementation bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


def mse(predictions, targets) -> float:
    """Mean squared difference between aligned score lists."""
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.size == 0 or p.size != t.size:
        raise ValueError(f"need equal nonempty lists, got {p.size} and {t.size}")
    d = p - t
    return float(np.mean(d * d))


def mae(predictions, targets) -> float:
    """Mean absolute difference between aligned score lists."""
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.size == 0 or p.size != t.size:
        raise ValueError(f"need equal nonempty lists, got {p.size} and {t.size}")
    return float(np.mean(np.abs(p - t)))


def double_ranks(values) -> list:
    """Twice the 1-based ranks, with tied values sharing their average rank.

    Doubling keeps every rank an integer (a tie group's average is a
    multiple of 1/2), which lets the correlations stay exact.
    """
    values = list(values)
    n = len(values)
    order = sorted(range(n), key=lambda i: values[i])
    out = [0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        r2 = i + j + 2  # doubled average of ranks i+1 .. j+1
        for t in range(i, j + 1):
            out[order[t]] = r2
        i = j + 1
    return out


def _exact_sqrt(q: Fraction) -> Fraction | None:
    num, den = q.numerator, q.denominator
    if num < 0:
        return None
    rn, rd = math.isqrt(num), math.isqrt(den)
    if rn * rn == num and rd * rd == den:
        return Fraction(rn, rd)
    return None


def spearman(a, b) -> float:
    """Rank correlation: linear correlation of the two rank vectors."""
    a = list(a)
    b = list(b)
    if len(a) != len(b) or len(a) < 2:
        raise ValueError(f"need two aligned lists of length >= 2, got {len(a)} and {len(b)}")
    ra = double_ranks(a)
    rb = double_ranks(b)
    n = len(ra)
    sa = sum(ra)
    sb = sum(rb)
    sxy = Fraction(n * sum(x * y for x, y in zip(ra, rb)) - sa * sb)
    sxx = Fraction(n * sum(x * x for x in ra) - sa * sa)
    syy = Fraction(n * sum(y * y for y in rb) - sb * sb)
    if sxx == 0 or syy == 0:
        raise ValueError("rank correlation undefined for a constant list")
    root = _exact_sqrt(sxx * syy)
    if root is not None:
        return float(sxy / root)
    return float(sxy) / math.sqrt(float(sxx * syy))


def kendall(a, b) -> float:
    """Rank correlation from concordant/discordant pair counts, O(n^2).

    Tie-free lists use the plain pair-count ratio; ties switch to the
    tie-corrected denominator.
    """
    a = np.asarray(list(a), dtype=np.float64)
    b = np.asarray(list(b), dtype=np.float64)
    if a.size != b.size or a.size < 2:
        raise ValueError(f"need two aligned lists of length >= 2, got {a.size} and {b.size}")
    n = int(a.size)
    iu = np.triu_indices(n, 1)
    pa = np.sign(a[:, None] - a[None, :])[iu].astype(np.int64)
    pb = np.sign(b[:, None] - b[None, :])[iu].astype(np.int64)
    prod = pa * pb
    conc = int(np.count_nonzero(prod > 0))
    disc = int(np.count_nonzero(prod < 0))
    ties_a = int(np.count_nonzero(pa == 0))
    ties_b = int(np.count_nonzero(pb == 0))
    n0 = n * (n - 1) // 2
    if ties_a == n0 or ties_b == n0:
        raise ValueError("rank correlation undefined for a constant list")
    if ties_a == 0 and ties_b == 0:
        return (conc - disc) / n0
    return (conc - disc) / math.sqrt((n0 - ties_a) * (n0 - ties_b))


def precision_at_k(true_scores, pred_scores, ids, k: int) -> float:
    """Overlap of the predicted and true top-k id sets, divided by k.

    Ranking is by descending score with ties broken by id, so boundary ties
    resolve the same way on both sides.
    """
    ids = list(ids)
    n = len(ids)
    if not (1 <= k <= n):
        raise ValueError(f"k must lie in 1..{n}, got {k}")
    if len(true_scores) != n or len(pred_scores) != n:
        raise ValueError("scores and ids must be aligned")
    true_top = set(sorted(range(n), key=lambda i: (-true_scores[i], ids[i]))[:k])
    pred_top = set(sorted(range(n), key=lambda i: (-pred_scores[i], ids[i]))[:k])
    return len(true_top & pred_top) / k


# ---------------------------------------------------------------------------
# report container


@dataclass
class EvalReport:
    """Evaluation summary; regression always, ranking/timing when computed.

    mse/mae are stored raw; the CSV emits them additionally in 1e-2 units
    (the convention the reference tables use).
    """

    mse: float
    mae: float
    rho: float | None = None
    tau: float | None = None
    p_at_k: dict = field(default_factory=dict)
    per_query: list = field(default_factory=list)
    timing_ms: float | None = None

    def __post_init__(self):
        if self.mse < 0 or self.mae < 0:
            raise ValueError("mse and mae must be nonnegative")
        for name, v in (("rho", self.rho), ("tau", self.tau)):
            if v is not None and not -1.0 - 1e-12 <= v <= 1.0 + 1e-12:
                raise ValueError(f"{name} out of [-1, 1]: {v}")
        for k, v in self.p_at_k.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"p@{k} out of [0, 1]: {v}")

    def rows(self) -> list:
        out = [
            ("mse", self.mse, "raw"),
            ("mse", self.mse * 100.0, "1e-2"),
            ("mae", self.mae, "raw"),
            ("mae", self.mae * 100.0, "1e-2"),
        ]
        if self.rho is not None:
            out.append(("rho", self.rho, "raw"))
        if self.tau is not None:
            out.append(("tau", self.tau, "raw"))
        for k in sorted(self.p_at_k):
            out.append((f"p@{k}", self.p_at_k[k], "raw"))
        if self.timing_ms is not None:
            out.append(("time_per_pair", self.timing_ms, "ms"))
        return out

    def to_csv(self) -> bytes:
        lines = ["metric,value,units"]
        for name, value, units in self.rows():
            lines.append(f"{name},{value!r},{units}")
        return ("\n".join(lines) + "\n").encode()

    def to_json(self) -> bytes:
        doc = {
            "mse": self.mse,
            "mae": self.mae,
            "rho": self.rho,
            "tau": self.tau,
            "p_at_k": {str(k): v for k, v in sorted(self.p_at_k.items())},
            "per_query": self.per_query,
            "timing_ms": self.timing_ms,
        }
        return json.dumps(doc, indent=1, sort_keys=True).encode()
