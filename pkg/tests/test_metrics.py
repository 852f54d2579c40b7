import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from partsim.metrics import (
    EvalReport,
    double_ranks,
    kendall,
    mae,
    mse,
    precision_at_k,
    spearman,
)


def test_mse_mae_values():
    assert mse([1.0, 2.0], [1.0, 4.0]) == 2.0
    assert mae([1.0, 2.0], [1.0, 4.0]) == 1.0
    assert mse([3.0], [3.0]) == 0.0


def test_mse_mae_errors():
    for f in (mse, mae):
        with pytest.raises(ValueError):
            f([], [])
        with pytest.raises(ValueError):
            f([1.0], [1.0, 2.0])


def test_double_ranks():
    assert double_ranks([10.0, 30.0, 20.0]) == [2, 6, 4]
    # ties share the doubled average rank
    assert double_ranks([5.0, 5.0, 1.0]) == [5, 5, 2]


def test_spearman_hand_values():
    assert spearman([1, 2, 3], [1, 2, 3]) == 1.0
    assert spearman([1, 2, 3], [3, 2, 1]) == -1.0
    # classic example: d^2 = (0,1,1) -> 1 - 6*2/(3*8) = 0.5
    assert spearman([1, 2, 3], [1, 3, 2]) == 0.5


def test_kendall_hand_values():
    assert kendall([1, 2, 3], [1, 2, 3]) == 1.0
    assert kendall([1, 2, 3], [3, 2, 1]) == -1.0
    # one discordant of three pairs -> (2-1)/3
    assert kendall([1, 2, 3], [1, 3, 2]) == (2 - 1) / 3


def test_correlations_reject_degenerate():
    for f in (spearman, kendall):
        with pytest.raises(ValueError):
            f([1.0], [1.0])
        with pytest.raises(ValueError):
            f([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            f([1.0, 2.0], [1.0, 2.0, 3.0])


def test_spearman_exact_vs_classic_formula(rng):
    # tie-free: must equal 1 - 6*sum(d^2)/(n(n^2-1)) computed in rationals, bit for bit
    for _ in range(60):
        n = int(rng.integers(2, 120))
        a = rng.permutation(n).astype(float)
        b = rng.permutation(n).astype(float)
        ra = [r // 2 for r in double_ranks(a)]
        rb = [r // 2 for r in double_ranks(b)]
        d2 = sum(Fraction(x - y) ** 2 for x, y in zip(ra, rb))
        classic = float(1 - 6 * d2 / Fraction(n * (n * n - 1)))
        assert spearman(a, b) == classic


def test_kendall_exact_vs_pair_count(rng):
    for _ in range(40):
        n = int(rng.integers(2, 60))
        a = rng.permutation(n).astype(float)
        b = rng.permutation(n).astype(float)
        conc = disc = 0
        for i in range(n):
            for j in range(i + 1, n):
                s = (a[i] - a[j]) * (b[i] - b[j])
                conc += s > 0
                disc += s < 0
        assert kendall(a, b) == (conc - disc) / (n * (n - 1) / 2)


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(3, 40),
    seed=st.integers(0, 10_000),
    vals=st.integers(2, 6),
)
def test_tied_correlations_match_scipy(n, seed, vals):
    r = np.random.default_rng(seed)
    a = r.integers(0, vals, size=n).astype(float)
    b = r.integers(0, vals, size=n).astype(float)
    if len(set(a)) < 2 or len(set(b)) < 2:
        return
    assert spearman(a, b) == pytest.approx(stats.spearmanr(a, b).statistic, abs=1e-12)
    assert kendall(a, b) == pytest.approx(stats.kendalltau(a, b).statistic, abs=1e-12)


def test_precision_at_k_hand_values():
    ids = ["a", "b", "c", "d"]
    true = [4.0, 3.0, 2.0, 1.0]
    pred = [4.0, 1.0, 2.0, 3.0]  # predicted top-2 = {a, d}; true top-2 = {a, b}
    assert precision_at_k(true, pred, ids, 2) == 0.5
    assert precision_at_k(true, true, ids, 3) == 1.0


def test_precision_at_k_boundary_ties_by_id():
    # all-equal true scores: top-k is decided purely by id order on both sides
    ids = ["q3", "q1", "q2"]
    flat = [1.0, 1.0, 1.0]
    assert precision_at_k(flat, flat, ids, 2) == 1.0
    # predicted breaks the tie differently -> overlap drops
    assert precision_at_k(flat, [0.0, 1.0, 1.0], ids, 1) == 1.0  # both pick q1
    assert precision_at_k([2.0, 1.0, 1.0], [0.0, 0.0, 1.0], ids, 1) == 0.0


def test_precision_at_k_errors():
    with pytest.raises(ValueError):
        precision_at_k([1.0], [1.0], ["a"], 0)
    with pytest.raises(ValueError):
        precision_at_k([1.0], [1.0], ["a"], 2)
    with pytest.raises(ValueError):
        precision_at_k([1.0, 2.0], [1.0], ["a", "b"], 1)


def test_eval_report_validation():
    with pytest.raises(ValueError):
        EvalReport(mse=-1.0, mae=0.0)
    with pytest.raises(ValueError):
        EvalReport(mse=0.0, mae=0.0, rho=1.5)
    with pytest.raises(ValueError):
        EvalReport(mse=0.0, mae=0.0, p_at_k={10: 2.0})


def test_eval_report_csv_units():
    rep = EvalReport(mse=0.004, mae=0.05, rho=0.5, tau=0.25, p_at_k={10: 0.9}, timing_ms=2.0)
    text = rep.to_csv().decode()
    lines = text.strip().splitlines()
    assert lines[0] == "metric,value,units"
    assert "mse,0.4,1e-2" in lines
    assert "p@10,0.9,raw" in lines
    assert "time_per_pair,2.0,ms" in lines
    doc = json.loads(rep.to_json())
    assert doc["mse"] == 0.004
    assert doc["p_at_k"]["10"] == 0.9


def test_eval_report_optional_fields():
    rep = EvalReport(mse=0.1, mae=0.2)
    text = rep.to_csv().decode()
    assert "rho" not in text and "time_per_pair" not in text
