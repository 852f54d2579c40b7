import numpy as np
import pytest

import partsim.autodiff as ad
from conftest import ba
from partsim.dataset import build_ba_dataset, pair_indices_for_split, split_dataset
from partsim.model import ModelConfig, SimilarityModel, save_params
from partsim.training import (
    TrainConfig,
    bench_timing,
    evaluate,
    fit_pairs,
    history_to_csv,
    mse_loss,
    ranking_eval,
    regression_metrics,
    train,
)

SMALL = ModelConfig(gin_dims=(8, 8), match_dim=8, mlp_hidden=4)


@pytest.fixture(scope="module")
def tiny_ds():
    return build_ba_dataset(10, seed=7, n_basic=2, n_derived_per_basic=3, beam_width=16)


@pytest.fixture(scope="module")
def tiny_split(tiny_ds):
    return split_dataset(tiny_ds.manifest.ids, seed=1)


def test_train_config_defaults_match_contract():
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.iterations, cfg.lr, cfg.val_every) == (128, 2000, 0.001, 50)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(val_every=-1)


def test_mse_loss_value_and_gradient():
    p = ad.Parameter("p", np.array([[1.0], [3.0]]))
    with ad.Tape():
        loss = mse_loss(p, np.array([[0.0], [1.0]]))
        assert loss.data.item() == pytest.approx((1 + 4) / 2)
        ad.backward(loss)
    assert p.grad.ravel().tolist() == [1.0, 2.0]  # 2*(p-t)/n


def test_mse_loss_errors():
    with pytest.raises(ad.ShapeError):
        mse_loss(ad.Tensor(np.zeros((2, 1))), np.zeros((3, 1)))
    with pytest.raises(ValueError):
        mse_loss(ad.Tensor(np.zeros((0, 1))), np.zeros((0, 1)))


def test_fit_pairs_reduces_loss():
    pairs = [(ba(10, 50 + 2 * i, f"fa{i}"), ba(10, 51 + 2 * i, f"fb{i}")) for i in range(5)]
    targets = np.linspace(0.3, 0.8, 5)
    model = SimilarityModel(SMALL)
    losses = fit_pairs(model, pairs, targets, iterations=600, lr=0.02)
    assert losses[-1] < losses[0] * 0.5
    assert all(np.isfinite(losses))


def test_train_loop_contract(tiny_ds, tiny_split):
    model = SimilarityModel(SMALL)
    cfg = TrainConfig(batch_size=8, iterations=25, val_every=10, seed=3)
    result = train(model, tiny_ds, tiny_split, cfg)
    assert len(result.history) == 25
    # validation fired at the cadence and at the end
    val_iters = [it for it, _, v in result.history if v is not None]
    assert val_iters == [10, 20, 25]
    assert result.best_iteration in val_iters
    # the model was left at the best-validation parameters
    assert save_params(model) == result.best_params
    assert result.best_val == min(v for _, _, v in result.history if v is not None)


def test_train_deterministic(tiny_ds, tiny_split):
    cfg = TrainConfig(batch_size=8, iterations=12, val_every=6, seed=5)
    m1, m2 = SimilarityModel(SMALL), SimilarityModel(SMALL)
    r1 = train(m1, tiny_ds, tiny_split, cfg)
    r2 = train(m2, tiny_ds, tiny_split, cfg)
    assert r1.history == r2.history
    assert save_params(m1) == save_params(m2)


def test_train_seed_changes_path(tiny_ds, tiny_split):
    cfg_a = TrainConfig(batch_size=8, iterations=8, val_every=4, seed=5)
    cfg_b = TrainConfig(batch_size=8, iterations=8, val_every=4, seed=6)
    r1 = train(SimilarityModel(SMALL), tiny_ds, tiny_split, cfg_a)
    r2 = train(SimilarityModel(SMALL), tiny_ds, tiny_split, cfg_b)
    assert r1.history != r2.history


def test_history_csv_shape():
    text = history_to_csv([(1, 0.5, None), (2, 0.25, 0.3)]).decode()
    lines = text.strip().splitlines()
    assert lines[0] == "iteration,train_loss,val_loss"
    assert lines[1] == "1,0.5,"
    assert lines[2] == "2,0.25,0.3"


def test_regression_metrics(tiny_ds):
    recs = tiny_ds.records[:5]
    preds = [r.sim for r in recs]
    m, a = regression_metrics(recs, preds)
    assert m == 0.0 and a == 0.0
    with pytest.raises(ValueError):
        regression_metrics([], [])


def test_evaluate_and_ranking(tiny_ds, tiny_split):
    model = SimilarityModel(SMALL)
    rep = evaluate(model, tiny_ds, tiny_split, which="test")
    assert rep.mse >= 0.0 and rep.rho is None
    rep2 = evaluate(model, tiny_ds, tiny_split, which="test", ranking=True, ks=(2, 3))
    assert rep2.rho is not None and -1.0 <= rep2.rho <= 1.0
    assert set(rep2.p_at_k) == {2, 3}
    assert len(rep2.per_query) == len(tiny_split.test_ids)
    for row in rep2.per_query:
        assert row["query"] in tiny_split.test_ids
        assert row["query"] not in tiny_split.train_ids + tiny_split.val_ids


def test_evaluate_rejects_unknown_subset(tiny_ds, tiny_split):
    with pytest.raises(ValueError):
        evaluate(SimilarityModel(SMALL), tiny_ds, tiny_split, which="nope")


def test_ranking_queries_score_whole_database(tiny_ds, tiny_split):
    model = SimilarityModel(SMALL)
    rho, tau, patk, per_query = ranking_eval(model, tiny_ds, tiny_split, ks=(2,))
    db = len(tiny_split.train_ids) + len(tiny_split.val_ids)
    assert all(0 < row["p@2"] or row["p@2"] == 0.0 for row in per_query)
    assert 0 < patk[2] <= 1.0 or patk[2] == 0.0
    assert -1 <= rho <= 1 and -1 <= tau <= 1
    assert db >= 2


def test_bench_timing_counts_calls():
    calls = []

    def scorer(a, b):
        calls.append((a, b))
        return 0.5

    pairs = [(1, 2), (3, 4)]
    ms = bench_timing(scorer, pairs, repetitions=3)
    assert ms > 0.0
    assert len(calls) == 2 * (1 + 3)  # warmup plus timed repetitions
    with pytest.raises(ValueError):
        bench_timing(scorer, [], repetitions=1)
