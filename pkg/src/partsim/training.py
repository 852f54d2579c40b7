"""Minibatch training plus the evaluation, ranking and benchmark harness.

The loop samples pair minibatches from the train split, runs the batched
forward, and applies Adam.  Validation runs on a fixed (optionally capped)
subset at a regular cadence; the parameters with the lowest validation loss
are restored at the end.  Tapes are released after each backward pass so a
step's graph is freed immediately instead of waiting for the gc.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, NumericError, Tape, adam_step, backward
from .dataset import Dataset, Split, pair_indices_for_split
from .metrics import EvalReport, kendall, mae, mse, precision_at_k, spearman
from .model import SimilarityModel, load_params, save_params


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    iterations: int = 2000
    lr: float = 0.001
    val_every: int = 50
    val_cap: int = 512
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.iterations, self.val_every, self.val_cap) < 1:
            raise ValueError("batch_size, iterations, val_every and val_cap must be positive")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")


def mse_loss(predictions: ad.Tensor, targets) -> ad.Tensor:
    """Mean squared error as a scalar tensor; targets may be a plain array."""
    t = targets if isinstance(targets, ad.Tensor) else ad.Tensor(np.asarray(targets, dtype=np.float64))
    if predictions.data.size == 0:
        raise ValueError("empty prediction batch")
    if predictions.data.shape != t.data.shape:
        raise ad.ShapeError(f"predictions {predictions.data.shape} vs targets {t.data.shape}")
    d = ad.sub(predictions, t)
    return ad.tmean(ad.mul(d, d))


@dataclass
class TrainResult:
    history: list  # (iteration, train_loss, val_loss-or-None) triples
    best_iteration: int
    best_val: float
    best_params: bytes


def train(
    model: SimilarityModel,
    dataset: Dataset,
    split: Split,
    config: TrainConfig,
    progress: bool = False,
) -> TrainResult:
    """Run the minibatch loop; leaves the model at its best-validation state."""
    tr_idx, va_idx, _ = pair_indices_for_split(dataset.records, split)
    if not tr_idx:
        raise ValueError("split has no training pairs")
    if not va_idx:
        raise ValueError("split has no validation pairs")
    graphs = {e.graph.id: e.graph for e in dataset.entries}
    rng = np.random.default_rng(config.seed)

    va = list(va_idx)
    if len(va) > config.val_cap:
        keep = rng.choice(len(va), size=config.val_cap, replace=False)
        va = [va[i] for i in np.sort(keep)]
    val_pairs = [(graphs[dataset.records[i].id1], graphs[dataset.records[i].id2]) for i in va]
    val_targets = np.array([dataset.records[i].sim for i in va])

    params = model.parameters()
    adam = AdamState(lr=config.lr)
    history = []
    best_val = np.inf
    best_iter = 0
    best_blob = save_params(model)
    for it in range(1, config.iterations + 1):
        pick = rng.choice(len(tr_idx), size=config.batch_size, replace=len(tr_idx) < config.batch_size)
        recs = [dataset.records[tr_idx[int(i)]] for i in pick]
        batch = [(graphs[r.id1], graphs[r.id2]) for r in recs]
        targets = np.array([r.sim for r in recs])[:, None]
        try:
            with Tape() as tape:
                pred = model.forward_batch(batch)
                loss = mse_loss(pred, targets)
            backward(loss)
            tape.release()
            train_loss = float(loss.data)
            adam_step(params, adam)
            val_loss = None
            if it % config.val_every == 0 or it == config.iterations:
                preds = model.score_batch(val_pairs)
                val_loss = float(np.mean((preds - val_targets) ** 2))
                if val_loss < best_val:
                    best_val = val_loss
                    best_iter = it
                    best_blob = save_params(model)
        except NumericError as exc:
            raise NumericError(f"iteration {it}: {exc}") from exc
        history.append((it, train_loss, val_loss))
        if progress and (val_loss is not None or it == 1):
            msg = f"iter {it:5d}  train {train_loss:.6f}"
            if val_loss is not None:
                msg += f"  val {val_loss:.6f}  best {best_val:.6f}@{best_iter}"
            print(msg, flush=True)
    load_params(model, best_blob)
    return TrainResult(history=history, best_iteration=best_iter, best_val=best_val, best_params=best_blob)


def fit_pairs(model: SimilarityModel, pairs, targets, iterations: int, lr: float = 0.001) -> list:
    """Full-batch gradient steps on a fixed pair list; returns the loss curve.

    Small-scale convergence probe (overfit checks, step-size experiments);
    the real loop is train().
    """
    pairs = list(pairs)
    targets = np.asarray(targets, dtype=np.float64).reshape(len(pairs), 1)
    params = model.parameters()
    adam = AdamState(lr=lr)
    losses = []
    for _ in range(iterations):
        with Tape() as tape:
            loss = mse_loss(model.forward_batch(pairs), targets)
        backward(loss)
        tape.release()
        adam_step(params, adam)
        losses.append(float(loss.data))
    return losses


def history_to_csv(history) -> bytes:
    lines = ["iteration,train_loss,val_loss"]
    for it, tr, va in history:
        lines.append(f"{it},{tr!r},{'' if va is None else repr(va)}")
    return ("\n".join(lines) + "\n").encode()


# ---------------------------------------------------------------------------
# evaluation


def regression_metrics(records, predictions) -> tuple:
    """(mse, mae) of predictions against the stored pair similarities."""
    targets = [r.sim for r in records]
    return mse(predictions, targets), mae(predictions, targets)


def ranking_eval(
    model: SimilarityModel,
    dataset: Dataset,
    split: Split,
    ks=(10, 20),
    chunk: int = 128,
) -> tuple:
    """Retrieval quality of each test graph against the train+val database.

    Every test graph scores the full database; predicted scores are compared
    with the stored ground-truth similarities per query, then averaged.
    Queries never appear in their own database, so no self pairs occur.
    Returns (rho, tau, {k: p@k}, per_query_rows).
    """
    graphs = {e.graph.id: e.graph for e in dataset.entries}
    db_ids = sorted(split.train_ids + split.val_ids)
    if not db_ids or not split.test_ids:
        raise ValueError("split must have database and test graphs")
    truth = {(r.id1, r.id2): r.sim for r in dataset.records}
    per_query = []
    for q in sorted(split.test_ids):
        qt = [truth[(q, d)] for d in db_ids]
        qp = model.score_batch([(graphs[q], graphs[d]) for d in db_ids], chunk=chunk)
        row = {"query": q, "rho": spearman(qp, qt), "tau": kendall(qp, qt)}
        for k in ks:
            row[f"p@{k}"] = precision_at_k(qt, list(qp), db_ids, k)
        per_query.append(row)
    rho = float(np.mean([r["rho"] for r in per_query]))
    tau = float(np.mean([r["tau"] for r in per_query]))
    patk = {int(k): float(np.mean([r[f"p@{k}"] for r in per_query])) for k in ks}
    return rho, tau, patk, per_query


def evaluate(
    model: SimilarityModel,
    dataset: Dataset,
    split: Split,
    which: str = "test",
    ranking: bool = False,
    ks=(10, 20),
    chunk: int = 128,
) -> EvalReport:
    """Regression metrics on one pair subset, optional ranking on test queries."""
    tr_idx, va_idx, te_idx = pair_indices_for_split(dataset.records, split)
    try:
        idx = {"train": tr_idx, "val": va_idx, "test": te_idx}[which]
    except KeyError:
        raise ValueError(f"which must be train/val/test, got {which!r}") from None
    if not idx:
        raise ValueError(f"no {which} pairs in split")
    graphs = {e.graph.id: e.graph for e in dataset.entries}
    recs = [dataset.records[i] for i in idx]
    preds = model.score_batch([(graphs[r.id1], graphs[r.id2]) for r in recs], chunk=chunk)
    m, a = regression_metrics(recs, preds)
    if not ranking:
        return EvalReport(mse=m, mae=a)
    rho, tau, patk, per_query = ranking_eval(model, dataset, split, ks=ks, chunk=chunk)
    return EvalReport(mse=m, mae=a, rho=rho, tau=tau, p_at_k=patk, per_query=per_query)


def bench_timing(scorer, pairs, repetitions: int = 3) -> float:
    """Mean milliseconds per scorer call over the pairs; warmup pass excluded."""
    pairs = list(pairs)
    if not pairs or repetitions < 1:
        raise ValueError("need at least one pair and one repetition")
    for g1, g2 in pairs:
        scorer(g1, g2)
    t0 = time.perf_counter()
    for _ in range(repetitions):
        for g1, g2 in pairs:
            scorer(g1, g2)
    return (time.perf_counter() - t0) / (repetitions * len(pairs)) * 1000.0
