"""Synthetic similarity datasets: preferential-attachment graphs, trimmed
variants with known edit budgets, and assignment/beam-backed ground truth.

A dataset holds basic generated graphs plus derived graphs obtained by
trimming (leaf deletions, leaf additions, edge additions), where every trim
op adds its exact edit cost to a running budget.  That budget upper-bounds
the true edit distance to the root, so the recorded ground truth for a pair
is the minimum over the trim bounds and the classical approximations, all of
which are upper bounds themselves.
"""

from __future__ import annotations

import csv
import io
import json
import os
import random
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .ged import UNIT_COSTS, EditCostModel, beam_ged, bipartite_ged, nged_similarity
from .graphs import Graph, load_graph, save_graph

PROVENANCE_ORDER = ("trim", "trim_triangle", "hungarian", "vj", "beam", "exact")


class TrimError(ValueError):
    """Raised when no trim sequence hits the requested budget."""


@dataclass(frozen=True)
class DerivedGraph:
    """A trimmed graph, its root's id, and the accumulated edit budget."""

    graph: Graph
    root_id: str
    trim_ged: int


@dataclass(frozen=True)
class GraphEntry:
    """Dataset member: root_id is None for basic (untrimmed) graphs."""

    graph: Graph
    root_id: str | None = None
    trim_ged: int = 0


@dataclass(frozen=True)
class PairRecord:
    id1: str
    id2: str
    ged: float
    nged: float
    sim: float
    provenance: str


@dataclass
class DatasetManifest:
    n_target: int
    seed: int
    beam_width: int
    n_basic: int
    n_derived_per_basic: int
    ids: list
    roots: dict  # id -> root id, derived graphs only
    trim_geds: dict  # id -> accumulated trim budget, derived graphs only
    partition_seeds: dict = field(default_factory=dict)


@dataclass
class Dataset:
    entries: list
    records: list
    manifest: DatasetManifest

    def entry(self, gid: str) -> GraphEntry:
        return self._by_id()[gid]

    def _by_id(self):
        if not hasattr(self, "_idx"):
            self._idx = {e.graph.id: e for e in self.entries}
        return self._idx


def generate_ba(n: int, m: int, seed: int) -> Graph:
    """Preferential-attachment graph: m seed nodes, then each new node links
    to m distinct existing nodes with probability proportional to degree
    (uniform while all degrees are still zero).  m=1 yields a tree.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if n < m + 1:
        raise ValueError(f"n must be >= m+1, got n={n}, m={m}")
    rng = random.Random(seed)
    edges = []
    repeated = []  # one entry per edge endpoint, drives degree-weighted draws
    for v in range(m, n):
        chosen = set()
        while len(chosen) < m:
            if repeated:
                t = rng.choice(repeated)
            else:
                t = rng.randrange(v)
            chosen.add(t)
        for t in sorted(chosen):
            edges.append((t, v))
            repeated.append(t)
            repeated.append(v)
    return Graph(n, edges)


def _apply_trim(g: Graph, op: str, rng: random.Random) -> Graph:
    if op == "delete_leaf":
        leaves = [v for v in range(g.n) if g.degree(v) == 1]
        victim = rng.choice(leaves)
        keep = [v for v in range(g.n) if v != victim]
        old = {v: i for i, v in enumerate(keep)}
        edges = [(old[u], old[v]) for u, v in g.edges if u != victim and v != victim]
        return Graph(g.n - 1, edges, id=g.id)
    if op == "add_leaf":
        anchor = rng.randrange(g.n)
        return Graph(g.n + 1, list(g.edges) + [(anchor, g.n)], id=g.id)
    if op == "add_edge":
        present = set(g.edges)
        absent = [(u, v) for u in range(g.n) for v in range(u + 1, g.n) if (u, v) not in present]
        return Graph(g.n, list(g.edges) + [rng.choice(absent)], id=g.id)
    raise ValueError(f"unknown trim op {op!r}")


TRIM_COSTS = {"delete_leaf": 2, "add_leaf": 2, "add_edge": 1}


def trim(g: Graph, target: int, seed: int, max_attempts: int = 100) -> DerivedGraph:
    """Apply random trim ops until their costs sum exactly to target.

    Ops: delete a leaf (+2, needs an existing leaf), add a leaf attached to a
    uniform random node (+2), add an edge between a uniform random
    non-adjacent pair (+1).  Each step picks uniformly among the ops whose
    cost still fits the remaining budget; connectivity and simplicity are
    preserved by construction.  Attempts that strand budget are retried;
    after max_attempts a TrimError is raised.
    """
    if target < 1:
        raise ValueError(f"target must be >= 1, got {target}")
    rng = random.Random(seed)
    for _ in range(max_attempts):
        cur = g
        remaining = target
        while remaining > 0:
            feasible = []
            if remaining >= 2 and cur.n >= 2 and any(cur.degree(v) == 1 for v in range(cur.n)):
                feasible.append("delete_leaf")
            if remaining >= 2:
                feasible.append("add_leaf")
            if remaining >= 1 and len(cur.edges) < cur.n * (cur.n - 1) // 2:
                feasible.append("add_edge")
            if not feasible:
                break
            op = rng.choice(feasible)
            cur = _apply_trim(cur, op, rng)
            remaining -= TRIM_COSTS[op]
        if remaining == 0:
            return DerivedGraph(graph=cur, root_id=g.id, trim_ged=target)
    raise TrimError(f"could not realize trim budget {target} after {max_attempts} attempts")


def ground_truth(
    e1: GraphEntry,
    e2: GraphEntry,
    beam_width: int = 16,
    costs: EditCostModel = UNIT_COSTS,
) -> PairRecord:
    """Best available distance for a pair, labeled with where it came from.

    Candidates: the trim budget when one graph derives from the other, the
    summed budgets when both share a root, and the hungarian / vj / beam
    upper bounds.  The identical pair short-circuits to an exact zero.  Ties
    resolve by fixed provenance precedence.
    """
    g1, g2 = e1.graph, e2.graph
    if g1.id == g2.id:
        nged, sim = nged_similarity(0.0, g1.n, g2.n)
        return PairRecord(g1.id, g2.id, 0.0, nged, sim, "exact")
    cands = []
    if e2.root_id == g1.id:
        cands.append((float(e2.trim_ged), "trim"))
    if e1.root_id == g2.id:
        cands.append((float(e1.trim_ged), "trim"))
    if e1.root_id is not None and e1.root_id == e2.root_id:
        cands.append((float(e1.trim_ged + e2.trim_ged), "trim_triangle"))
    cands.append((bipartite_ged(g1, g2, costs, solver="hungarian").value, "hungarian"))
    cands.append((bipartite_ged(g1, g2, costs, solver="vj").value, "vj"))
    cands.append((beam_ged(g1, g2, costs, width=beam_width).value, "beam"))
    best = min(c[0] for c in cands)
    provenance = min(
        (prov for val, prov in cands if val == best), key=PROVENANCE_ORDER.index
    )
    nged, sim = nged_similarity(best, g1.n, g2.n)
    return PairRecord(g1.id, g2.id, best, nged, sim, provenance)


def build_ba_dataset(
    n: int,
    seed: int,
    n_basic: int = 2,
    n_derived_per_basic: int = 99,
    beam_width: int = 16,
    costs: EditCostModel = UNIT_COSTS,
    progress: bool = False,
) -> Dataset:
    """Basic graphs plus trimmed derivatives, with every ordered pair scored.

    Trim budgets cycle 1..10 across the derived graphs of each basic.  Pair
    values are computed once per unordered pair and mirrored (all methods
    already take the better argument order), so the record list covers the
    full ordered product including self pairs.
    """
    if n_basic < 1 or n_derived_per_basic < 0:
        raise ValueError("need at least one basic graph and nonnegative derived count")
    rng = random.Random(seed)
    entries = []
    for b in range(n_basic):
        root = generate_ba(n, 1, rng.randrange(2**32))
        root_id = f"g{len(entries):03d}"
        root = Graph(root.n, root.edges, id=root_id, labels=root.labels)
        entries.append(GraphEntry(graph=root, root_id=None, trim_ged=0))
        for i in range(n_derived_per_basic):
            target = (i % 10) + 1
            d = trim(root, target, rng.randrange(2**32))
            gid = f"g{len(entries):03d}"
            g = Graph(d.graph.n, d.graph.edges, id=gid, labels=d.graph.labels)
            entries.append(GraphEntry(graph=g, root_id=root_id, trim_ged=d.trim_ged))
    ids = [e.graph.id for e in entries]
    total = len(entries)
    by_pair = {}
    done = 0
    n_unordered = total * (total - 1) // 2
    for i in range(total):
        for j in range(i + 1, total):
            by_pair[(i, j)] = ground_truth(entries[i], entries[j], beam_width, costs)
            done += 1
            if progress and done % 1000 == 0:
                print(f"  pairs {done}/{n_unordered}", file=sys.stderr, flush=True)
    records = []
    for i in range(total):
        for j in range(total):
            if i == j:
                records.append(ground_truth(entries[i], entries[i], beam_width, costs))
            elif i < j:
                records.append(by_pair[(i, j)])
            else:
                r = by_pair[(j, i)]
                records.append(PairRecord(r.id2, r.id1, r.ged, r.nged, r.sim, r.provenance))
    manifest = DatasetManifest(
        n_target=n,
        seed=seed,
        beam_width=beam_width,
        n_basic=n_basic,
        n_derived_per_basic=n_derived_per_basic,
        ids=ids,
        roots={e.graph.id: e.root_id for e in entries if e.root_id is not None},
        trim_geds={e.graph.id: e.trim_ged for e in entries if e.root_id is not None},
        partition_seeds={gid: idx for idx, gid in enumerate(ids)},
    )
    return Dataset(entries=entries, records=records, manifest=manifest)


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class Split:
    """Graph-level split; pair sets follow from graph membership."""

    train_ids: tuple
    val_ids: tuple
    test_ids: tuple
    seed: int
    ratios: tuple = (0.6, 0.2, 0.2)

    def __post_init__(self):
        parts = (self.train_ids, self.val_ids, self.test_ids)
        if any(len(p) == 0 for p in parts):
            raise ValueError("every split part must be nonempty")
        total = sum(len(p) for p in parts)
        if len(set(self.train_ids) | set(self.val_ids) | set(self.test_ids)) != total:
            raise ValueError("split parts must be disjoint")


def split_dataset(ids, seed: int, ratios=(0.6, 0.2, 0.2)) -> Split:
    """Shuffle graph ids and cut by ratios (remainder goes to train)."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three nonnegative numbers summing to 1, got {ratios}")
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate graph ids")
    rng = random.Random(seed)
    rng.shuffle(ids)
    n = len(ids)
    n_val = int(n * ratios[1])
    n_test = int(n * ratios[2])
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"split of {n} graphs leaves an empty part")
    train = ids[:n_train]
    val = ids[n_train : n_train + n_val]
    test = ids[n_train + n_val :]
    return Split(tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test)), seed, tuple(ratios))


def pair_indices_for_split(records, split: Split):
    """Index lists into records for train, val and test pair sets.

    Train: both graphs in train.  Val: query in val, target in train+val.
    Test: query in test, target in train+val; test queries are never
    compared against each other.
    """
    train = set(split.train_ids)
    val = set(split.val_ids)
    test = set(split.test_ids)
    seen = train | val
    out = {"train": [], "val": [], "test": []}
    for idx, r in enumerate(records):
        if r.id1 in train and r.id2 in train:
            out["train"].append(idx)
        elif r.id1 in val and r.id2 in seen:
            out["val"].append(idx)
        elif r.id1 in test and r.id2 in seen:
            out["test"].append(idx)
    return out["train"], out["val"], out["test"]


# ---------------------------------------------------------------------------
# persistence


def _format_ged(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def save_dataset(ds: Dataset, out_dir) -> None:
    out = Path(out_dir)
    (out / "graphs").mkdir(parents=True, exist_ok=True)
    for e in ds.entries:
        (out / "graphs" / f"{e.graph.id}.json").write_bytes(save_graph(e.graph))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id1", "id2", "ged", "nged", "sim", "provenance"])
    for r in ds.records:
        w.writerow([r.id1, r.id2, _format_ged(r.ged), repr(r.nged), repr(r.sim), r.provenance])
    (out / "pairs.csv").write_text(buf.getvalue())
    m = ds.manifest
    doc = {
        "n_target": m.n_target,
        "seed": m.seed,
        "beam_width": m.beam_width,
        "n_basic": m.n_basic,
        "n_derived_per_basic": m.n_derived_per_basic,
        "ids": m.ids,
        "roots": m.roots,
        "trim_geds": m.trim_geds,
        "partition_seeds": m.partition_seeds,
    }
    # the manifest commits the directory: written last, swapped in atomically,
    # so a partial save never looks like a loadable dataset
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, out / "manifest.json")


def load_dataset(in_dir) -> Dataset:
    root = Path(in_dir)
    doc = json.loads((root / "manifest.json").read_text())
    manifest = DatasetManifest(
        n_target=doc["n_target"],
        seed=doc["seed"],
        beam_width=doc["beam_width"],
        n_basic=doc["n_basic"],
        n_derived_per_basic=doc["n_derived_per_basic"],
        ids=list(doc["ids"]),
        roots=dict(doc["roots"]),
        trim_geds={k: int(v) for k, v in doc["trim_geds"].items()},
        partition_seeds={k: int(v) for k, v in doc.get("partition_seeds", {}).items()},
    )
    entries = []
    for gid in manifest.ids:
        g = load_graph((root / "graphs" / f"{gid}.json").read_bytes())
        entries.append(
            GraphEntry(
                graph=g,
                root_id=manifest.roots.get(gid),
                trim_ged=manifest.trim_geds.get(gid, 0),
            )
        )
    records = []
    with open(root / "pairs.csv", newline="") as fh:
        rd = csv.DictReader(fh)
        for row in rd:
            records.append(
                PairRecord(
                    id1=row["id1"],
                    id2=row["id2"],
                    ged=float(row["ged"]),
                    nged=float(row["nged"]),
                    sim=float(row["sim"]),
                    provenance=row["provenance"],
                )
            )
    return Dataset(entries=entries, records=records, manifest=manifest)


def save_split(split: Split, path) -> None:
    doc = {
        "train": list(split.train_ids),
        "val": list(split.val_ids),
        "test": list(split.test_ids),
        "seed": split.seed,
        "ratios": list(split.ratios),
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_split(path) -> Split:
    doc = json.loads(Path(path).read_text())
    return Split(
        tuple(doc["train"]),
        tuple(doc["val"]),
        tuple(doc["test"]),
        int(doc["seed"]),
        tuple(doc["ratios"]),
    )
