"""Graph edit distance: exact A* search plus three classical approximations.

All methods share one cost model (defaults: node insert/delete 1, node
substitution 0 on equal labels else 1, edge insert/delete 1, edge
substitution free) and all report the cost of a concrete full edit path, so
every approximate value is an upper bound on the exact distance.  The
assignment-based methods and beam search are orientation-sensitive and are
therefore evaluated in both argument orders with the minimum reported.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .assignment import hungarian_assignment, vj_assignment
from .graphs import Graph


class MappingError(ValueError):
    """Raised for edit-path mappings that are not injective or out of range."""


class SizeLimitError(ValueError):
    """Raised when a graph exceeds the exact solver's node limit."""


class GedTimeoutError(TimeoutError):
    """Raised when the exact solver exceeds its time budget."""


@dataclass(frozen=True)
class EditCostModel:
    """Per-operation edit costs; node substitution is free on equal labels."""

    node_insert: float = 1.0
    node_delete: float = 1.0
    node_substitute: float = 1.0  # applied only when labels differ
    edge_insert: float = 1.0
    edge_delete: float = 1.0

    def __post_init__(self):
        for f in ("node_insert", "node_delete", "node_substitute", "edge_insert", "edge_delete"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be nonnegative")

    def node_sub(self, l1, l2) -> float:
        return 0.0 if l1 == l2 else self.node_substitute


UNIT_COSTS = EditCostModel()


@dataclass(frozen=True)
class GedResult:
    """An edit distance value with the mapping that realizes it."""

    value: float
    mapping: dict  # g1 node -> g2 node, or None for deletion
    method: str
    expanded: int = field(default=0, compare=False)


def edit_path_cost_from_mapping(g1: Graph, g2: Graph, mapping, costs: EditCostModel = UNIT_COSTS) -> float:
    """Cost of the full edit path induced by a (partial) node mapping.

    Keys absent from the mapping, and keys mapped to None, mean deletion of
    that g1 node; g2 nodes outside the image are insertions.  Edge costs
    follow from the node mapping.  Non-injective or out-of-range mappings
    raise MappingError.
    """
    img = {}
    for u, x in mapping.items():
        if not isinstance(u, int) or not (0 <= u < g1.n):
            raise MappingError(f"mapping key {u!r} is not a g1 node")
        if x is None:
            continue
        if not isinstance(x, int) or not (0 <= x < g2.n):
            raise MappingError(f"mapping value {x!r} for node {u} is not a g2 node")
        if x in img:
            raise MappingError(f"mapping is not injective: {img[x]} and {u} both map to {x}")
        img[x] = u
    total = 0.0
    for u in range(g1.n):
        x = mapping.get(u)
        if x is None:
            total += costs.node_delete
        else:
            total += costs.node_sub(g1.label(u), g2.label(x))
    total += costs.node_insert * (g2.n - len(img))
    for a, b in g1.edges:
        xa, xb = mapping.get(a), mapping.get(b)
        if xa is None or xb is None or not g2.has_edge(xa, xb):
            total += costs.edge_delete
    for x, y in g2.edges:
        a, b = img.get(x), img.get(y)
        if a is None or b is None or not g1.has_edge(a, b):
            total += costs.edge_insert
    return total


def nged_similarity(ged: float, n1: int, n2: int) -> tuple[float, float]:
    """Normalize by the mean graph size and map through exp(-x) into (0, 1]."""
    if ged < 0:
        raise ValueError(f"ged must be nonnegative, got {ged}")
    if n1 < 1 or n2 < 1:
        raise ValueError("graph sizes must be positive")
    nged = ged / ((n1 + n2) / 2.0)
    return nged, math.exp(-nged)


# ---------------------------------------------------------------------------
# exact A*


def _remaining_label_counts(g: Graph, ids) -> Counter:
    return Counter(g.label(v) for v in ids)


def exact_ged_astar(
    g1: Graph,
    g2: Graph,
    costs: EditCostModel = UNIT_COSTS,
    node_limit: int = 10,
    timeout: float | None = None,
) -> GedResult:
    """Exact edit distance by best-first search over partial node mappings.

    g1's nodes are decided one at a time (highest degree first) against every
    free g2 node or deletion; the admissible bound combines unmatched label
    counts with the residual edge-count imbalance.  Graphs larger than
    node_limit raise SizeLimitError; a positive timeout in seconds raises
    GedTimeoutError when exceeded.
    """
    if max(g1.n, g2.n) > node_limit:
        raise SizeLimitError(
            f"exact search limited to {node_limit} nodes, got {g1.n} and {g2.n}"
        )
    start = time.monotonic()
    n1, n2 = g1.n, g2.n
    order = sorted(range(n1), key=lambda v: (-g1.degree(v), v))
    adj2_mask = [0] * n2
    for u, v in g2.edges:
        adj2_mask[u] |= 1 << v
        adj2_mask[v] |= 1 << u
    # earlier-in-order neighbors of each decided node, as order indices
    pos = {v: i for i, v in enumerate(order)}
    nbr_prefix = [[] for _ in range(n1)]
    for u, v in g1.edges:
        i, j = pos[u], pos[v]
        if i > j:
            i, j = j, i
        nbr_prefix[j].append(i)
    # edges of g1 not yet accounted for when depth d starts
    e1_after = [sum(len(nbr_prefix[d]) for d in range(j, n1)) for j in range(n1 + 1)]
    m2_total = len(g2.edges)
    labels2_all = _remaining_label_counts(g2, range(n2))

    def heuristic(depth: int, used: int, counted2: int) -> float:
        r1 = n1 - depth
        r2 = n2 - bin(used).count("1")
        lab1 = _remaining_label_counts(g1, (order[i] for i in range(depth, n1)))
        lab2 = Counter(labels2_all)
        for x in range(n2):
            if (used >> x) & 1:
                lab2[g2.label(x)] -= 1
        matchable = sum(min(lab1[l], lab2[l]) for l in lab1)
        cheapest = min(costs.node_substitute, costs.node_delete, costs.node_insert)
        nodes = (max(r1, r2) - matchable) * cheapest
        # size imbalance forces pure inserts or deletes
        if r1 > r2:
            nodes = max(nodes, (r1 - r2) * costs.node_delete)
        elif r2 > r1:
            nodes = max(nodes, (r2 - r1) * costs.node_insert)
        e1r = e1_after[depth]
        e2r = m2_total - counted2
        if e1r > e2r:
            edges = (e1r - e2r) * costs.edge_delete
        else:
            edges = (e2r - e1r) * costs.edge_insert
        return nodes + edges

    counter = itertools.count()
    h0 = heuristic(0, 0, 0)
    heap = [(h0, next(counter), 0, 0, 0, 0.0, ())]
    expanded = 0
    while heap:
        if timeout is not None and time.monotonic() - start > timeout:
            raise GedTimeoutError(
                f"exact search exceeded {timeout} s ({expanded} states expanded)"
            )
        f, _, depth, used, counted2, gcost, mapped = heapq.heappop(heap)
        if depth == n1:
            mapping = {order[i]: (m if m >= 0 else None) for i, m in enumerate(mapped)}
            return GedResult(value=f, mapping=mapping, method="exact_astar", expanded=expanded)
        expanded += 1
        u = order[depth]
        lu = g1.label(u)
        prev = nbr_prefix[depth]
        # delete u
        g_del = gcost + costs.node_delete + len(prev) * costs.edge_delete
        h_del = heuristic(depth + 1, used, counted2)
        heapq.heappush(
            heap, (g_del + h_del, next(counter), depth + 1, used, counted2, g_del, mapped + (-1,))
        )
        for x in range(n2):
            if (used >> x) & 1:
                continue
            sub_seen = 0
            e_cost = 0.0
            for i in prev:
                mi = mapped[i]
                if mi >= 0 and (adj2_mask[x] >> mi) & 1:
                    sub_seen += 1
                else:
                    e_cost += costs.edge_delete
            touched = bin(adj2_mask[x] & used).count("1")
            e_cost += (touched - sub_seen) * costs.edge_insert
            g_x = gcost + costs.node_sub(lu, g2.label(x)) + e_cost
            used_x = used | (1 << x)
            counted_x = counted2 + touched
            h_x = heuristic(depth + 1, used_x, counted_x)
            heapq.heappush(
                heap,
                (g_x + h_x, next(counter), depth + 1, used_x, counted_x, g_x, mapped + (x,)),
            )
    raise AssertionError("unreachable: search space exhausted without a goal")


# ---------------------------------------------------------------------------
# assignment-based upper bounds


def ged_assignment_matrix(g1: Graph, g2: Graph, costs: EditCostModel = UNIT_COSTS) -> np.ndarray:
    """(n1+n2) x (n1+n2) node assignment costs with degree-based edge terms.

    Top-left: substitution, label cost plus the degree difference priced at
    edge insert/delete.  Top-right diagonal: delete node i plus its incident
    edges.  Bottom-left diagonal: insert node j plus its incident edges.
    Off-diagonal entries of those blocks are forbidden via a large finite
    penalty; the bottom-right block is free.
    """
    n1, n2 = g1.n, g2.n
    d1 = g1.degrees().astype(np.float64)
    d2 = g2.degrees().astype(np.float64)
    sub = np.zeros((n1, n2))
    if g1.labels is not None or g2.labels is not None:
        for i in range(n1):
            li = g1.label(i)
            for j in range(n2):
                sub[i, j] = costs.node_sub(li, g2.label(j))
    diff = d1[:, None] - d2[None, :]
    sub = sub + np.where(diff > 0, diff * costs.edge_delete, -diff * costs.edge_insert)
    del_diag = costs.node_delete + d1 * costs.edge_delete
    ins_diag = costs.node_insert + d2 * costs.edge_insert
    big = sub.sum() + del_diag.sum() + ins_diag.sum() + 1.0
    out = np.zeros((n1 + n2, n1 + n2))
    out[:n1, :n2] = sub
    out[:n1, n2:] = big
    out[:n1, n2:][np.arange(n1), np.arange(n1)] = del_diag
    out[n1:, :n2] = big
    out[n1:, :n2][np.arange(n2), np.arange(n2)] = ins_diag
    return out


def _assignment_mapping(g1: Graph, g2: Graph, cols: np.ndarray) -> dict:
    mapping = {}
    for i in range(g1.n):
        j = int(cols[i])
        mapping[i] = j if j < g2.n else None
    return mapping


def _invert_mapping(mapping: dict, n_other: int) -> dict:
    out = {u: None for u in range(n_other)}
    for a, b in mapping.items():
        if b is not None:
            out[b] = a
    return out


def bipartite_ged(
    g1: Graph, g2: Graph, costs: EditCostModel = UNIT_COSTS, solver: str = "hungarian"
) -> GedResult:
    """Upper-bound GED from an optimal node assignment (both orientations).

    The assignment minimizes local node costs only; the reported value is the
    recomputed cost of the full edit path the assignment induces, so it never
    undershoots the exact distance.
    """
    if solver == "hungarian":
        solve = hungarian_assignment
    elif solver == "vj":
        solve = vj_assignment
    else:
        raise ValueError(f"unknown solver {solver!r}, expected 'hungarian' or 'vj'")
    fwd = _assignment_mapping(g1, g2, solve(ged_assignment_matrix(g1, g2, costs)))
    val_fwd = edit_path_cost_from_mapping(g1, g2, fwd, costs)
    rev = _assignment_mapping(g2, g1, solve(ged_assignment_matrix(g2, g1, costs)))
    rev_as_fwd = _invert_mapping(rev, g1.n)
    val_rev = edit_path_cost_from_mapping(g1, g2, rev_as_fwd, costs)
    if val_rev < val_fwd:
        return GedResult(value=val_rev, mapping=rev_as_fwd, method=solver)
    return GedResult(value=val_fwd, mapping=fwd, method=solver)


# ---------------------------------------------------------------------------
# beam search


def _beam_one(g1: Graph, g2: Graph, costs: EditCostModel, width: int):
    """Depth-synchronous beam over g1's nodes in id order; returns (value, mapping)."""
    n1, n2 = g1.n, g2.n
    a2 = np.zeros((n2, n2), dtype=bool)
    for u, v in g2.edges:
        a2[u, v] = True
        a2[v, u] = True
    sub = np.zeros((n1, n2))
    if g1.labels is not None or g2.labels is not None:
        for i in range(n1):
            li = g1.label(i)
            for j in range(n2):
                sub[i, j] = costs.node_sub(li, g2.label(j))
    nbr_prefix = [np.array([u for u in g1.adj[v] if u < v], dtype=np.int64) for v in range(n1)]
    e1_after = np.zeros(n1 + 1, dtype=np.int64)
    for u, v in g1.edges:
        e1_after[max(u, v)] += 1
    e1_after = np.cumsum(e1_after[::-1])[::-1]
    m2 = len(g2.edges)

    mapped = np.full((1, n1), -2, dtype=np.int64)
    used = np.zeros((1, n2), dtype=bool)
    usedadj = np.zeros((1, n2), dtype=np.int64)  # used neighbors per g2 node
    gval = np.zeros(1)
    counted2 = np.zeros(1, dtype=np.int64)
    nkept = np.zeros(1, dtype=np.int64)  # image size per state

    for d in range(n1):
        s = mapped.shape[0]
        prev = nbr_prefix[d]
        p = len(prev)
        if p:
            imgs = mapped[:, prev]  # (s, p)
            valid = imgs >= 0
            matched = (a2[imgs.clip(min=0)] & valid[:, :, None]).sum(axis=1)  # (s, n2)
        else:
            matched = np.zeros((s, n2), dtype=np.int64)
        # assign g1 node d to g2 node v: node sub + deleted prefix edges
        # + inserted edges from v into the used region
        g_assign = (
            gval[:, None]
            + sub[d][None, :]
            + (p - matched) * costs.edge_delete
            + (usedadj - matched) * costs.edge_insert
        )
        counted_assign = counted2[:, None] + usedadj
        r1 = n1 - (d + 1)
        r2_assign = n2 - (nkept[:, None] + 1)
        h_nodes = np.where(
            r1 > r2_assign,
            (r1 - r2_assign) * costs.node_delete,
            (r2_assign - r1) * costs.node_insert,
        )
        e1r = e1_after[d + 1]
        e2r = m2 - counted_assign
        h_edges = np.where(e1r > e2r, (e1r - e2r) * costs.edge_delete, (e2r - e1r) * costs.edge_insert)
        f_assign = np.where(used, np.inf, g_assign + h_nodes + h_edges)
        # delete g1 node d
        g_del = gval + costs.node_delete + p * costs.edge_delete
        r2_del = n2 - nkept
        hd_nodes = np.where(r1 > r2_del, (r1 - r2_del) * costs.node_delete, (r2_del - r1) * costs.node_insert)
        e2r_del = m2 - counted2
        hd_edges = np.where(
            e1r > e2r_del, (e1r - e2r_del) * costs.edge_delete, (e2r_del - e1r) * costs.edge_insert
        )
        f_del = g_del + hd_nodes + hd_edges
        f_all = np.concatenate([f_assign, f_del[:, None]], axis=1).ravel()
        order = np.argsort(f_all, kind="stable")
        order = order[np.isfinite(f_all[order])][:width]
        parent = order // (n2 + 1)
        choice = order % (n2 + 1)
        is_del = choice == n2
        mapped = mapped[parent]
        mapped[:, d] = np.where(is_del, -1, choice)
        used = used[parent].copy()
        usedadj = usedadj[parent].copy()
        rows = np.flatnonzero(~is_del)
        if rows.size:
            used[rows, choice[rows]] = True
            usedadj[rows] += a2[choice[rows]]
        safe = np.where(is_del, 0, choice)
        gval = np.where(is_del, g_del[parent], g_assign[parent, safe])
        counted2 = np.where(is_del, counted2[parent], counted_assign[parent, safe])
        nkept = nkept[parent] + (~is_del)
    final = gval + (n2 - nkept) * costs.node_insert + (m2 - counted2) * costs.edge_insert
    best = int(np.argmin(final))
    mapping = {i: (int(x) if x >= 0 else None) for i, x in enumerate(mapped[best])}
    return float(final[best]), mapping


def beam_ged(g1: Graph, g2: Graph, costs: EditCostModel = UNIT_COSTS, width: int = 100) -> GedResult:
    """Beam-search upper bound; both orientations, minimum reported.

    At each depth the width lowest-estimate partial paths survive; the
    estimate at full depth is the true completion cost, so the reported
    value is the cost of a concrete edit path.
    """
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    val_fwd, map_fwd = _beam_one(g1, g2, costs, width)
    val_fwd = edit_path_cost_from_mapping(g1, g2, map_fwd, costs)
    val_rev, map_rev = _beam_one(g2, g1, costs, width)
    rev_as_fwd = _invert_mapping(map_rev, g1.n)
    val_rev = edit_path_cost_from_mapping(g1, g2, rev_as_fwd, costs)
    if val_rev < val_fwd:
        return GedResult(value=val_rev, mapping=rev_as_fwd, method="beam")
    return GedResult(value=val_fwd, mapping=map_fwd, method="beam")
