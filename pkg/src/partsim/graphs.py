"""Undirected simple graphs with integer node ids and optional string labels.

Nodes are always 0..n-1.  Edges are stored canonically as (u, v) with u < v,
sorted, so two graphs with the same edge set compare equal regardless of the
order edges were supplied in.  Graphs are treated as immutable after
construction; all operations return new objects.
"""

from __future__ import annotations

import json
from collections import deque
from typing import Iterable, Mapping

import numpy as np


class GraphFormatError(ValueError):
    """Raised for malformed graph data (bad JSON, bad ids, self loops, ...)."""


def _canon_edges(n: int, edges: Iterable, where: str = "edges") -> tuple:
    out = []
    seen = set()
    for i, e in enumerate(edges):
        try:
            u, v = e
        except (TypeError, ValueError):
            raise GraphFormatError(f"{where}[{i}]: expected a pair, got {e!r}")
        if not isinstance(u, int) or not isinstance(v, int) or isinstance(u, bool) or isinstance(v, bool):
            raise GraphFormatError(f"{where}[{i}]: endpoints must be integers, got {e!r}")
        if u == v:
            raise GraphFormatError(f"{where}[{i}]: self loop at node {u}")
        if not (0 <= u < n and 0 <= v < n):
            raise GraphFormatError(f"{where}[{i}]: endpoint out of range for n={n}: {e!r}")
        if u > v:
            u, v = v, u
        if (u, v) in seen:
            raise GraphFormatError(f"{where}[{i}]: duplicate edge ({u}, {v})")
        seen.add((u, v))
        out.append((u, v))
    out.sort()
    return tuple(out)


class Graph:
    """Immutable undirected simple graph.

    Equality compares n, the edge set and the labels; the id string is
    metadata and does not participate.
    """

    __slots__ = ("id", "n", "edges", "labels", "_adj", "_eset")

    def __init__(self, n: int, edges: Iterable = (), id: str = "", labels: Mapping[int, str] | None = None):
        if not isinstance(n, int) or isinstance(n, bool) or n < 1:
            raise GraphFormatError(f"n must be a positive integer, got {n!r}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "id", str(id))
        object.__setattr__(self, "edges", _canon_edges(n, edges))
        if labels is not None:
            lab = {}
            for k, v in labels.items():
                if not isinstance(k, int) or isinstance(k, bool) or not (0 <= k < n):
                    raise GraphFormatError(f"labels: node id {k!r} out of range for n={n}")
                lab[k] = str(v)
            labels = dict(sorted(lab.items()))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_adj", None)
        object.__setattr__(self, "_eset", None)

    def __setattr__(self, name, value):
        raise AttributeError("Graph is immutable")

    @property
    def adj(self) -> tuple:
        """Adjacency as a tuple of sorted neighbor tuples, built lazily."""
        if self._adj is None:
            nbrs = [[] for _ in range(self.n)]
            for u, v in self.edges:
                nbrs[u].append(v)
                nbrs[v].append(u)
            object.__setattr__(self, "_adj", tuple(tuple(sorted(x)) for x in nbrs))
        return self._adj

    def degree(self, v: int) -> int:
        return len(self.adj[v])

    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.adj], dtype=np.int64)

    def label(self, v: int):
        """Label of node v, or None if the graph is unlabeled / v has none."""
        if self.labels is None:
            return None
        return self.labels.get(v)

    def has_edge(self, u: int, v: int) -> bool:
        if self._eset is None:
            object.__setattr__(self, "_eset", frozenset(self.edges))
        if u > v:
            u, v = v, u
        return (u, v) in self._eset

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return self.n == other.n and self.edges == other.edges and self.labels == other.labels

    def __hash__(self):
        return hash((self.n, self.edges, None if self.labels is None else tuple(self.labels.items())))

    def __repr__(self):
        return f"Graph(id={self.id!r}, n={self.n}, m={len(self.edges)})"


def load_graph(data: str | bytes) -> Graph:
    """Parse a graph from its JSON document.

    Expected shape: {"id": str, "n": int, "edges": [[u, v], ...],
    "labels": {"<node id>": str, ...}} with labels optional.  Errors name
    the offending field.
    """
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise GraphFormatError(f"invalid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise GraphFormatError(f"top level must be an object, got {type(doc).__name__}")
    for key in ("id", "n", "edges"):
        if key not in doc:
            raise GraphFormatError(f"missing required key {key!r}")
    if not isinstance(doc["id"], str):
        raise GraphFormatError(f"id: expected string, got {doc['id']!r}")
    n = doc["n"]
    if not isinstance(n, int) or isinstance(n, bool):
        raise GraphFormatError(f"n: expected integer, got {n!r}")
    if not isinstance(doc["edges"], list):
        raise GraphFormatError("edges: expected a list")
    labels = None
    if "labels" in doc and doc["labels"] is not None:
        raw = doc["labels"]
        if not isinstance(raw, dict):
            raise GraphFormatError("labels: expected an object")
        labels = {}
        for k, v in raw.items():
            try:
                ki = int(k)
            except (TypeError, ValueError):
                raise GraphFormatError(f"labels: key {k!r} is not an integer node id")
            if not isinstance(v, str):
                raise GraphFormatError(f"labels[{k!r}]: expected string, got {v!r}")
            labels[ki] = v
    return Graph(n=n, edges=doc["edges"], id=doc["id"], labels=labels)


def save_graph(g: Graph) -> bytes:
    """Serialize to canonical JSON bytes; load_graph(save_graph(g)) == g."""
    doc = {"id": g.id, "n": g.n, "edges": [list(e) for e in g.edges]}
    if g.labels is not None:
        doc["labels"] = {str(k): v for k, v in g.labels.items()}
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def is_connected(g: Graph) -> bool:
    """True for the single-node graph; BFS reachability otherwise."""
    if g.n == 1:
        return True
    seen = bytearray(g.n)
    seen[0] = 1
    q = deque([0])
    count = 1
    adj = g.adj
    while q:
        u = q.popleft()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = 1
                count += 1
                q.append(v)
    return count == g.n


def induced_subgraph(g: Graph, nodes: Iterable[int]) -> tuple[Graph, dict]:
    """Subgraph on `nodes`, relabeled to 0..len(nodes)-1 in sorted-id order.

    Returns (subgraph, mapping) where mapping sends old ids to new ids.
    """
    nodes = sorted(set(nodes))
    if not nodes:
        raise ValueError("induced_subgraph: empty node set")
    for v in nodes:
        if not isinstance(v, int) or isinstance(v, bool) or not (0 <= v < g.n):
            raise ValueError(f"induced_subgraph: node {v!r} out of range for n={g.n}")
    mapping = {old: new for new, old in enumerate(nodes)}
    keep = set(nodes)
    edges = [(mapping[u], mapping[v]) for u, v in g.edges if u in keep and v in keep]
    labels = None
    if g.labels is not None:
        labels = {mapping[v]: g.labels[v] for v in nodes if v in g.labels}
        if not labels:
            labels = {}
    return Graph(n=len(nodes), edges=edges, id=g.id, labels=labels), mapping


def constant_features(g: Graph, value: float = 1.0, dim: int = 1) -> np.ndarray:
    """Dense (n, dim) float64 feature matrix with every entry = value."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    return np.full((g.n, dim), float(value), dtype=np.float64)
