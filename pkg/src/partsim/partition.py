"""Fluid-communities graph partitioning.

k fluid communities expand and contract over the vertex set: every vertex
repeatedly adopts the community with the largest aggregated density over its
closed neighborhood, where a community of s members has density 1/s.
Densities are bookkept exactly as rationals so argmax ties are decided by the
RNG and never by float rounding.

RNG discipline (one random.Random drives a whole run): k seed vertices are
drawn first with rng.sample, each sweep draws one rng.shuffle for the visit
order, and each vertex update consumes at most one rng.choice, only when the
argmax is a genuine tie that excludes the current community.
"""

from __future__ import annotations

import json
import random
import warnings
from dataclasses import dataclass
from fractions import Fraction

from .graphs import Graph, induced_subgraph, is_connected


class ConvergenceWarning(UserWarning):
    """Partitioning stopped at the sweep cap without reaching a fixed point."""


UNASSIGNED = -1


@dataclass(frozen=True)
class CommunityState:
    """Vertex -> community assignment (UNASSIGNED allowed) plus member counts."""

    assignment: tuple
    sizes: tuple
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if len(self.sizes) != self.k:
            raise ValueError("sizes must have one entry per community")
        counts = [0] * self.k
        for c in self.assignment:
            if c == UNASSIGNED:
                continue
            if not (0 <= c < self.k):
                raise ValueError(f"community id {c} out of range for k={self.k}")
            counts[c] += 1
        if tuple(counts) != tuple(self.sizes):
            raise ValueError("sizes inconsistent with assignment")

    def density(self, c: int) -> Fraction:
        """Density of community c, exactly 1/size."""
        return Fraction(1, self.sizes[c])


def _update_in_place(assignment: list, sizes: list, g: Graph, v: int, rng: random.Random) -> bool:
    """One vertex update; mutates assignment/sizes, returns True on change."""
    current = assignment[v]
    if current != UNASSIGNED and sizes[current] == 1:
        # sole member: the community would vanish, so v must stay
        return False
    agg = {}
    for u in (v, *g.adj[v]):
        c = assignment[u]
        if c == UNASSIGNED:
            continue
        agg[c] = agg.get(c, 0) + 1
    if not agg:
        return False
    best = None
    candidates = []
    for c in sorted(agg):
        d = Fraction(agg[c], sizes[c])
        if best is None or d > best:
            best = d
            candidates = [c]
        elif d == best:
            candidates.append(c)
    if current in candidates:
        return False
    new = candidates[0] if len(candidates) == 1 else rng.choice(candidates)
    if new == current:
        return False
    if current != UNASSIGNED:
        sizes[current] -= 1
    sizes[new] += 1
    assignment[v] = new
    return True


def update_vertex(state: CommunityState, g: Graph, v: int, rng: random.Random) -> CommunityState:
    """Recompute v's community from its closed neighborhood.

    v adopts (one of) the communities maximizing the aggregated density over
    {v} union N(v); the current community wins ties it participates in, other
    ties are broken uniformly by rng.  Unassigned neighbors contribute
    nothing; with no assigned neighbor at all, an unassigned v stays
    unassigned.  Sizes are updated immediately.  Returns a new state.
    """
    if not (0 <= v < g.n):
        raise ValueError(f"vertex {v} out of range for n={g.n}")
    if len(state.assignment) != g.n:
        raise ValueError("state does not match graph size")
    assignment = list(state.assignment)
    sizes = list(state.sizes)
    _update_in_place(assignment, sizes, g, v, rng)
    return CommunityState(tuple(assignment), tuple(sizes), state.k)


@dataclass(frozen=True)
class PartitionResult:
    """Final communities of one run, with the inputs needed to reproduce it.

    converged/sweeps are None on results read back from JSON, which only
    stores k, seed and the communities.
    """

    communities: tuple  # tuple of sorted vertex tuples, one per community id
    k: int
    seed: int
    converged: bool | None = None
    sweeps: int | None = None


def fluidc(g: Graph, k: int, seed: int, max_sweeps: int = 100) -> PartitionResult:
    """Partition a connected graph into k communities.

    Sweeps visit all vertices in a fresh random order and update each one in
    turn; the run converges when a full sweep changes nothing.  Hitting
    max_sweeps first emits ConvergenceWarning (the state is still returned,
    with any stragglers attached to an adjacent community so the result is
    always a valid partition).
    """
    if not (1 <= k <= g.n):
        raise ValueError(f"k must be in 1..{g.n}, got {k}")
    if not is_connected(g):
        raise ValueError("fluidc requires a connected graph")
    rng = random.Random(seed)
    assignment = [UNASSIGNED] * g.n
    sizes = [0] * k
    for c, v in enumerate(rng.sample(range(g.n), k)):
        assignment[v] = c
        sizes[c] = 1
    converged = False
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        order = list(range(g.n))
        rng.shuffle(order)
        changed = False
        for v in order:
            if _update_in_place(assignment, sizes, g, v, rng):
                changed = True
        if not changed:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"fluidc did not converge within {max_sweeps} sweeps", ConvergenceWarning
        )
        # attach any still-unassigned vertices so the output is a partition
        pending = [v for v in range(g.n) if assignment[v] == UNASSIGNED]
        while pending:
            progressed = False
            rest = []
            for v in pending:
                cs = [assignment[u] for u in g.adj[v] if assignment[u] != UNASSIGNED]
                if cs:
                    c = min(cs)
                    assignment[v] = c
                    sizes[c] += 1
                    progressed = True
                else:
                    rest.append(v)
            pending = rest
            if not progressed and pending:
                raise AssertionError("unreachable: connected graph with isolated remainder")
    communities = [[] for _ in range(k)]
    for v, c in enumerate(assignment):
        communities[c].append(v)
    return PartitionResult(
        communities=tuple(tuple(sorted(c)) for c in communities),
        k=k,
        seed=seed,
        converged=converged,
        sweeps=sweeps,
    )


def extract_subgraphs(g: Graph, communities) -> list:
    """Induced subgraph (plus old->new id mapping) for each community.

    The communities must partition 0..n-1 into nonempty disjoint sets.
    Subgraphs are returned in community order and may be disconnected; they
    are used downstream as-is.
    """
    seen = set()
    for i, comm in enumerate(communities):
        if len(comm) == 0:
            raise ValueError(f"community {i} is empty")
        for v in comm:
            if v in seen:
                raise ValueError(f"vertex {v} appears in more than one community")
            seen.add(v)
    if seen != set(range(g.n)):
        missing = sorted(set(range(g.n)) - seen)
        raise ValueError(f"communities do not cover all vertices, missing {missing[:5]}")
    return [induced_subgraph(g, comm) for comm in communities]


def partition_to_json(p: PartitionResult) -> bytes:
    doc = {"k": p.k, "seed": p.seed, "communities": [list(c) for c in p.communities]}
    return json.dumps(doc, separators=(",", ":")).encode("utf-8")


def partition_from_json(data: str | bytes) -> PartitionResult:
    doc = json.loads(data)
    comms = tuple(tuple(int(v) for v in c) for c in doc["communities"])
    return PartitionResult(communities=comms, k=int(doc["k"]), seed=int(doc["seed"]))
