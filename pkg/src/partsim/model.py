"""Partition-based graph similarity model.

Scoring a pair works in two resolutions.  Coarse: each graph is split into k
communities, each community subgraph is embedded by a small GIN stack with
attention pooling, and all k*k pooled-embedding cosines form an interaction
vector.  Fine: the m best-scoring subgraph pairs are re-compared at node
level by a cross-graph matcher that exchanges messages along subgraph edges
and attention-weighted differences across the pair for a fixed number of
rounds.  A fusion head maps both interaction vectors to one similarity in
(0, 1).

Everything differentiable runs on the tape substrate in `autodiff`.  Graph
structure enters through constants only (adjacency and segment matrices,
gather/scatter row plans, attention masks), so all subgraphs of one graph
are encoded as a disjoint union in a single pass and the m fine pairs run
through the matcher stacked together; per-subgraph public methods are thin
single-segment cases of the same code.  Structure constants are cached per
graph id.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, RowPlan, Tensor
from .graphs import Graph, constant_features
from .partition import PartitionResult, extract_subgraphs, fluidc


# ---------------------------------------------------------------------------
# parameter bundles


@dataclass
class MlpParams:
    """Two affine layers with a learnable-slope PReLU between them."""

    w1: Parameter
    b1: Parameter
    slope: Parameter
    w2: Parameter
    b2: Parameter

    def apply(self, x: Tensor) -> Tensor:
        h = ad.prelu(ad.affine(x, self.w1, self.b1), self.slope)
        return ad.affine(h, self.w2, self.b2)

    def apply_cat(self, parts) -> Tensor:
        """apply() on the column concat of parts, without building it."""
        h = ad.prelu(ad.affine_cat(parts, self.w1, self.b1), self.slope)
        return ad.affine(h, self.w2, self.b2)

    def params(self):
        return [self.w1, self.b1, self.slope, self.w2, self.b2]


@dataclass
class GinLayerParams:
    """One GIN convolution: MLP((1 + eps) * h_v + sum of neighbor h_u)."""

    eps: Parameter
    mlp: MlpParams

    def params(self):
        return [self.eps] + self.mlp.params()


def _xavier(rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _make_mlp(rng, name: str, din: int, dhid: int, dout: int) -> MlpParams:
    return MlpParams(
        w1=Parameter(f"{name}.w1", _xavier(rng, din, dhid)),
        b1=Parameter(f"{name}.b1", np.zeros((1, dhid))),
        slope=Parameter(f"{name}.slope", np.array([[0.25]])),
        w2=Parameter(f"{name}.w2", _xavier(rng, dhid, dout)),
        b2=Parameter(f"{name}.b2", np.zeros((1, dout))),
    )


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ModelConfig:
    partitions: int = 3  # communities per graph
    fine_pairs: int = 9  # subgraph pairs re-scored at node level (0 disables)
    rounds: int = 3  # matcher message-passing rounds
    gin_dims: tuple = (64, 32, 16)
    feature_dim: int = 1
    feature_value: float = 1.0
    match_dim: int = 16
    mlp_hidden: int = 16
    pool_attention: bool = True  # False: plain mean pooling
    cross_attention: bool = True  # False: uniform cross-pair weights
    cross_messages: bool = True  # False: drop the cross-pair difference term
    within_messages: bool = True  # False: drop the within-subgraph messages
    init_seed: int = 0
    partition_seed: int = 0
    partition_sweeps: int = 100

    def __post_init__(self):
        if self.partitions < 1:
            raise ValueError("partitions must be >= 1")
        if not (0 <= self.fine_pairs <= self.partitions**2):
            raise ValueError(
                f"fine_pairs must lie in 0..{self.partitions ** 2}, got {self.fine_pairs}"
            )
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if len(self.gin_dims) < 1:
            raise ValueError("need at least one encoder layer")
        object.__setattr__(self, "gin_dims", tuple(self.gin_dims))


def config_to_json(cfg: ModelConfig) -> bytes:
    doc = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    doc["gin_dims"] = list(cfg.gin_dims)
    return json.dumps(doc, indent=1, sort_keys=True).encode()


def config_from_json(data) -> ModelConfig:
    doc = json.loads(data)
    doc["gin_dims"] = tuple(doc["gin_dims"])
    return ModelConfig(**doc)


def variant_config(base: ModelConfig, name: str) -> ModelConfig:
    """The three standard settings: full (m=k^2), topk (m=k), coarse (m=0)."""
    k = base.partitions
    m = {"full": k * k, "topk": k, "coarse": 0}.get(name)
    if m is None:
        raise ValueError(f"unknown variant {name!r}, expected full/topk/coarse")
    return replace(base, fine_pairs=m)


# ---------------------------------------------------------------------------
# pure selection


def select_top_m(scores: np.ndarray, m: int):
    """Indices of the m largest entries of a k x k score matrix.

    Ordered by descending score, ties broken lexicographically by (row,
    col).  Plain numpy on detached values; no gradient flows through the
    selection itself.
    """
    scores = np.asarray(scores)
    if scores.ndim != 2:
        raise ValueError(f"expected a 2-D score matrix, got shape {scores.shape}")
    if not (0 <= m <= scores.size):
        raise ValueError(f"m must lie in 0..{scores.size}, got {m}")
    flat = scores.ravel()
    order = np.argsort(-flat, kind="stable")[:m]
    k2 = scores.shape[1]
    return [(int(i) // k2, int(i) % k2) for i in order]


# ---------------------------------------------------------------------------
# constant structure builders


def _union_adjacency(graphs) -> np.ndarray:
    total = sum(g.n for g in graphs)
    a = np.zeros((total, total))
    off = 0
    for g in graphs:
        for u, v in g.edges:
            a[off + u, off + v] = 1.0
            a[off + v, off + u] = 1.0
        off += g.n
    return a


def _segment_mats(sizes) -> tuple[np.ndarray, np.ndarray]:
    """(mean-pool matrix, 0/1 sum matrix), both (num_segments, total)."""
    total = sum(sizes)
    k = len(sizes)
    ssum = np.zeros((k, total))
    off = 0
    for s, n in enumerate(sizes):
        ssum[s, off : off + n] = 1.0
        off += n
    smean = ssum / np.array(sizes, dtype=np.float64)[:, None]
    return smean, ssum


def _edge_endpoints(g: Graph) -> tuple[np.ndarray, np.ndarray]:
    """Receiver/sender node ids over all directed edges (both directions)."""
    if not g.edges:
        z = np.zeros(0, dtype=np.int64)
        return z, z
    e = np.asarray(g.edges, dtype=np.int64)
    recv = np.concatenate([e[:, 0], e[:, 1]])
    send = np.concatenate([e[:, 1], e[:, 0]])
    return recv, send


def _block_mask(sizes_a, sizes_b) -> np.ndarray:
    """Additive attention mask: 0 inside paired blocks, -1e30 elsewhere."""
    mask = np.full((sum(sizes_a), sum(sizes_b)), -1e30)
    oa = ob = 0
    for n_a, n_b in zip(sizes_a, sizes_b):
        mask[oa : oa + n_a, ob : ob + n_b] = 0.0
        oa += n_a
        ob += n_b
    return mask


def _block_uniform(sizes_a, sizes_b) -> np.ndarray:
    """Row-stochastic weights giving every opposite-block node equal say."""
    w = np.zeros((sum(sizes_a), sum(sizes_b)))
    oa = ob = 0
    for n_a, n_b in zip(sizes_a, sizes_b):
        w[oa : oa + n_a, ob : ob + n_b] = 1.0 / n_b
        oa += n_a
        ob += n_b
    return w


# ---------------------------------------------------------------------------
# the model


class SimilarityModel:
    def __init__(self, config: ModelConfig = ModelConfig()):
        self.config = config
        rng = np.random.default_rng(config.init_seed)
        dims = (config.feature_dim,) + tuple(config.gin_dims)
        self.gin_layers = []
        self.inter_slopes = []
        for i in range(len(config.gin_dims)):
            self.gin_layers.append(
                GinLayerParams(
                    eps=Parameter(f"encoder.layer{i}.eps", np.array([[0.0]])),
                    mlp=_make_mlp(rng, f"encoder.layer{i}.mlp", dims[i], dims[i + 1], dims[i + 1]),
                )
            )
            if i + 1 < len(config.gin_dims):
                self.inter_slopes.append(
                    Parameter(f"encoder.inter{i}.slope", np.array([[0.25]]))
                )
        d = config.gin_dims[-1]
        self.pool_wz = Parameter("pool.wz", _xavier(rng, d, d))
        md = config.match_dim
        hid = config.mlp_hidden
        self.match_init_w = Parameter("matcher.init.w", _xavier(rng, config.feature_dim, md))
        self.match_init_b = Parameter("matcher.init.b", np.zeros((1, md)))
        self.match_msg = _make_mlp(rng, "matcher.msg", 2 * md, hid, md)
        self.match_upd = _make_mlp(rng, "matcher.upd", 3 * md, hid, md)
        self.match_att = _make_mlp(rng, "matcher.att", md, hid, md)
        self.match_inner = _make_mlp(rng, "matcher.inner", md, hid, md)
        self.match_agg = _make_mlp(rng, "matcher.agg", md, hid, md)
        k2 = config.partitions**2
        m = config.fine_pairs
        self.coarse_w = Parameter("fusion.coarse.w", _xavier(rng, k2, 8))
        self.coarse_b = Parameter("fusion.coarse.b", np.zeros((1, 8)))
        self.coarse_slope = Parameter("fusion.coarse.slope", np.array([[0.25]]))
        if m > 0:
            self.fine_w = Parameter("fusion.fine.w", _xavier(rng, m, 8))
            self.fine_b = Parameter("fusion.fine.b", np.zeros((1, 8)))
            self.fine_slope = Parameter("fusion.fine.slope", np.array([[0.25]]))
            self.fine_const = None
        else:
            self.fine_w = self.fine_b = self.fine_slope = None
            self.fine_const = Parameter("fusion.fine.const", np.zeros((1, 8)))
        stack_dims = (16, 8, 4, 2, 1)
        self.stack = []
        for i in range(4):
            w = Parameter(f"fusion.stack{i}.w", _xavier(rng, stack_dims[i], stack_dims[i + 1]))
            b = Parameter(f"fusion.stack{i}.b", np.zeros((1, stack_dims[i + 1])))
            slope = (
                Parameter(f"fusion.stack{i}.slope", np.array([[0.25]])) if i < 3 else None
            )
            self.stack.append((w, b, slope))
        self.prop_steps = 0  # matcher pair-rounds executed, for cost accounting
        self._graph_cache = {}
        self._seg_cache = {}
        self._sel_cache = {}
        names = [p.name for p in self.parameters()]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")

    # -- parameter plumbing

    def parameters(self):
        out = []
        for layer in self.gin_layers:
            out.extend(layer.params())
        out.extend(self.inter_slopes)
        out.append(self.pool_wz)
        out.extend([self.match_init_w, self.match_init_b])
        for mlp in (self.match_msg, self.match_upd, self.match_att, self.match_inner, self.match_agg):
            out.extend(mlp.params())
        out.extend([self.coarse_w, self.coarse_b, self.coarse_slope])
        if self.fine_const is not None:
            out.append(self.fine_const)
        else:
            out.extend([self.fine_w, self.fine_b, self.fine_slope])
        for w, b, slope in self.stack:
            out.append(w)
            out.append(b)
            if slope is not None:
                out.append(slope)
        return out

    def reset_counters(self):
        self.prop_steps = 0

    # -- partitioning and cached structure

    def partition_seed_for(self, g: Graph) -> int:
        return self.config.partition_seed + zlib.crc32(g.id.encode())

    def partition(self, g: Graph, seed: int | None = None) -> PartitionResult:
        if g.n < self.config.partitions:
            raise ValueError(
                f"graph {g.id!r} has {g.n} nodes, fewer than {self.config.partitions} communities"
            )
        if seed is None:
            seed = self.partition_seed_for(g)
        return fluidc(g, self.config.partitions, seed, max_sweeps=self.config.partition_sweeps)

    def _entry(self, g: Graph, partition_cache=None):
        """Per-graph constants: subgraphs, union adjacency, pooling segments.

        Keyed by graph id; an explicit partition in partition_cache wins over
        a previously cached entry if its communities differ.
        """
        key = g.id
        ent = self._graph_cache.get(key) if key else None
        part = None
        if partition_cache is not None and key in partition_cache:
            part = partition_cache[key]
            if ent is not None and ent["communities"] != part.communities:
                ent = None
        if ent is not None:
            return ent
        if part is None:
            part = self.partition(g)
            if partition_cache is not None and key:
                partition_cache[key] = part
        subs = [s for s, _ in extract_subgraphs(g, part.communities)]
        sizes = tuple(s.n for s in subs)
        total = sum(sizes)
        edges = [_edge_endpoints(s) for s in subs]
        ur, us = [], []
        off = 0
        for s, (recv, send) in zip(subs, edges):
            ur.append(recv + off)
            us.append(send + off)
            off += s.n
        ent = {
            "communities": part.communities,
            "subs": subs,
            "sizes": sizes,
            "adj": ad.const(_union_adjacency(subs)),
            "feat": ad.const(np.full((total, self.config.feature_dim), self.config.feature_value)),
            "edges": edges,
            "u_recv": np.concatenate(ur) if ur else np.zeros(0, dtype=np.int64),
            "u_send": np.concatenate(us) if us else np.zeros(0, dtype=np.int64),
        }
        if key:
            self._graph_cache[key] = ent
        return ent

    def _seg_consts(self, sizes):
        key = tuple(sizes)
        ent = self._seg_cache.get(key)
        if ent is None:
            smean, ssum = _segment_mats(key)
            ent = {
                "smean": ad.const(smean),
                "ssum": ad.const(ssum),
                "ssumT": ad.const(ssum.T.copy()),
            }
            self._seg_cache[key] = ent
        return ent

    def _pair_selectors(self, k1: int, k2: int):
        key = (k1, k2)
        ent = self._sel_cache.get(key)
        if ent is None:
            rep = np.zeros((k1 * k2, k1))
            til = np.zeros((k1 * k2, k2))
            idx = np.arange(k1 * k2)
            rep[idx, idx // k2] = 1.0
            til[idx, idx % k2] = 1.0
            ent = (ad.const(rep), ad.const(til))
            self._sel_cache[key] = ent
        return ent

    # -- encoder

    def _encode_stack(self, a_const: Tensor, x: Tensor) -> Tensor:
        one = ad.const(np.ones((1, 1)))
        h = x
        for i, layer in enumerate(self.gin_layers):
            mixed = ad.add(ad.mul(h, ad.add(one, layer.eps)), ad.matmul(a_const, h))
            h = layer.mlp.apply(mixed)
            if i < len(self.inter_slopes):
                h = ad.prelu(h, self.inter_slopes[i])
        return h

    def encode_subgraph(self, g: Graph) -> Tensor:
        """Node embeddings (n, d) from constant inputs through the GIN stack."""
        a = _union_adjacency([g])
        x = Tensor(constant_features(g, self.config.feature_value, self.config.feature_dim))
        return self._encode_stack(ad.const(a), x)

    # -- pooling

    def _pool_segments(self, h: Tensor, sizes) -> Tensor:
        segs = self._seg_consts(sizes)
        if not self.config.pool_attention:
            return ad.matmul(segs["smean"], h)
        z = ad.tanh(ad.matmul(ad.matmul(segs["smean"], h), self.pool_wz))
        znode = ad.matmul(segs["ssumT"], z)
        logits = ad.tsum(ad.mul(h, znode), axis=1, keepdims=True)
        w = ad.logistic(logits)
        return ad.matmul(segs["ssum"], ad.mul(h, w))

    def attention_pool(self, x: Tensor) -> Tensor:
        """Pool node embeddings (n, d) to a (1, d) graph embedding.

        A tanh-transformed mean provides the context; each node contributes
        with a logistic weight of its inner product with that context.  With
        pool_attention off this is a plain mean.
        """
        if x.data.ndim != 2:
            raise ValueError(f"expected (n, d) embeddings, got shape {x.data.shape}")
        return self._pool_segments(x, (x.data.shape[0],))

    # -- coarse interaction

    def coarse_scores(self, subs1, subs2) -> Tensor:
        """k x k matrix of pooled-embedding cosines."""
        e1 = self._pool_segments(
            self._encode_stack(ad.const(_union_adjacency(subs1)), self._const_feats(subs1)),
            tuple(g.n for g in subs1),
        )
        e2 = self._pool_segments(
            self._encode_stack(ad.const(_union_adjacency(subs2)), self._const_feats(subs2)),
            tuple(g.n for g in subs2),
        )
        return self._coarse_from_pooled(e1, e2)

    def _const_feats(self, graphs) -> Tensor:
        total = sum(g.n for g in graphs)
        return ad.const(np.full((total, self.config.feature_dim), self.config.feature_value))

    def _coarse_from_pooled(self, e1: Tensor, e2: Tensor) -> Tensor:
        k1 = e1.data.shape[0]
        k2 = e2.data.shape[0]
        rep, til = self._pair_selectors(k1, k2)
        r1 = ad.matmul(rep, e1)
        r2 = ad.matmul(til, e2)
        return ad.reshape(ad.cosine(r1, r2), (k1, k2))

    # -- fine matcher

    def _side_structs(self, graphs, edge_arrays):
        sizes = tuple(g.n for g in graphs)
        total = sum(sizes)
        recv_parts, send_parts = [], []
        off = 0
        for g, (recv, send) in zip(graphs, edge_arrays):
            if recv.size:
                recv_parts.append(recv + off)
                send_parts.append(send + off)
            off += g.n
        if recv_parts:
            recv = np.concatenate(recv_parts)
            send = np.concatenate(send_parts)
        else:
            recv = send = np.zeros(0, dtype=np.int64)
        return {
            "sizes": sizes,
            "total": total,
            "recv": RowPlan(recv, total),
            "send": RowPlan(send, total),
        }

    def _match_start(self, side) -> Tensor:
        feats = ad.const(
            np.full((side["total"], self.config.feature_dim), self.config.feature_value)
        )
        return ad.affine(feats, self.match_init_w, self.match_init_b)

    def _round_messages(self, h: Tensor, side, zero: Tensor | None = None) -> Tensor:
        if not self.config.within_messages or side["recv"].idx.size == 0:
            if zero is not None:
                return zero
            return ad.const(np.zeros((side["total"], self.config.match_dim)))
        hi = ad.gather_rows(h, side["recv"])
        hj = ad.gather_rows(h, side["send"])
        msg = self.match_msg.apply_cat([hi, hj])
        return ad.scatter_rows(msg, side["recv"])

    def _cross_terms(self, ha: Tensor, hb: Tensor, sizes_a, sizes_b):
        """Attention-weighted difference sums for both sides.

        For node i the summed difference over the opposite subgraph is
        h_i - sum_j a_ij h_j because the attention rows sum to 1, so one
        weighted mean per side suffices.
        """
        if self.config.cross_attention:
            mask = _block_mask(sizes_a, sizes_b)
            logits = ad.matmul(ha, ad.transpose(hb))
            wab = ad.masked_softmax_last(logits, mask)
            wba = ad.masked_softmax_last(ad.transpose(logits), mask.T.copy())
        else:
            wab = ad.const(_block_uniform(sizes_a, sizes_b))
            wba = ad.const(_block_uniform(sizes_b, sizes_a))
        mu_a = ad.sub(ha, ad.matmul(wab, hb))
        mu_b = ad.sub(hb, ad.matmul(wba, ha))
        return mu_a, mu_b

    def _matcher_block(self, side_a, side_b, instrument: bool = True):
        """Run the cross-graph matcher on m stacked subgraph pairs.

        side_a / side_b are dicts from _side_structs over equal-length graph
        lists; pair p compares the p-th graph of each.  Returns per-pair
        (m, d) aggregated embeddings for both sides.
        """
        cfg = self.config
        m = len(side_a["sizes"])
        ha = self._match_start(side_a)
        hb = self._match_start(side_b)
        zero_a = zero_b = None
        if not cfg.cross_messages:
            zero_a = ad.const(np.zeros((side_a["total"], cfg.match_dim)))
            zero_b = ad.const(np.zeros((side_b["total"], cfg.match_dim)))
        for _ in range(cfg.rounds):
            na = self._round_messages(ha, side_a)
            nb = self._round_messages(hb, side_b)
            if cfg.cross_messages:
                mu_a, mu_b = self._cross_terms(ha, hb, side_a["sizes"], side_b["sizes"])
            else:
                mu_a, mu_b = zero_a, zero_b
            ha = self.match_upd.apply_cat([ha, na, mu_a])
            hb = self.match_upd.apply_cat([hb, nb, mu_b])
            if instrument:
                self.prop_steps += m
        return self._aggregate_segments(ha, side_a["sizes"]), self._aggregate_segments(
            hb, side_b["sizes"]
        )

    def _aggregate_segments(self, h: Tensor, sizes) -> Tensor:
        gate = ad.logistic(self.match_att.apply(h))
        val = self.match_inner.apply(h)
        summed = ad.matmul(self._seg_consts(sizes)["ssum"], ad.mul(gate, val))
        return self.match_agg.apply(summed)

    def propagation_step(self, h1: Tensor, h2: Tensor, g1: Graph, g2: Graph):
        """One matcher round on a single subgraph pair with given embeddings."""
        s1 = self._side_structs([g1], [_edge_endpoints(g1)])
        s2 = self._side_structs([g2], [_edge_endpoints(g2)])
        n1 = self._round_messages(h1, s1)
        n2 = self._round_messages(h2, s2)
        if self.config.cross_messages:
            mu1, mu2 = self._cross_terms(h1, h2, s1["sizes"], s2["sizes"])
        else:
            mu1 = ad.const(np.zeros(h1.data.shape))
            mu2 = ad.const(np.zeros(h2.data.shape))
        out1 = self.match_upd.apply_cat([h1, n1, mu1])
        out2 = self.match_upd.apply_cat([h2, n2, mu2])
        self.prop_steps += 1
        return out1, out2

    def aggregate_matched(self, h: Tensor) -> Tensor:
        """Gated aggregation of matched node embeddings to one (1, d) row."""
        return self._aggregate_segments(h, (h.data.shape[0],))

    def fine_score(self, sub1: Graph, sub2: Graph) -> Tensor:
        """Matched-embedding cosine for one subgraph pair, scalar tensor."""
        sa = self._side_structs([sub1], [_edge_endpoints(sub1)])
        sb = self._side_structs([sub2], [_edge_endpoints(sub2)])
        agg_a, agg_b = self._matcher_block(sa, sb)
        return ad.reshape(ad.cosine(agg_a, agg_b), ())

    # -- fusion

    def fuse(self, coarse_vec: Tensor, fine_vec: Tensor | None) -> Tensor:
        """Map interaction vectors to the final (0, 1) similarity.

        coarse_vec holds the k*k coarse cosines (any consistent order; a
        descending value sort is applied so the head sees an
        orientation-independent view).  fine_vec holds the m fine scores in
        selection order, or None when the fine branch is disabled, in which
        case a learned constant replaces the fine summary.
        """
        k2 = self.config.partitions**2
        if coarse_vec.data.size != k2:
            raise ValueError(f"expected {k2} coarse scores, got {coarse_vec.data.size}")
        row = ad.reshape(coarse_vec, (1, k2))
        perm = np.argsort(-row.data.ravel(), kind="stable")
        pmat = np.zeros((k2, k2))
        pmat[perm, np.arange(k2)] = 1.0
        sorted_row = ad.matmul(row, ad.const(pmat))
        coarse_feat = ad.prelu(ad.affine(sorted_row, self.coarse_w, self.coarse_b), self.coarse_slope)
        m = self.config.fine_pairs
        if m == 0:
            if fine_vec is not None:
                raise ValueError("fine_vec must be None when fine_pairs == 0")
            fine_feat = self.fine_const
        else:
            if fine_vec is None or fine_vec.data.size != m:
                raise ValueError(f"expected {m} fine scores")
            fine_feat = ad.prelu(
                ad.affine(ad.reshape(fine_vec, (1, m)), self.fine_w, self.fine_b),
                self.fine_slope,
            )
        h = ad.concat([coarse_feat, fine_feat], axis=1)
        for w, b, slope in self.stack:
            h = ad.affine(h, w, b)
            if slope is not None:
                h = ad.prelu(h, slope)
        return ad.logistic(h)

    # -- full forward

    def forward(self, g1: Graph, g2: Graph, partition_cache=None, return_details: bool = False):
        """Similarity score for a graph pair as a (1, 1) tensor in (0, 1)."""
        cfg = self.config
        ent1 = self._entry(g1, partition_cache)
        ent2 = self._entry(g2, partition_cache)
        e1 = self._pool_segments(self._encode_stack(ent1["adj"], ent1["feat"]), ent1["sizes"])
        e2 = self._pool_segments(self._encode_stack(ent2["adj"], ent2["feat"]), ent2["sizes"])
        cvec = self._coarse_from_pooled(e1, e2)  # (k, k)
        flat = ad.reshape(cvec, (cfg.partitions**2,))
        if cfg.fine_pairs > 0:
            selected = select_top_m(cvec.data, cfg.fine_pairs)
            side_a = self._side_structs(
                [ent1["subs"][i] for i, _ in selected], [ent1["edges"][i] for i, _ in selected]
            )
            side_b = self._side_structs(
                [ent2["subs"][j] for _, j in selected], [ent2["edges"][j] for _, j in selected]
            )
            agg_a, agg_b = self._matcher_block(side_a, side_b)
            fine_vec = ad.cosine(agg_a, agg_b)
        else:
            selected = []
            fine_vec = None
        score = self.fuse(flat, fine_vec)
        if return_details:
            return score, {
                "coarse": cvec.data.copy(),
                "selected": selected,
                "fine": None if fine_vec is None else fine_vec.data.copy(),
            }
        return score

    def score(self, g1: Graph, g2: Graph, partition_cache=None) -> float:
        """Forward pass without recording, as a plain float."""
        return self.forward(g1, g2, partition_cache).data.item()

    # -- batched forward over many pairs

    def forward_batch(self, pairs, partition_cache=None) -> Tensor:
        """Scores for a list of graph pairs as one (len(pairs), 1) tensor.

        Same computation as per-pair forward with every stage stacked: all
        distinct graphs are encoded as one disjoint union, pooling and the
        coarse cosines go through index plans, and the selected fine pairs
        run through the matcher as padded equal-size blocks.  Differs from
        the sequential path only by floating-point summation order.  Graphs
        must carry non-empty ids (they key the structure cache).
        """
        if not pairs:
            raise ValueError("empty batch")
        cfg = self.config
        k = cfg.partitions
        k2 = k * k
        pos = {}
        ents = []
        for g1, g2 in pairs:
            for g in (g1, g2):
                if not g.id:
                    raise ValueError("batched scoring needs graphs with ids")
                if g.id not in pos:
                    pos[g.id] = len(ents)
                    ents.append(self._entry(g, partition_cache))
        node_base = np.zeros(len(ents), dtype=np.int64)
        total = 0
        for i, ent in enumerate(ents):
            node_base[i] = total
            total += sum(ent["sizes"])
        nseg = k * len(ents)

        # one GIN pass over the union of every subgraph of every graph
        recv = np.concatenate([e["u_recv"] + node_base[i] for i, e in enumerate(ents)])
        send = np.concatenate([e["u_send"] + node_base[i] for i, e in enumerate(ents)])
        plan_recv = RowPlan(recv, total)
        plan_send = RowPlan(send, total)
        seg_ids = np.concatenate(
            [np.repeat(k * i + np.arange(k), e["sizes"]) for i, e in enumerate(ents)]
        )
        seg_plan = RowPlan(seg_ids, nseg)
        sizes_col = np.concatenate([e["sizes"] for e in ents]).astype(np.float64)[:, None]
        inv_size = ad.const(1.0 / sizes_col)
        h = ad.const(np.full((total, cfg.feature_dim), cfg.feature_value))
        one = ad.const(np.ones((1, 1)))
        for i, layer in enumerate(self.gin_layers):
            nbr = ad.scatter_rows(ad.gather_rows(h, plan_send), plan_recv)
            mixed = ad.add(ad.mul(h, ad.add(one, layer.eps)), nbr)
            h = layer.mlp.apply(mixed)
            if i < len(self.inter_slopes):
                h = ad.prelu(h, self.inter_slopes[i])

        if cfg.pool_attention:
            mean = ad.mul(ad.scatter_rows(h, seg_plan), inv_size)
            z = ad.tanh(ad.matmul(mean, self.pool_wz))
            w = ad.logistic(ad.tsum(ad.mul(h, ad.gather_rows(z, seg_plan)), axis=1, keepdims=True))
            pooled = ad.scatter_rows(ad.mul(h, w), seg_plan)
        else:
            pooled = ad.mul(ad.scatter_rows(h, seg_plan), inv_size)

        # coarse cosines for all k*k subgraph pairs of every graph pair
        P = len(pairs)
        grid = np.arange(k2)
        rep_idx = np.empty(P * k2, dtype=np.int64)
        til_idx = np.empty(P * k2, dtype=np.int64)
        for p, (g1, g2) in enumerate(pairs):
            rep_idx[p * k2 : (p + 1) * k2] = k * pos[g1.id] + grid // k
            til_idx[p * k2 : (p + 1) * k2] = k * pos[g2.id] + grid % k
        r1 = ad.gather_rows(pooled, RowPlan(rep_idx, nseg))
        r2 = ad.gather_rows(pooled, RowPlan(til_idx, nseg))
        cmat = ad.reshape(ad.cosine(r1, r2), (P, k2))

        m = cfg.fine_pairs
        fine_mat = None
        if m > 0:
            sels = [select_top_m(cmat.data[p].reshape(k, k), m) for p in range(P)]
            fine_mat = ad.reshape(self._batched_matcher(pairs, pos, ents, sels), (P, m))

        return self._fuse_batch(cmat, fine_mat)

    _MATCH_BUCKETS = 10  # padded size groups; more groups = less padding waste

    def _batched_matcher(self, pairs, pos, ents, sels) -> Tensor:
        """Fine scores for every selected subgraph pair, stacked and padded.

        One block is one selected pair.  Community sizes are very uneven, so
        blocks are sorted by size and split into near-equal groups; each
        group pads to its own per-side maximum (real nodes first, zero-weight
        padding after) and runs as one stack of equal-size attention
        problems.  Returns the (num_blocks,) cosine vector in per-pair
        selection order.
        """
        m = self.config.fine_pairs
        B = len(pairs) * m
        na = np.empty(B, dtype=np.int64)
        nb = np.empty(B, dtype=np.int64)
        edges_a, edges_b = [], []
        b = 0
        for p, (g1, g2) in enumerate(pairs):
            e1 = ents[pos[g1.id]]
            e2 = ents[pos[g2.id]]
            for i, j in sels[p]:
                na[b] = e1["sizes"][i]
                nb[b] = e2["sizes"][j]
                edges_a.append(e1["edges"][i])
                edges_b.append(e2["edges"][j])
                b += 1
        order = np.argsort(np.maximum(na, nb), kind="stable")
        groups = np.array_split(order, min(self._MATCH_BUCKETS, B))
        agg_a_parts, agg_b_parts = [], []
        for grp in groups:
            if grp.size == 0:
                continue
            ga, gb = self._matcher_group(
                na[grp], nb[grp], [edges_a[i] for i in grp], [edges_b[i] for i in grp]
            )
            agg_a_parts.append(ga)
            agg_b_parts.append(gb)
        agg_a = self.match_agg.apply(ad.concat(agg_a_parts, axis=0))
        agg_b = self.match_agg.apply(ad.concat(agg_b_parts, axis=0))
        fine = ad.cosine(agg_a, agg_b)
        inv = np.empty(B, dtype=np.int64)
        inv[order] = np.arange(B)
        restored = ad.gather_rows(ad.reshape(fine, (B, 1)), RowPlan(inv, B))
        return ad.reshape(restored, (B,))

    def _matcher_group(self, na, nb, edges_a, edges_b):
        """Matcher rounds on one group of blocks padded to a common size.

        Returns per-block gated sums for both sides, before the shared
        aggregation MLP.
        """
        cfg = self.config
        md = cfg.match_dim
        Bg = na.size
        side_a = self._padded_side(na, edges_a)
        side_b = self._padded_side(nb, edges_b)
        if cfg.cross_attention:
            pair_ok = side_a["valid"][:, :, None] & side_b["valid"][:, None, :]
            mask_ab = np.where(pair_ok, 0.0, -1e30)
            mask_ba = np.ascontiguousarray(mask_ab.swapaxes(-1, -2))
        elif cfg.cross_messages:
            pair_ok = side_a["valid"][:, :, None] & side_b["valid"][:, None, :]
            uab = ad.const(np.where(pair_ok, 1.0, 0.0) / nb[:, None, None])
            uba = ad.const(
                np.ascontiguousarray(np.where(pair_ok, 1.0, 0.0).swapaxes(-1, -2))
                / na[:, None, None]
            )
        ha = self._match_start(side_a)
        hb = self._match_start(side_b) if side_b["total"] != side_a["total"] else ha
        zero_a = zero_b = None
        if not (cfg.cross_messages and cfg.within_messages):
            zero_a = ad.const(np.zeros((side_a["total"], md)))
            zero_b = ad.const(np.zeros((side_b["total"], md)))
        for _ in range(cfg.rounds):
            na_msg = self._round_messages(ha, side_a, zero_a)
            nb_msg = self._round_messages(hb, side_b, zero_b)
            if cfg.cross_messages:
                ha3 = ad.reshape(ha, (Bg, side_a["pad"], md))
                hb3 = ad.reshape(hb, (Bg, side_b["pad"], md))
                if cfg.cross_attention:
                    logits = ad.bmatmul(ha3, ad.btranspose(hb3))
                    wab = ad.masked_softmax_last(logits, mask_ab)
                    wba = ad.masked_softmax_last(ad.btranspose(logits), mask_ba)
                else:
                    wab, wba = uab, uba
                mu_a = ad.reshape(ad.sub(ha3, ad.bmatmul(wab, hb3)), (side_a["total"], md))
                mu_b = ad.reshape(ad.sub(hb3, ad.bmatmul(wba, ha3)), (side_b["total"], md))
            else:
                mu_a, mu_b = zero_a, zero_b
            ha = self.match_upd.apply_cat([ha, na_msg, mu_a])
            hb = self.match_upd.apply_cat([hb, nb_msg, mu_b])
            self.prop_steps += Bg
        return self._gated_sums(ha, side_a), self._gated_sums(hb, side_b)

    @staticmethod
    def _padded_side(sizes, edge_arrays):
        """Slot layout for one side of a block group: pad slots per block."""
        Bg = sizes.size
        pad = int(sizes.max())
        total = Bg * pad
        recv_parts, send_parts = [], []
        for b, (recv, send) in enumerate(edge_arrays):
            if recv.size:
                recv_parts.append(recv + b * pad)
                send_parts.append(send + b * pad)
        if recv_parts:
            recv = np.concatenate(recv_parts)
            send = np.concatenate(send_parts)
        else:
            recv = send = np.zeros(0, dtype=np.int64)
        valid = np.arange(pad)[None, :] < sizes[:, None]
        return {
            "pad": pad,
            "total": total,
            "recv": RowPlan(recv, total),
            "send": RowPlan(send, total),
            "valid": valid,
            "pad01": ad.const(valid.astype(np.float64).reshape(total, 1)),
            "block_plan": RowPlan(np.repeat(np.arange(Bg), pad), Bg),
        }

    def _gated_sums(self, h: Tensor, side) -> Tensor:
        gate = ad.logistic(self.match_att.apply(h))
        val = self.match_inner.apply(h)
        return ad.scatter_rows(ad.mul(ad.mul(gate, val), side["pad01"]), side["block_plan"])

    def _fuse_batch(self, cmat: Tensor, fine_mat: Tensor | None) -> Tensor:
        cfg = self.config
        P, k2 = cmat.data.shape
        order = np.argsort(-cmat.data, axis=1, kind="stable")
        flat_idx = (np.arange(P)[:, None] * k2 + order).ravel()
        flat = ad.reshape(cmat, (P * k2, 1))
        sorted_rows = ad.reshape(ad.gather_rows(flat, RowPlan(flat_idx, P * k2)), (P, k2))
        coarse_feat = ad.prelu(ad.affine(sorted_rows, self.coarse_w, self.coarse_b), self.coarse_slope)
        if cfg.fine_pairs == 0:
            fine_feat = ad.add(ad.const(np.zeros((P, 8))), self.fine_const)
        else:
            fine_feat = ad.prelu(ad.affine(fine_mat, self.fine_w, self.fine_b), self.fine_slope)
        h = ad.concat([coarse_feat, fine_feat], axis=1)
        for w, b, slope in self.stack:
            h = ad.affine(h, w, b)
            if slope is not None:
                h = ad.prelu(h, slope)
        return ad.logistic(h)

    def score_batch(self, pairs, partition_cache=None, chunk: int = 128) -> np.ndarray:
        """Scores for many pairs as a float array, in chunks, no recording."""
        out = np.empty(len(pairs))
        for lo in range(0, len(pairs), chunk):
            part = pairs[lo : lo + chunk]
            if part:
                out[lo : lo + len(part)] = self.forward_batch(part, partition_cache).data.ravel()
        return out


# ---------------------------------------------------------------------------
# free-function form of the encoder layer, for direct inspection


def gin_layer(features: Tensor, g: Graph, layer: GinLayerParams) -> Tensor:
    """Apply one GIN convolution to per-node features on a single graph."""
    if features.data.ndim != 2 or features.data.shape[0] != g.n:
        raise ValueError(
            f"features must be (n, d) with n={g.n}, got shape {features.data.shape}"
        )
    a = ad.const(_union_adjacency([g]))
    one = ad.const(np.ones((1, 1)))
    mixed = ad.add(ad.mul(features, ad.add(one, layer.eps)), ad.matmul(a, features))
    return layer.mlp.apply(mixed)


# ---------------------------------------------------------------------------
# checkpoints


CHECKPOINT_VERSION = 1


def save_params(model: SimilarityModel) -> bytes:
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": json.loads(config_to_json(model.config)),
        "params": {
            p.name: {"shape": list(p.data.shape), "values": p.data.ravel().tolist()}
            for p in model.parameters()
        },
    }
    return json.dumps(doc, sort_keys=True).encode()


def load_params(model: SimilarityModel, data) -> None:
    doc = json.loads(data)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    saved = doc["params"]
    own = {p.name: p for p in model.parameters()}
    missing = sorted(set(own) - set(saved))
    extra = sorted(set(saved) - set(own))
    if missing or extra:
        raise ValueError(f"parameter name mismatch: missing {missing[:3]}, extra {extra[:3]}")
    for name, p in own.items():
        want = tuple(saved[name]["shape"])
        if want != p.data.shape:
            raise ValueError(f"shape mismatch for {name}: {want} vs {p.data.shape}")
        p.data = np.array(saved[name]["values"], dtype=np.float64).reshape(want)
