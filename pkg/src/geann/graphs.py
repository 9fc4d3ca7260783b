"""Immutable sparse graphs, top-k pruning, and hop-limited subgraph extraction.

Edge direction convention: an edge ``(src, dst, weight)`` means ``dst``
aggregates messages FROM ``src``. Top-k pruning therefore keeps each node's k
strongest in-edges, which bounds the fan-in of every aggregation layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EdgeListError(ValueError):
    """Malformed edge data; messages include the offending line when parsing."""


class SparseGraph:
    """Weighted directed edge list over ``num_nodes`` nodes.

    Edges are normalized to (dst, src) order internally and indexed by
    destination, so per-node in-edges are contiguous slices. Instances are
    immutable after construction and safe to share across threads.
    """

    def __init__(self, num_nodes: int, src, dst, weight):
        if num_nodes < 1:
            raise EdgeListError(f"graph needs at least one node, got {num_nodes}")
        src = np.asarray(src, dtype=np.int64).reshape(-1)
        dst = np.asarray(dst, dtype=np.int64).reshape(-1)
        weight = np.asarray(weight, dtype=np.float64).reshape(-1)
        if not (src.shape == dst.shape == weight.shape):
            raise EdgeListError("src, dst, weight must have equal lengths")
        if src.size:
            if src.min() < 0 or src.max() >= num_nodes:
                raise EdgeListError("src node id out of range")
            if dst.min() < 0 or dst.max() >= num_nodes:
                raise EdgeListError("dst node id out of range")
            if not np.all(np.isfinite(weight)) or weight.min() < 0:
                raise EdgeListError("edge weights must be finite and non-negative")
        order = np.lexsort((src, dst))
        src, dst, weight = src[order], dst[order], weight[order]
        if src.size > 1:
            same = (src[1:] == src[:-1]) & (dst[1:] == dst[:-1])
            if same.any():
                i = int(np.argmax(same))
                raise EdgeListError(
                    f"duplicate edge ({src[i]}, {dst[i]}) in graph"
                )
        self.num_nodes = int(num_nodes)
        self.src = src
        self.dst = dst
        self.weight = weight
        # CSR by destination: in-edges of node v live in [in_ptr[v], in_ptr[v+1])
        self.in_ptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.add.at(self.in_ptr, dst + 1, 1)
        np.cumsum(self.in_ptr, out=self.in_ptr)
        for a in (self.src, self.dst, self.weight, self.in_ptr):
            a.setflags(write=False)

    @property
    def num_edges(self) -> int:
        return self.src.size

    def in_edges(self, node: int):
        """(sources, weights) of the in-edges of ``node``, ascending by source."""
        lo, hi = self.in_ptr[node], self.in_ptr[node + 1]
        return self.src[lo:hi], self.weight[lo:hi]

    def in_degrees(self) -> np.ndarray:
        return np.diff(self.in_ptr)

    def max_in_degree(self) -> int:
        return int(self.in_degrees().max()) if self.num_nodes else 0

    def in_weight_sums(self) -> np.ndarray:
        sums = np.zeros(self.num_nodes, dtype=np.float64)
        np.add.at(sums, self.dst, self.weight)
        return sums

    def __eq__(self, other):
        if not isinstance(other, SparseGraph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
            and np.array_equal(self.weight, other.weight)
        )

    def __repr__(self):
        return f"SparseGraph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


@dataclass
class SubgraphBatch:
    """Hop-limited neighborhood of a seed set, with everything a GCN stack needs.

    ``extended`` lists the seeds first, then newly reached nodes per hop.
    ``degrees`` carries the FULL graph's self-loop-augmented in-weight sums
    for the extended nodes; normalization built from subgraph-local degrees
    would change boundary coefficients and break the guarantee that seed
    outputs match the full-graph computation.
    """

    seeds: np.ndarray
    extended: np.ndarray
    edge_src: np.ndarray          # global ids
    edge_dst: np.ndarray          # global ids
    edge_weight: np.ndarray
    local_index: dict = field(repr=False)
    degrees: np.ndarray = field(repr=False)
    _local: tuple | None = field(repr=False, default=None, compare=False)

    @property
    def num_extended(self) -> int:
        return self.extended.size

    def local_edges(self):
        if self._local is None:
            src = np.array([self.local_index[int(s)] for s in self.edge_src], dtype=np.int64)
            dst = np.array([self.local_index[int(d)] for d in self.edge_dst], dtype=np.int64)
            self._local = (src, dst)
        return self._local


@dataclass
class AggCoefficients:
    """Edge and self-loop multipliers for one normalized aggregation pass."""

    src: np.ndarray
    dst: np.ndarray
    coeff: np.ndarray
    self_coeff: np.ndarray


def load_edge_list(source) -> SparseGraph:
    """Parse the edge-list format: first line num_nodes, then ``src,dst,weight``."""
    if hasattr(source, "read"):
        lines = source.read().splitlines()
    else:
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    if not lines:
        raise EdgeListError("line 1: empty edge-list input")
    try:
        num_nodes = int(lines[0].strip())
    except ValueError:
        raise EdgeListError(f"line 1: expected node count, got {lines[0]!r}") from None
    src, dst, weight = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise EdgeListError(f"line {lineno}: expected 'src,dst,weight', got {line!r}")
        try:
            s, d, w = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise EdgeListError(f"line {lineno}: could not parse {line!r}") from None
        if not 0 <= s < num_nodes or not 0 <= d < num_nodes:
            raise EdgeListError(f"line {lineno}: node id out of range in {line!r}")
        if not np.isfinite(w) or w < 0:
            raise EdgeListError(f"line {lineno}: weight must be finite and non-negative")
        src.append(s)
        dst.append(d)
        weight.append(w)
    try:
        return SparseGraph(num_nodes, src, dst, weight)
    except EdgeListError as exc:
        raise EdgeListError(str(exc)) from None


def save_edge_list(g: SparseGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{g.num_nodes}\n")
        for s, d, w in zip(g.src, g.dst, g.weight):
            fh.write(f"{int(s)},{int(d)},{float(w)!r}\n")


def identity_graph(n: int) -> SparseGraph:
    """Self-loops only; aggregation over it reduces to a per-node map."""
    if n < 1:
        raise EdgeListError(f"identity graph needs n >= 1, got {n}")
    ids = np.arange(n, dtype=np.int64)
    return SparseGraph(n, ids, ids, np.ones(n))


def random_graph(n: int, k: int, seed: int) -> SparseGraph:
    """Each node draws k distinct in-neighbors uniformly from the other nodes."""
    if not 1 <= k < n:
        raise EdgeListError(f"random graph needs 1 <= k < n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    src = np.empty(n * k, dtype=np.int64)
    dst = np.empty(n * k, dtype=np.int64)
    for i in range(n):
        picks = rng.choice(n - 1, size=k, replace=False)
        picks = np.where(picks >= i, picks + 1, picks)
        src[i * k : (i + 1) * k] = picks
        dst[i * k : (i + 1) * k] = i
    return SparseGraph(n, src, dst, np.ones(n * k))


def top_k_sparsify(g: SparseGraph, k: int) -> SparseGraph:
    """Keep each node's k highest-weight in-edges; ties go to the lower src id."""
    if k < 1:
        raise EdgeListError(f"top-k needs k >= 1, got {k}")
    keep = []
    for v in range(g.num_nodes):
        lo, hi = g.in_ptr[v], g.in_ptr[v + 1]
        if hi - lo <= k:
            keep.append(np.arange(lo, hi))
            continue
        w = g.weight[lo:hi]
        # base slice is ascending by src, so a stable sort resolves ties that way
        order = np.argsort(-w, kind="stable")[:k]
        keep.append(lo + order)
    idx = np.concatenate(keep) if keep else np.empty(0, dtype=np.int64)
    return SparseGraph(g.num_nodes, g.src[idx], g.dst[idx], g.weight[idx])


def self_loop_degrees(g: SparseGraph) -> np.ndarray:
    """Row sums of the adjacency with an injected unit self-loop per node."""
    return 1.0 + g.in_weight_sums()


def hop_subgraph(g: SparseGraph, seeds, hops: int) -> SubgraphBatch:
    """Nodes and edges that can influence the seeds within ``hops`` aggregation layers.

    Traversal runs against message flow (from a destination to its sources).
    The induced edge set keeps every edge whose destination lies within
    ``hops - 1`` reverse hops of a seed, which is exactly the set read by a
    ``hops``-layer aggregation stack when producing seed outputs.
    """
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1)
    if seeds.size == 0:
        raise EdgeListError("seed set must be non-empty")
    if seeds.min() < 0 or seeds.max() >= g.num_nodes:
        raise EdgeListError("seed node id out of range")
    if np.unique(seeds).size != seeds.size:
        raise EdgeListError("seed node ids must be distinct")
    if hops < 0:
        raise EdgeListError(f"hop count must be >= 0, got {hops}")

    dist = np.full(g.num_nodes, -1, dtype=np.int64)
    dist[seeds] = 0
    pieces = [seeds]
    in_frontier = np.zeros(g.num_nodes, dtype=bool)
    frontier = seeds
    for hop in range(1, hops + 1):
        if frontier.size == 0:
            break
        in_frontier[frontier] = True
        candidates = g.src[in_frontier[g.dst]]
        in_frontier[frontier] = False
        fresh = candidates[dist[candidates] < 0]
        if fresh.size == 0:
            frontier = fresh
            continue
        # keep the first appearance of each newly reached node
        uniq, first = np.unique(fresh, return_index=True)
        frontier = uniq[np.argsort(first, kind="stable")]
        dist[frontier] = hop
        pieces.append(frontier)

    extended = np.concatenate(pieces)
    edge_mask = (dist[g.dst] >= 0) & (dist[g.dst] <= hops - 1)
    local_pos = np.full(g.num_nodes, -1, dtype=np.int64)
    local_pos[extended] = np.arange(extended.size)
    e_src = g.src[edge_mask]
    e_dst = g.dst[edge_mask]
    return SubgraphBatch(
        seeds=seeds,
        extended=extended,
        edge_src=e_src,
        edge_dst=e_dst,
        edge_weight=g.weight[edge_mask],
        local_index={int(v): i for i, v in enumerate(extended)},
        degrees=self_loop_degrees(g)[extended],
        _local=(local_pos[e_src], local_pos[e_dst]),
    )


def full_batch(g: SparseGraph) -> SubgraphBatch:
    """A SubgraphBatch covering the whole graph, every node a seed.

    With every node a seed, depth no longer matters: all edges are induced,
    so the same batch serves aggregation stacks of any depth.
    """
    return hop_subgraph(g, np.arange(g.num_nodes), 1)


def gcn_coefficients(graph_or_batch) -> AggCoefficients:
    """Symmetric-normalized aggregation multipliers with injected self-loops.

    For adjacency A (A[i, j] = weight of edge j -> i) the pass computes
    D^{-1/2} (A + I) D^{-1/2} with D the diagonal row sums of A + I. Degrees
    always come from the full graph, also for subgraph batches.
    """
    if isinstance(graph_or_batch, SparseGraph):
        g = graph_or_batch
        deg = self_loop_degrees(g)
        coeff = g.weight / np.sqrt(deg[g.dst] * deg[g.src])
        return AggCoefficients(
            src=g.src.copy(), dst=g.dst.copy(), coeff=coeff, self_coeff=1.0 / deg
        )
    batch: SubgraphBatch = graph_or_batch
    src, dst = batch.local_edges()
    deg = batch.degrees
    coeff = batch.edge_weight / np.sqrt(deg[dst] * deg[src])
    return AggCoefficients(src=src, dst=dst, coeff=coeff, self_coeff=1.0 / deg)
