"""Data-driven graph construction and neighbor stability analysis.

Two builders produce :class:`~geann.graphs.SparseGraph` instances: a kNN
graph over embedding rows scored by absolute Pearson correlation, and an
attribute co-occurrence graph scored by shared-attribute counts. The
analysis half measures how well kNN neighbor sets survive retraining.
"""

from __future__ import annotations

import numpy as np

from .graphs import SparseGraph

# AttributeMembership: dict node id -> set of attribute ids.
# NeighborRuns: list over runs of dict node id -> ordered neighbor id list.


def pearson_knn_graph(emb: np.ndarray, k: int) -> SparseGraph:
    """k nearest neighbors per row under absolute Pearson correlation.

    Edges run neighbor -> node (the node aggregates from its neighbors) and
    carry the absolute correlation as weight. Score ties break toward the
    lower neighbor id. A zero-variance row has no defined correlation and is
    rejected by name.
    """
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 2:
        raise ValueError(f"embedding matrix must be 2-D with at least 2 rows, got {emb.shape}")
    if not np.all(np.isfinite(emb)):
        raise ValueError("embedding matrix contains non-finite values")
    n, d = emb.shape
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < number of rows, got k={k}, n={n}")
    centered = emb - emb.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered * centered).sum(axis=1))
    dead = np.flatnonzero(norms == 0.0)
    if dead.size:
        raise ValueError(f"row {int(dead[0])} has zero variance; correlation is undefined")
    z = centered / norms[:, None]
    corr = np.abs(z @ z.T)
    np.clip(corr, 0.0, 1.0, out=corr)

    src = np.empty(n * k, dtype=np.int64)
    dst = np.empty(n * k, dtype=np.int64)
    weight = np.empty(n * k, dtype=np.float64)
    for i in range(n):
        scores = corr[i].copy()
        scores[i] = -np.inf
        top = np.argsort(-scores, kind="stable")[:k]
        src[i * k : (i + 1) * k] = top
        dst[i * k : (i + 1) * k] = i
        weight[i * k : (i + 1) * k] = scores[top]
    return SparseGraph(n, src, dst, weight)


def cooccurrence_graph(members: dict, n: int, k: int) -> SparseGraph:
    """Top-k in-edges per node weighted by shared attribute counts.

    ``members`` maps node id to its attribute id set. Pairs with no shared
    attribute get no edge; count ties break toward the lower node id.
    """
    if k < 1:
        raise ValueError(f"need k >= 1, got {k}")
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    attr_to_nodes: dict[int, list[int]] = {}
    for node, attrs in members.items():
        if not 0 <= node < n:
            raise ValueError(f"node id {node} out of range [0, {n})")
        for a in attrs:
            attr_to_nodes.setdefault(a, []).append(node)
    counts = np.zeros((n, n), dtype=np.int64)
    for nodes in attr_to_nodes.values():
        idx = np.asarray(sorted(nodes), dtype=np.int64)
        counts[np.ix_(idx, idx)] += 1
    np.fill_diagonal(counts, 0)

    src, dst, weight = [], [], []
    for i in range(n):
        row = counts[i]
        nz = np.flatnonzero(row)
        if nz.size == 0:
            continue
        order = np.argsort(-row[nz], kind="stable")[:k]
        for j in nz[order]:
            src.append(j)
            dst.append(i)
            weight.append(float(row[j]))
    return SparseGraph(n, src, dst, weight)


def _check_run(run: dict, node: int, k: int, run_idx: int) -> frozenset:
    if node not in run:
        raise ValueError(f"run {run_idx} has no neighbor list for node {node}")
    neigh = list(run[node])
    if len(neigh) != k or len(set(neigh)) != k:
        raise ValueError(
            f"run {run_idx} lists {len(neigh)} neighbors for node {node}, expected {k} distinct"
        )
    if node in neigh:
        raise ValueError(f"run {run_idx} lists node {node} as its own neighbor")
    return frozenset(neigh)


def knn_stability(runs: list, node: int, k: int) -> float:
    """Fraction of the node's k neighbors shared by every run.

    1.0 means the neighbor set is identical across runs; pairwise disjoint
    sets give 0.0.
    """
    if not runs:
        raise ValueError("need at least one run")
    sets = [_check_run(run, node, k, r) for r, run in enumerate(runs)]
    common = frozenset.intersection(*sets)
    return len(common) / k


def stability_table(runs: list, k: int) -> list[tuple[int, float]]:
    """Per-node stability over the node ids present in the first run."""
    if not runs:
        raise ValueError("need at least one run")
    return [(node, knn_stability(runs, node, k)) for node in sorted(runs[0])]


def random_stability_baseline(n, k, num_runs, trials, seed):
    """Monte-Carlo stability of uniformly drawn neighbor sets.

    Each run draws k of n candidates without replacement; the expected
    stability of independent draws is (k / n) ** (num_runs - 1). Returns the
    sample mean and population standard deviation over ``trials``.
    """
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if trials < 1 or num_runs < 1:
        raise ValueError("need trials >= 1 and num_runs >= 1")
    rng = np.random.default_rng(seed)
    samples = np.empty(trials, dtype=np.float64)
    population = np.arange(n)
    for t in range(trials):
        common = None
        for _ in range(num_runs):
            picks = frozenset(rng.choice(population, size=k, replace=False).tolist())
            common = picks if common is None else common & picks
        samples[t] = len(common) / k
    return float(samples.mean()), float(samples.std())


def neighbor_score_stats(g: SparseGraph, k: int) -> list[tuple[int, float, float]]:
    """Per-node mean and population std of the top-k in-edge weights.

    Nodes with no in-edges are omitted; nodes with fewer than k in-edges use
    all of them.
    """
    if k < 1:
        raise ValueError(f"need k >= 1, got {k}")
    out = []
    for v in range(g.num_nodes):
        srcs, weights = g.in_edges(v)
        if weights.size == 0:
            continue
        if weights.size > k:
            order = np.argsort(-weights, kind="stable")[:k]
            weights = weights[order]
        out.append((v, float(weights.mean()), float(weights.std())))
    return out


def neighbor_sets_from_graph(g: SparseGraph, k: int) -> dict[int, list[int]]:
    """Read a kNN run off a graph: each node's in-edge sources, best first.

    Every node must have exactly k in-edges, as produced by the kNN builder.
    """
    run: dict[int, list[int]] = {}
    for v in range(g.num_nodes):
        srcs, weights = g.in_edges(v)
        if srcs.size != k:
            raise ValueError(f"node {v} has {srcs.size} in-edges, expected {k}")
        order = np.argsort(-weights, kind="stable")
        run[v] = [int(s) for s in srcs[order]]
    return run


def load_membership_csv(source) -> dict[int, set[int]]:
    """Parse ``node_id,attribute_id`` pairs, one per line."""
    if hasattr(source, "read"):
        lines = source.read().splitlines()
    else:
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    members: dict[int, set[int]] = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'node_id,attribute_id', got {line!r}")
        try:
            node, attr = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError(f"line {lineno}: could not parse {line!r}") from None
        members.setdefault(node, set()).add(attr)
    return members


def save_membership_csv(members: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for node in sorted(members):
            for attr in sorted(members[node]):
                fh.write(f"{node},{attr}\n")
