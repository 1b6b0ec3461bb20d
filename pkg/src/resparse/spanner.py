"""Exponential-shift clustering, probabilistic spanners, and spanner-peeling
leverage estimation.

Clustering: every vertex draws an Exp(beta) start-time shift (resampled
above a clamp so the diameter certificate is deterministic) and a shifted
unit-weight sweep assigns each vertex to the source minimizing
hop_dist(u, v) - delta_u. The parent pointers of the winning sweep form one
BFS tree per cluster.

Spanners: edges are bucketed by length scale i = floor(log2 l); each bucket
is clustered as an unweighted graph; the certifying BFS trees, grouped by
i mod t, are composed with minimum spanning forests (Kruskal on length).
Each edge's endpoints land in a common cluster with probability >= 2/3, and
the composed forest then certifies a short alternate path, so each edge has
stretch O(log n) with probability at least 1/2.

Peeling: repeatedly remove a spanner from the graph; edges left after k
rounds have many edge-disjoint short alternate paths, so resistors in
series/parallel bound their leverage by 1/alpha. Spanner edges get 1.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .graphs import WeightedGraph
from .linalg import LeverageEstimates

__all__ = [
    "ClusterPartition",
    "Forest",
    "SpannerForest",
    "SpannerPeel",
    "STRETCH_CONSTANT",
    "check_mod_t_diameter_induction",
    "default_forest_count",
    "est_cluster",
    "prob_spanner",
    "spanner_estimate",
    "spanner_estimate_detailed",
    "write_spanner_forest",
]

DEFAULT_C0 = 4.0
DEFAULT_CLUSTER_BETA = 1.0 / 3.0
DEFAULT_CK = 3.0
# Frozen stretch multiple: a within-cluster edge at scale i is certified by a
# forest component of length-diameter <= 4 * (hop diameter) * 2^i, and hop
# diameters stay below c0 * log2 n in this clamped realization.
STRETCH_CONSTANT = 16.0


def default_forest_count(n: int, c0: float = DEFAULT_C0) -> int:
    """Smallest t with 2^t >= 8 * c0 * log2(n)."""
    return max(1, math.ceil(math.log2(8.0 * c0 * math.log2(max(n, 4)))))


@dataclass(frozen=True)
class ClusterPartition:
    """Disjoint vertex clusters, each certified by a rooted BFS tree."""

    labels: np.ndarray  # cluster id per vertex
    centers: np.ndarray  # root vertex of each cluster
    trees: tuple[tuple[tuple[int, int], ...], ...]  # per-cluster (parent, child)
    diameters: np.ndarray  # hop-count diameter of each certifying tree

    @property
    def k(self) -> int:
        return len(self.centers)

    def tree_edge_count(self) -> int:
        return sum(len(t) for t in self.trees)


def _shift_clamp(n: int, beta: float, c0: float) -> float:
    """Resampling ceiling for the Exp(beta) shifts.

    Half of c0 * ln(n) / beta, so certified tree diameters (at most twice
    the winning shift) stay below c0 * ln(n) / beta deterministically. The
    log is floored at 3 so that truncation keeps a negligible e^-6 mass at
    tiny n, where the separation bound would otherwise degrade.
    """
    return 0.5 * c0 * max(math.log(max(n, 2)), 3.0) / beta


def _draw_shifts(n: int, beta: float, clamp: float, rng) -> np.ndarray:
    delta = rng.exponential(scale=1.0 / beta, size=n)
    for _ in range(64):
        bad = delta > clamp
        if not bad.any():
            return delta
        delta[bad] = rng.exponential(scale=1.0 / beta, size=int(bad.sum()))
    raise RuntimeError("shift resampling failed to land under the clamp")


def _shifted_sweep(n: int, pairs: np.ndarray, delta: np.ndarray):
    """Unit-weight multi-source sweep with per-source offsets.

    Returns (center vertex per vertex, parent per vertex; parent == -1 at
    cluster roots). Realized via a super-source Dijkstra: source -> u costs
    max(delta) - delta_u, graph edges cost 1.
    """
    # Source offsets are shifted by +1 so none is a (dropped) explicit zero;
    # a common shift leaves every argmin unchanged.
    dmax = float(delta.max()) if n else 0.0
    offsets = dmax - delta + 1.0
    if len(pairs):
        u, v = pairs[:, 0], pairs[:, 1]
        row = np.concatenate([u, v, np.full(n, n)])
        col = np.concatenate([v, u, np.arange(n)])
        data = np.concatenate([np.ones(2 * len(pairs)), offsets])
    else:
        row = np.full(n, n)
        col = np.arange(n)
        data = offsets
    graph = sp.csr_matrix((data, (row, col)), shape=(n + 1, n + 1))
    dist, pred = dijkstra(
        graph, directed=True, indices=n, return_predecessors=True
    )
    order = np.argsort(dist[:n], kind="stable")
    center = np.arange(n)
    parent = np.full(n, -1, dtype=int)
    for vtx in order:
        p = pred[vtx]
        if p != n and p >= 0:
            parent[vtx] = p
            center[vtx] = center[p]
    return center, parent


def _tree_diameter(vertices: np.ndarray, adj: dict[int, list[int]]) -> int:
    """Exact hop diameter of a tree via a double BFS sweep."""
    if len(vertices) <= 1:
        return 0

    def far(start):
        seen = {start: 0}
        frontier = [start]
        last, depth = start, 0
        while frontier:
            nxt = []
            for x in frontier:
                for y in adj[x]:
                    if y not in seen:
                        seen[y] = seen[x] + 1
                        if seen[y] > depth:
                            depth, last = seen[y], y
                        nxt.append(y)
            frontier = nxt
        return last, depth

    far_vertex, _ = far(int(vertices[0]))
    _, diameter = far(far_vertex)
    return diameter


def _assemble_partition(
    n: int, center: np.ndarray, parent: np.ndarray, beta: float, clamp: float, c0: float
) -> ClusterPartition:
    roots, labels = np.unique(center, return_inverse=True)
    trees: list[list[tuple[int, int]]] = [[] for _ in roots]
    adj: dict[int, list[int]] = {v: [] for v in range(n)}
    for vtx in range(n):
        p = parent[vtx]
        if p >= 0:
            trees[labels[vtx]].append((int(p), int(vtx)))
            adj[p].append(vtx)
            adj[vtx].append(p)
    diameters = np.zeros(len(roots), dtype=int)
    for c in range(len(roots)):
        members = np.nonzero(labels == c)[0]
        diameters[c] = _tree_diameter(members, adj)
        # invariants asserted on every call: spanning trees + certificate
        if len(trees[c]) != len(members) - 1:
            raise AssertionError("cluster tree does not span its cluster")
    if (diameters > 2.0 * clamp + 1e-9).any():
        raise AssertionError("cluster diameter exceeded the shift clamp bound")
    return ClusterPartition(labels, roots, tuple(tuple(t) for t in trees), diameters)


def est_cluster(
    g: WeightedGraph,
    beta: float,
    seed: int | np.random.Generator = 0,
    c0: float = DEFAULT_C0,
) -> ClusterPartition:
    """Exponential-start-time clustering of g, treated as unweighted.

    Every cluster's BFS-tree diameter is at most c0 * ln(n) / beta (the
    shifts are clamped at half that, deterministically enforcing the
    certificate), and adjacent vertices are separated with probability at
    most beta, up to the clamp's truncation effect.
    """
    if not (0.0 < beta < 1.0):
        raise ValueError("beta must lie in (0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    clamp = _shift_clamp(g.n, beta, c0)
    delta = _draw_shifts(g.n, beta, clamp, rng)
    if g.m:
        u, v, _ = g.endpoint_arrays()
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        pairs = np.unique(np.stack([lo, hi], axis=1), axis=0)
    else:
        pairs = np.zeros((0, 2), dtype=int)
    center, parent = _shifted_sweep(g.n, pairs, delta)
    return _assemble_partition(g.n, center, parent, beta, clamp, c0)


@dataclass(frozen=True)
class Forest:
    """One acyclic spanner layer: edge indices into the host graph, each
    tagged with its origin length scale."""

    group: int
    edge_indices: tuple[int, ...]
    scales: tuple[int, ...]


@dataclass(frozen=True)
class SpannerForest:
    """Union of at most t forests returned by prob_spanner."""

    n: int
    t: int
    forests: tuple[Forest, ...]

    def edge_indices(self) -> np.ndarray:
        if not self.forests:
            return np.zeros(0, dtype=int)
        return np.concatenate(
            [np.asarray(f.edge_indices, dtype=int) for f in self.forests]
        )

    @property
    def total_edges(self) -> int:
        return sum(len(f.edge_indices) for f in self.forests)

    def validate_acyclic(self, g: WeightedGraph):
        for forest in self.forests:
            parent = list(range(self.n))

            def find(a):
                while parent[a] != a:
                    parent[a] = parent[parent[a]]
                    a = parent[a]
                return a

            for idx in forest.edge_indices:
                u, v, _ = g.edges[idx]
                ru, rv = find(u), find(v)
                if ru == rv:
                    raise AssertionError(f"forest {forest.group} contains a cycle")
                parent[ru] = rv


def _kruskal_forest(n: int, cand: list[tuple[float, int, int, int, int]]):
    """cand items: (length, edge_index, u, v, scale), pre-sorted ascending."""
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    picked_idx: list[int] = []
    picked_scale: list[int] = []
    for _, idx, u, v, scale in cand:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
            picked_idx.append(idx)
            picked_scale.append(scale)
    return picked_idx, picked_scale


def _bucket_cluster_trees(args):
    """Cluster one length-scale bucket; returns original edge ids of the
    certifying BFS trees."""
    n, scale, edge_ids, lo, hi, seed, beta, c0 = args
    rng = np.random.default_rng(np.random.SeedSequence((seed, scale + 2**32)))
    clamp = _shift_clamp(n, beta, c0)
    delta = _draw_shifts(n, beta, clamp, rng)
    stacked = np.stack([lo, hi], axis=1)
    pairs, first = np.unique(stacked, axis=0, return_index=True)
    pair_to_edge = {
        (int(a), int(b)): int(edge_ids[f]) for (a, b), f in zip(pairs, first)
    }
    center, parent = _shifted_sweep(n, pairs, delta)
    tree_edges = []
    for vtx in range(n):
        p = parent[vtx]
        if p >= 0:
            key = (min(p, vtx), max(p, vtx))
            tree_edges.append(pair_to_edge[key])
    return scale, tree_edges


def prob_spanner(
    g: WeightedGraph,
    lengths,
    seed: int | np.random.Generator = 0,
    c0: float = DEFAULT_C0,
    cluster_beta: float = DEFAULT_CLUSTER_BETA,
    t_override: int | None = None,
    threads: int = 1,
) -> SpannerForest:
    """Probabilistic low-stretch subgraph of g under the given edge lengths.

    Returns at most t forests (t = smallest power-of-two exponent covering
    8 c0 log2 n, unless overridden); every edge of g independently has
    stretch at most STRETCH_CONSTANT * log2 n with probability >= 1/2.
    """
    lengths = np.asarray(lengths, dtype=float)
    if lengths.shape != (g.m,):
        raise ValueError("lengths must align with the edge list")
    if g.m and (not np.isfinite(lengths).all() or (lengths <= 0).any()):
        raise ValueError("lengths must be positive and finite")
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(0, 2**63 - 1))
    t = t_override if t_override is not None else default_forest_count(g.n, c0)

    if g.m == 0:
        return SpannerForest(g.n, t, ())
    u, v, w = g.endpoint_arrays()
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    scales = np.floor(np.log2(lengths)).astype(int)

    jobs = []
    for scale in np.unique(scales):
        sel = np.nonzero(scales == scale)[0]
        jobs.append(
            (g.n, int(scale), sel, lo[sel], hi[sel], seed, cluster_beta, c0)
        )
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            bucket_trees = dict(pool.map(_bucket_cluster_trees, jobs))
    else:
        bucket_trees = dict(map(_bucket_cluster_trees, jobs))

    groups: dict[int, list[tuple[float, int, int, int, int]]] = {}
    for scale in sorted(bucket_trees):
        j = scale % t
        for idx in bucket_trees[scale]:
            groups.setdefault(j, []).append(
                (float(lengths[idx]), idx, int(lo[idx]), int(hi[idx]), scale)
            )
    forests = []
    for j in sorted(groups):
        cand = sorted(groups[j], key=lambda item: (item[0], item[1]))
        picked_idx, picked_scale = _kruskal_forest(g.n, cand)
        forests.append(Forest(j, tuple(picked_idx), tuple(picked_scale)))
    spanner = SpannerForest(g.n, t, tuple(forests))
    spanner.validate_acyclic(g)
    if spanner.total_edges > t * (g.n - 1):
        raise AssertionError("spanner exceeded the t * (n - 1) edge budget")
    return spanner


@dataclass(frozen=True)
class SpannerPeel:
    """Bookkeeping from spanner_estimate's peeling loop: which peel round
    and forest group claimed each spanner edge."""

    k: int
    t: int
    in_spanner: np.ndarray  # bool per edge of the input graph
    peel_round: np.ndarray  # 1-based round, 0 where not in the spanner
    group: np.ndarray  # forest group within the round, -1 where unused
    rounds_used: int


def spanner_estimate_detailed(
    g: WeightedGraph,
    alpha_est: float,
    seed: int | np.random.Generator = 0,
    c_k: float = DEFAULT_CK,
    c0: float = DEFAULT_C0,
    cluster_beta: float = DEFAULT_CLUSTER_BETA,
    t_override: int | None = None,
    threads: int = 1,
) -> tuple[LeverageEstimates, SpannerPeel]:
    """Spanner-peeling leverage upper bounds, with per-round bookkeeping.

    Runs k = ceil(c_k * alpha_est * ln n) rounds; each round removes a
    probabilistic spanner (lengths 1/w) from the residual graph. Edges
    claimed by any round get tau = 1, everything else tau = 1 / alpha_est.
    """
    if alpha_est < 1.0:
        raise ValueError("alpha_est must be >= 1")
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(0, 2**63 - 1))
    n, m = g.n, g.m
    k = max(1, math.ceil(c_k * alpha_est * math.log(max(n, 2))))
    in_spanner = np.zeros(m, dtype=bool)
    peel_round = np.zeros(m, dtype=int)
    group = np.full(m, -1, dtype=int)
    t_used = t_override if t_override is not None else default_forest_count(n, c0)
    rounds_used = 0
    weights = g.endpoint_arrays()[2] if m else np.zeros(0)

    for q in range(1, k + 1):
        residual = np.nonzero(~in_spanner)[0]
        if len(residual) == 0:
            break  # empty residual: remaining rounds are no-ops
        rounds_used = q
        sub = g.subgraph_of_edges(residual)
        round_seed = int(np.random.SeedSequence((seed, q)).generate_state(1)[0])
        spanner = prob_spanner(
            sub,
            1.0 / weights[residual],
            seed=round_seed,
            c0=c0,
            cluster_beta=cluster_beta,
            t_override=t_override,
            threads=threads,
        )
        for forest in spanner.forests:
            for local_idx in forest.edge_indices:
                orig = residual[local_idx]
                in_spanner[orig] = True
                peel_round[orig] = q
                group[orig] = forest.group
    tau = np.where(in_spanner, 1.0, 1.0 / alpha_est)
    estimates = LeverageEstimates(tau, "spanner")
    return estimates, SpannerPeel(k, t_used, in_spanner, peel_round, group, rounds_used)


def spanner_estimate(
    g: WeightedGraph,
    alpha_est: float,
    seed: int | np.random.Generator = 0,
    **kwargs,
) -> LeverageEstimates:
    """Leverage upper bounds from repeated spanner peeling (see
    spanner_estimate_detailed)."""
    return spanner_estimate_detailed(g, alpha_est, seed=seed, **kwargs)[0]


def check_mod_t_diameter_induction(
    g: WeightedGraph,
    lengths,
    spanner: SpannerForest,
    c0: float = DEFAULT_C0,
) -> None:
    """Strict-mode check of the composition invariant: while folding each
    group's scales in ascending order, every forest component's weighted
    diameter stays at or below 4 * c0 * 2^scale * log2 n."""
    lengths = np.asarray(lengths, dtype=float)
    logn = math.log2(max(g.n, 4))
    u, v, _ = g.endpoint_arrays()
    for forest in spanner.forests:
        by_scale: dict[int, list[int]] = {}
        for idx, scale in zip(forest.edge_indices, forest.scales):
            by_scale.setdefault(scale, []).append(idx)
        adj: dict[int, list[tuple[int, float]]] = {}
        for scale in sorted(by_scale):
            for idx in by_scale[scale]:
                a, b, l = int(u[idx]), int(v[idx]), float(lengths[idx])
                adj.setdefault(a, []).append((b, l))
                adj.setdefault(b, []).append((a, l))
            bound = 4.0 * c0 * (2.0**scale) * logn
            seen: set[int] = set()
            for start in list(adj):
                if start in seen:
                    continue
                comp = _collect_component(start, adj, seen)
                diam = _weighted_tree_diameter(comp, adj)
                if diam > bound + 1e-9:
                    raise AssertionError(
                        f"group {forest.group}: component diameter {diam:.3g} "
                        f"exceeds {bound:.3g} at scale {scale}"
                    )


def _collect_component(start, adj, seen):
    comp = [start]
    seen.add(start)
    stack = [start]
    while stack:
        x = stack.pop()
        for y, _ in adj[x]:
            if y not in seen:
                seen.add(y)
                comp.append(y)
                stack.append(y)
    return comp


def _weighted_tree_diameter(comp, adj) -> float:
    if len(comp) <= 1:
        return 0.0

    def far(start):
        dist = {start: 0.0}
        stack = [start]
        best, bestd = start, 0.0
        while stack:
            x = stack.pop()
            for y, l in adj[x]:
                if y not in dist:
                    dist[y] = dist[x] + l
                    if dist[y] > bestd:
                        best, bestd = y, dist[y]
                    stack.append(y)
        return best, bestd

    a, _ = far(comp[0])
    _, d = far(a)
    return d


def write_spanner_forest(g: WeightedGraph, spanner: SpannerForest) -> str:
    """Edge-list serialization with a '# forest j scale i' header per group
    of edges; readable by read_edge_list (comments are skipped)."""
    lines = [f"{g.n} {spanner.total_edges}"]
    for forest in spanner.forests:
        by_scale: dict[int, list[int]] = {}
        for idx, scale in zip(forest.edge_indices, forest.scales):
            by_scale.setdefault(scale, []).append(idx)
        for scale in sorted(by_scale):
            lines.append(f"# forest {forest.group} scale {scale}")
            for idx in by_scale[scale]:
                a, b, w = g.edges[idx]
                lines.append(f"{a} {b} {w:.17g}")
    return "\n".join(lines) + "\n"
