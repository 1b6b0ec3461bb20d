"""Weighted multigraph model, deterministic generators, and edge-list IO.

Vertex ids are dense 0-based integers. Parallel edges are permitted and
carried separately; self-loops and nonpositive weights are rejected at
construction time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

__all__ = [
    "Edge",
    "GraphFormatError",
    "RowStream",
    "WeightedGraph",
    "generate",
    "is_connected",
    "read_edge_list",
    "rows_of",
    "write_edge_list",
]

Edge = tuple[int, int, float]

GENERATOR_FAMILIES = ("path", "cycle", "complete", "grid", "star", "barbell", "gnp")


class GraphFormatError(ValueError):
    """Edge-list text that violates the on-disk format."""


@dataclass(frozen=True)
class WeightedGraph:
    """Undirected weighted multigraph: vertex count plus an ordered edge list."""

    n: int
    edges: tuple[Edge, ...]

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ValueError(f"vertex count must be an integer >= 1, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        cleaned = []
        for k, (u, v, w) in enumerate(self.edges):
            u, v, w = int(u), int(v), float(w)
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValueError(f"edge {k}: endpoint out of range for n={self.n}")
            if u == v:
                raise ValueError(f"edge {k}: self-loops are not allowed")
            if not (w > 0.0 and math.isfinite(w)):
                raise ValueError(f"edge {k}: weight must be positive and finite, got {w}")
            cleaned.append((u, v, w))
        object.__setattr__(self, "edges", tuple(cleaned))

    @property
    def m(self) -> int:
        return len(self.edges)

    def endpoint_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Edge endpoints and weights as parallel numpy arrays (u, v, w)."""
        if not self.edges:
            z = np.zeros(0)
            return z.astype(int), z.astype(int), z
        arr = np.asarray(self.edges, dtype=float)
        return arr[:, 0].astype(int), arr[:, 1].astype(int), arr[:, 2]

    def subgraph_of_edges(self, indices) -> "WeightedGraph":
        """Same vertex set, keeping only the edges at the given indices."""
        return WeightedGraph(self.n, tuple(self.edges[i] for i in indices))


class RowStream:
    """Single-consumer ordered stream of n-dimensional rows.

    Rows are delivered exactly once; `delivered` counts them. Iteration and
    `take` share the same cursor, so mixing them is safe.
    """

    def __init__(self, n: int, source: Iterable[np.ndarray]):
        if n < 1:
            raise ValueError("stream dimension must be >= 1")
        self.n = int(n)
        self._iter = iter(source)
        self._matrix: np.ndarray | None = None
        self._cursor = 0
        self.delivered = 0
        self.exhausted = False

    @classmethod
    def from_matrix(cls, X) -> "RowStream":
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("row matrix must be 2-dimensional")
        stream = cls(X.shape[1], iter(()))
        stream._matrix = X
        return stream

    def take(self, k: int) -> np.ndarray:
        """Up to k further rows as a (k', n) array; empty array once exhausted."""
        if k <= 0:
            return np.zeros((0, self.n))
        if self._matrix is not None:
            chunk = self._matrix[self._cursor : self._cursor + k]
            self._cursor += len(chunk)
            self.delivered += len(chunk)
            if self._cursor >= len(self._matrix):
                self.exhausted = True
            return chunk
        rows = []
        for row in self._iter:
            row = np.asarray(row, dtype=float)
            if row.shape != (self.n,):
                raise ValueError(
                    f"stream row has dimension {row.shape}, expected ({self.n},)"
                )
            rows.append(row)
            if len(rows) == k:
                break
        else:
            self.exhausted = True
        self.delivered += len(rows)
        if not rows:
            return np.zeros((0, self.n))
        return np.asarray(rows)

    def __iter__(self) -> Iterator[np.ndarray]:
        while True:
            chunk = self.take(1)
            if len(chunk) == 0:
                return
            yield chunk[0]


def rows_of(g: WeightedGraph) -> RowStream:
    """One row per edge, in edge order: +sqrt(w) at min(u,v), -sqrt(w) at max(u,v).

    The sum of outer products of the rows equals the graph Laplacian.
    Materializes an (m, n) matrix; intended for in-memory graphs.
    """
    X = np.zeros((g.m, g.n))
    if g.m:
        u, v, w = g.endpoint_arrays()
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        s = np.sqrt(w)
        idx = np.arange(g.m)
        X[idx, lo] = s
        X[idx, hi] = -s
    return RowStream.from_matrix(X)


def is_connected(g: WeightedGraph) -> bool:
    if g.n == 1:
        return True
    parent = list(range(g.n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    joined = 0
    for u, v, _ in g.edges:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
            joined += 1
    return joined == g.n - 1


# ---------------------------------------------------------------------------
# Generators. All families produce unit weights and are deterministic under a
# fixed seed (only gnp consumes randomness).

def _gen_path(n):
    return [(i, i + 1, 1.0) for i in range(n - 1)]


def _gen_cycle(n):
    if n < 3:
        raise ValueError("cycle needs n >= 3")
    return [(i, (i + 1) % n, 1.0) for i in range(n)]


def _gen_complete(n):
    if n < 2:
        raise ValueError("complete needs n >= 2")
    return [(i, j, 1.0) for i in range(n) for j in range(i + 1, n)]


def _gen_grid(n):
    # Near-square grid in row-major order; the last row may be partial.
    rows = max(1, int(math.isqrt(n)))
    cols = -(-n // rows)
    edges = []
    for v in range(n):
        r, c = divmod(v, cols)
        if c + 1 < cols and v + 1 < n and (v + 1) // cols == r:
            edges.append((v, v + 1, 1.0))
        if (r + 1) * cols + c < n:
            edges.append((v, (r + 1) * cols + c, 1.0))
    return edges


def _gen_star(n):
    if n < 2:
        raise ValueError("star needs n >= 2")
    return [(0, i, 1.0) for i in range(1, n)]


def _gen_barbell(n):
    # Two k-cliques joined by a (possibly single-edge) path through the middle.
    if n < 6:
        raise ValueError("barbell needs n >= 6")
    k = n // 2
    edges = [(i, j, 1.0) for i in range(k) for j in range(i + 1, k)]
    edges += [(i, j, 1.0) for i in range(n - k, n) for j in range(i + 1, n)]
    edges += [(i, i + 1, 1.0) for i in range(k - 1, n - k)]
    return edges


_FIXED_FAMILIES: dict[str, Callable] = {
    "path": _gen_path,
    "cycle": _gen_cycle,
    "complete": _gen_complete,
    "grid": _gen_grid,
    "star": _gen_star,
    "barbell": _gen_barbell,
}

_GNP_MAX_RETRIES = 1000


def generate(kind: str, n: int, seed: int = 0, p: float | None = None) -> WeightedGraph:
    """Build a unit-weight graph of the named family.

    `gnp` requires p in (0, 1] and resamples until connected (bounded retries).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if kind in _FIXED_FAMILIES:
        return WeightedGraph(n, tuple(_FIXED_FAMILIES[kind](n)))
    if kind == "gnp":
        if p is None or not (0.0 < p <= 1.0):
            raise ValueError("gnp needs p in (0, 1]")
        if n < 2:
            raise ValueError("gnp needs n >= 2")
        rng = np.random.default_rng(seed)
        iu, ju = np.triu_indices(n, k=1)
        for _ in range(_GNP_MAX_RETRIES):
            mask = rng.random(len(iu)) < p
            edges = tuple(
                (int(a), int(b), 1.0) for a, b in zip(iu[mask], ju[mask])
            )
            g = WeightedGraph(n, edges)
            if is_connected(g):
                return g
        raise RuntimeError(
            f"gnp(n={n}, p={p}) failed to produce a connected graph "
            f"after {_GNP_MAX_RETRIES} attempts"
        )
    raise ValueError(f"unknown family {kind!r}; expected one of {GENERATOR_FAMILIES}")


# ---------------------------------------------------------------------------
# Edge-list text format: first non-comment line "n m", then m lines "u v w".
# '#'-prefixed lines are comments. Weights use 17 significant digits so that
# write/read round-trips are bit-exact.

def write_edge_list(g: WeightedGraph) -> str:
    lines = [f"{g.n} {g.m}"]
    for u, v, w in g.edges:
        lines.append(f"{u} {v} {w:.17g}")
    return "\n".join(lines) + "\n"


def _parse_header(token_lines):
    try:
        lineno, parts = next(token_lines)
    except StopIteration:
        raise GraphFormatError("empty input: missing 'n m' header") from None
    if len(parts) != 2:
        raise GraphFormatError(f"malformed header at line {lineno}: expected 'n m'")
    try:
        n, m = int(parts[0]), int(parts[1])
    except ValueError:
        raise GraphFormatError(
            f"malformed header at line {lineno}: expected integers"
        ) from None
    return n, m


def iter_edge_lines(text: str):
    """Yield (lineno, tokens) for non-comment, non-blank lines."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield lineno, stripped.split()


def parse_edge_line(lineno: int, parts: list[str], n: int) -> Edge:
    if len(parts) != 3:
        raise GraphFormatError(f"malformed edge at line {lineno}: expected 'u v w'")
    try:
        u, v = int(parts[0]), int(parts[1])
        w = float(parts[2])
    except ValueError:
        raise GraphFormatError(f"malformed edge at line {lineno}") from None
    if not (0 <= u < n) or not (0 <= v < n):
        raise GraphFormatError(f"vertex id out of range at line {lineno}")
    if u == v:
        raise GraphFormatError(f"self-loop at line {lineno}")
    if not (w > 0.0 and math.isfinite(w)):
        raise GraphFormatError(f"nonpositive weight at line {lineno}")
    return (u, v, w)


def read_edge_list(text: str) -> WeightedGraph:
    token_lines = iter_edge_lines(text)
    n, m = _parse_header(token_lines)
    if n < 1:
        raise GraphFormatError("header: n must be >= 1")
    if m < 0:
        raise GraphFormatError("header: m must be >= 0")
    edges = []
    for lineno, parts in token_lines:
        if len(edges) == m:
            raise GraphFormatError(f"unexpected extra edge at line {lineno}")
        edges.append(parse_edge_line(lineno, parts, n))
    if len(edges) != m:
        raise GraphFormatError(f"expected {m} edges, found {len(edges)}")
    return WeightedGraph(n, tuple(edges))
