"""Input validation helpers shared by the estimator front end."""
from __future__ import annotations

import numpy as np

from .graphs import WeightedGraph


def as_row_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError("expected a nonempty 2-d row matrix")
    if not np.isfinite(X).all():
        raise ValueError("row matrix contains non-finite values")
    return X


def as_weighted_graph(X, n_vertices: int | None = None) -> WeightedGraph:
    """Accept a WeightedGraph or an (m, 3) array of (u, v, w) edges."""
    if isinstance(X, WeightedGraph):
        return X
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("expected a WeightedGraph or an (m, 3) edge array")
    if n_vertices is None:
        n_vertices = int(arr[:, :2].max()) + 1 if len(arr) else 1
    edges = tuple((int(u), int(v), float(w)) for u, v, w in arr)
    return WeightedGraph(n_vertices, edges)


def seed_from_random_state(random_state) -> int:
    """Map sklearn-style random_state to a deterministic integer seed."""
    if random_state is None:
        return 0
    if isinstance(random_state, (int, np.integer)):
        return int(random_state)
    if isinstance(random_state, np.random.Generator):
        return int(random_state.integers(0, 2**63 - 1))
    raise TypeError(f"unsupported random_state {type(random_state).__name__}")
