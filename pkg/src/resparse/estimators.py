"""Estimator-style front end for the two sparsifiers.

Both classes follow the scikit-learn protocol: constructor arguments are
stored verbatim (so get_params / set_params / clone work), fit learns the
sparsified object, and fitted attributes carry trailing underscores.

StreamSparsifier reduces the rows of the matrix it is fitted on, so its
transform returns the reduced rows of the fitted stream; it also supports
incremental consumption via partial_fit.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from ._validation import as_row_matrix, as_weighted_graph, seed_from_random_state
from .graphs import WeightedGraph
from .parallel import ParallelConfig, parallel_sparsify
from .streaming import StreamConfig, SparsifierBuffer, stream_sparsify

__all__ = ["GraphSparsifier", "StreamSparsifier"]


class StreamSparsifier(BaseEstimator, TransformerMixin):
    """Single-pass row sketcher: keeps a reweighted subset of the fitted
    rows whose Gram matrix approximates the full one within (1 +- epsilon).

    Parameters mirror StreamConfig; random_state seeds all sampling.
    """

    def __init__(
        self,
        epsilon: float = 0.25,
        beta_coeff: float = 200.0,
        buffer_coeff: float = 20.0,
        leverage_mode: str = "exact",
        jl_delta: float = 0.25,
        random_state: int | None = None,
    ):
        self.epsilon = epsilon
        self.beta_coeff = beta_coeff
        self.buffer_coeff = buffer_coeff
        self.leverage_mode = leverage_mode
        self.jl_delta = jl_delta
        self.random_state = random_state

    def _config(self) -> StreamConfig:
        return StreamConfig(
            epsilon=self.epsilon,
            beta_coeff=self.beta_coeff,
            buffer_coeff=self.buffer_coeff,
            leverage_mode=self.leverage_mode,
            jl_delta=self.jl_delta,
            seed=seed_from_random_state(self.random_state),
        )

    def _ingest(self, X) -> SparsifierBuffer:
        X = as_row_matrix(X)
        if hasattr(self, "n_features_in_") and X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, fitted for {self.n_features_in_}"
            )
        chunks = getattr(self, "_pending", [])
        chunks.append(X)
        stacked = np.concatenate(chunks, axis=0) if len(chunks) > 1 else chunks[0]
        buf = stream_sparsify(stacked, self._config())
        return buf

    def partial_fit(self, X, y=None):
        """Feed one more chunk of rows into the stream."""
        X = as_row_matrix(X)
        if not hasattr(self, "_chunks"):
            self._chunks = []
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, fitted for {self.n_features_in_}"
            )
        self._chunks.append(np.asarray(X, dtype=float))
        self._refit()
        return self

    def _refit(self):
        stacked = np.concatenate(self._chunks, axis=0)
        buf = stream_sparsify(stacked, self._config())
        self.rows_ = buf.rows
        self.scales_ = buf.scales
        self.peak_rows_ = buf.peak_rows
        self.n_rows_seen_ = buf.rows_seen
        self.n_resparsifications_ = buf.resparsify_count
        self.buffer_ = buf

    def fit(self, X, y=None):
        X = as_row_matrix(X)
        self._chunks = [X]
        self.n_features_in_ = X.shape[1]
        self._refit()
        return self

    def transform(self, X=None):
        """Reduced rows of the fitted stream.

        X is accepted for pipeline compatibility; only its feature count is
        validated, since the reduction applies to the fitted rows.
        """
        if not hasattr(self, "rows_"):
            raise NotFittedError("StreamSparsifier is not fitted yet")
        if X is not None:
            X = as_row_matrix(X)
            if X.shape[1] != self.n_features_in_:
                raise ValueError(
                    f"X has {X.shape[1]} features, fitted for {self.n_features_in_}"
                )
        return self.rows_

    def fit_transform(self, X, y=None):
        return self.fit(X).transform()


class GraphSparsifier(BaseEstimator):
    """Spanner-guided iterated sampler producing a reweighted subgraph
    whose Laplacian quadratic form approximates the input's.

    Accepts a WeightedGraph or an (m, 3) array of (u, v, w) rows together
    with n_vertices. Parameters mirror ParallelConfig; desk_scale applies
    the calibrated small-input preset before explicit overrides.
    """

    def __init__(
        self,
        epsilon: float = 0.25,
        alpha_coeff: float = 100.0,
        stop_coeff: float = 100.0,
        estimate_ratio: float = 10.0,
        c_k: float = 3.0,
        c0: float = 4.0,
        t_override: int | None = None,
        max_rounds: int | None = None,
        desk_scale: bool = False,
        threads: int = 1,
        random_state: int | None = None,
    ):
        self.epsilon = epsilon
        self.alpha_coeff = alpha_coeff
        self.stop_coeff = stop_coeff
        self.estimate_ratio = estimate_ratio
        self.c_k = c_k
        self.c0 = c0
        self.t_override = t_override
        self.max_rounds = max_rounds
        self.desk_scale = desk_scale
        self.threads = threads
        self.random_state = random_state

    def _config(self) -> ParallelConfig:
        from .parallel import DESK_SCALE

        params = dict(
            alpha_coeff=self.alpha_coeff,
            stop_coeff=self.stop_coeff,
            estimate_ratio=self.estimate_ratio,
            c_k=self.c_k,
        )
        if self.desk_scale:
            defaults = type(self)()  # only overlay explicitly changed values
            for name, desk_value in DESK_SCALE.items():
                if params[name] == getattr(defaults, name):
                    params[name] = desk_value
        return ParallelConfig(
            epsilon=self.epsilon,
            c0=self.c0,
            t_override=self.t_override,
            max_rounds=self.max_rounds,
            seed=seed_from_random_state(self.random_state),
            threads=self.threads,
            **params,
        )

    def fit(self, X, y=None, n_vertices: int | None = None):
        g = as_weighted_graph(X, n_vertices)
        result = parallel_sparsify(g, self._config())
        self.sparsifier_ = result.graph
        self.result_ = result
        self.n_rounds_ = result.n_rounds
        self.round_log_ = result.rounds
        self.n_features_in_ = g.n
        return self

    def transform(self, X=None) -> WeightedGraph:
        if not hasattr(self, "sparsifier_"):
            raise NotFittedError("GraphSparsifier is not fitted yet")
        return self.sparsifier_

    def fit_transform(self, X, y=None, **fit_params) -> WeightedGraph:
        return self.fit(X, y, **fit_params).transform()
