"""Single-pass resparsifying row sampler, with a graph edge-stream adapter.

Rows arrive one at a time and are appended to a bounded buffer. Whenever the
buffer exceeds its threshold, every buffered row gets a leverage upper bound
tau (computed against the current buffer matrix) and is kept independently
with probability min(1, beta * tau); survivors with beta * tau < 1 are
divided by sqrt(beta * tau), so the expected outer-product sum is unchanged.

beta = beta_coeff * ln(n) / epsilon^2 and the threshold is
ceil(buffer_coeff * n * beta); the classical constants are beta_coeff = 200
and buffer_coeff = 20, far above what desk-scale inputs ever reach, so both
are configuration knobs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

import numpy as np

from .graphs import RowStream, WeightedGraph
from .linalg import row_leverage, sketched_row_leverage_upper

__all__ = [
    "DecisionRecord",
    "LeverageContractError",
    "SparsifierBuffer",
    "StreamConfig",
    "buffer_from_rows",
    "resparsify_once",
    "stream_graph_buffer",
    "stream_sparsify",
    "stream_sparsify_graph",
]


class LeverageContractError(RuntimeError):
    """Leverage provider handed back estimates summing above 2n."""


@dataclass(frozen=True)
class StreamConfig:
    """Knobs of the streaming sampler; defaults follow the classical recipe."""

    epsilon: float
    beta_coeff: float = 200.0
    buffer_coeff: float = 20.0
    leverage_mode: str = "exact"  # exact | sketched
    jl_delta: float = 0.25
    seed: int = 0
    record_decisions: bool = True
    assert_space: bool = False

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 0.5):
            raise ValueError("epsilon must lie in (0, 1/2]")
        if self.beta_coeff <= 0 or self.buffer_coeff <= 0:
            raise ValueError("coefficients must be positive")
        if self.leverage_mode not in ("exact", "sketched"):
            raise ValueError("leverage_mode must be 'exact' or 'sketched'")

    def beta(self, n: int) -> float:
        return self.beta_coeff * math.log(max(n, 2)) / self.epsilon**2

    def threshold(self, n: int) -> int:
        return math.ceil(self.buffer_coeff * n * self.beta(n))


@dataclass
class DecisionRecord:
    """One resparsification's sampled rows (deterministic keeps excluded)."""

    round: int
    orig: np.ndarray  # arrival index of each sampled row
    w_before: np.ndarray  # squared cumulative scaling before the round
    p: np.ndarray
    kept: np.ndarray


@dataclass
class SparsifierBuffer:
    """Retained rows with cumulative scaling factors and run statistics."""

    n: int
    rows: np.ndarray
    scales: np.ndarray
    orig: np.ndarray
    payload: dict[str, np.ndarray] | None
    rows_seen: int
    peak_rows: int
    resparsify_count: int
    threshold: int
    beta: float
    decisions: list[DecisionRecord] = field(default_factory=list)

    @property
    def row_count(self) -> int:
        return len(self.rows)

    def matrix(self) -> np.ndarray:
        return self.rows

    def to_graph(self) -> WeightedGraph:
        """Reassemble a weighted graph; each kept edge's weight is w * scale^2."""
        if self.payload is None:
            raise ValueError("buffer was not built from a graph edge stream")
        w = self.payload["w"] * self.scales**2
        edges = tuple(
            (int(u), int(v), float(wt))
            for u, v, wt in zip(self.payload["u"], self.payload["v"], w)
        )
        return WeightedGraph(self.n, edges)


def _leverage_upper(rows, cfg: StreamConfig, rng) -> np.ndarray:
    if cfg.leverage_mode == "exact":
        tau = row_leverage(rows)
    else:
        tau = sketched_row_leverage_upper(rows, cfg.jl_delta, rng)
    total = float(tau.sum())
    if total > 2.0 * rows.shape[1] + 1e-9:
        raise LeverageContractError(
            f"leverage estimates sum to {total:.3f} > 2n = {2 * rows.shape[1]}"
        )
    # guard against exact zeros from degenerate rows
    return np.maximum(tau, 1e-300)


def _sample_rows(rows, scales, beta, tau, rng):
    """Fig-style resparsification pass over a materialized buffer."""
    p = np.minimum(beta * tau, 1.0)
    deterministic = p >= 1.0
    u = rng.random(len(rows))
    kept = deterministic | (u < p)
    factor = np.where(deterministic, 1.0, 1.0 / np.sqrt(np.maximum(p, 1e-300)))
    new_rows = rows[kept] * factor[kept, None]
    new_scales = scales[kept] * factor[kept]
    return new_rows, new_scales, kept, p, deterministic


class _Ingest:
    """Chunk-wise adapter feeding rows (plus optional payload) to the loop."""

    def __init__(self, n: int, row_taker, payload_names=()):
        self.n = n
        self.take = row_taker
        self.payload_names = payload_names


def _matrix_ingest(stream: RowStream) -> _Ingest:
    def take(k):
        return stream.take(k), None

    return _Ingest(stream.n, take)


def _edge_ingest(edge_iter: Iterator, n: int) -> _Ingest:
    def take(k):
        us, vs, ws = [], [], []
        for _ in range(k):
            try:
                u, v, w = next(edge_iter)
            except StopIteration:
                break
            us.append(int(u))
            vs.append(int(v))
            ws.append(float(w))
        if not us:
            return np.zeros((0, n)), None
        u = np.asarray(us)
        v = np.asarray(vs)
        w = np.asarray(ws)
        if u.min() < 0 or v.min() < 0 or max(u.max(), v.max()) >= n:
            raise ValueError("edge endpoint out of range for declared n")
        if (u == v).any() or (w <= 0).any() or not np.isfinite(w).all():
            raise ValueError("edges must be loop-free with positive finite weights")
        rows = np.zeros((len(u), n))
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        s = np.sqrt(w)
        idx = np.arange(len(u))
        rows[idx, lo] = s
        rows[idx, hi] = -s
        return rows, {"u": u, "v": v, "w": w}

    return _Ingest(n, take, payload_names=("u", "v", "w"))


class IncrementalStream:
    """Live state of one streaming run; rows can arrive in any chunking.

    Appends happen row-group-wise but the resparsification trigger point is
    identical to per-row arrival: the buffer is only ever filled up to one
    row past the threshold before a resparsification fires.
    """

    def __init__(self, n: int, cfg: StreamConfig, payload_names: tuple = ()):
        self.n = n
        self.cfg = cfg
        self.beta = cfg.beta(n)
        self.threshold = cfg.threshold(n)
        self.rng = np.random.default_rng(cfg.seed)
        self.payload_names = payload_names
        self._capacity = self.threshold + 5  # headroom for non-reducing rounds
        self._alloc = min(self._capacity, 4096)
        self._rows = np.empty((self._alloc, n))
        self._scales = np.empty(self._alloc)
        self._orig = np.empty(self._alloc, dtype=np.int64)
        self._payload: dict[str, np.ndarray] | None = {} if payload_names else None
        self.count = 0
        self.rows_seen = 0
        self.peak_rows = 0
        self.resparsify_count = 0
        self._non_reducing = 0
        self.decisions: list[DecisionRecord] = []

    def _ensure_capacity(self, need: int):
        if need <= self._alloc:
            return
        self._alloc = min(self._capacity, max(need, 2 * self._alloc))
        grow = self._alloc - len(self._rows)
        self._rows = np.concatenate([self._rows, np.empty((grow, self.n))])
        self._scales = np.concatenate([self._scales, np.empty(grow)])
        self._orig = np.concatenate([self._orig, np.empty(grow, dtype=np.int64)])

    def _append(self, chunk, pay):
        k = len(chunk)
        self._ensure_capacity(self.count + k)
        self._rows[self.count : self.count + k] = chunk
        self._scales[self.count : self.count + k] = 1.0
        self._orig[self.count : self.count + k] = np.arange(
            self.rows_seen, self.rows_seen + k
        )
        if self._payload is not None:
            for name in self.payload_names:
                old = self._payload.get(name)
                self._payload[name] = (
                    pay[name] if old is None else np.concatenate([old, pay[name]])
                )
        self.count += k
        self.rows_seen += k
        self.peak_rows = max(self.peak_rows, self.count)

    def _resparsify(self):
        cnt = self.count
        tau = _leverage_upper(self._rows[:cnt], self.cfg, self.rng)
        new_rows, new_scales, kept, p, deterministic = _sample_rows(
            self._rows[:cnt], self._scales[:cnt], self.beta, tau, self.rng
        )
        self.resparsify_count += 1
        if self.cfg.record_decisions:
            sampled = ~deterministic
            self.decisions.append(
                DecisionRecord(
                    round=self.resparsify_count,
                    orig=self._orig[:cnt][sampled].copy(),
                    w_before=self._scales[:cnt][sampled] ** 2,
                    p=p[sampled],
                    kept=kept[sampled],
                )
            )
        new_count = len(new_rows)
        self._rows[:new_count] = new_rows
        self._scales[:new_count] = new_scales
        self._orig[:new_count] = self._orig[:cnt][kept]
        if self._payload is not None:
            for name in self.payload_names:
                self._payload[name] = self._payload[name][kept]
        self.count = new_count
        self._non_reducing = 0 if new_count <= self.threshold else self._non_reducing + 1
        if self._non_reducing >= 3:
            raise RuntimeError(
                "resparsification failed to shrink the buffer three times in "
                "a row; constants are misconfigured for this stream"
            )

    def space(self) -> int:
        """How many rows may arrive before the next trigger check."""
        return min(max(1, self.threshold + 1 - self.count), 65536)

    def feed(self, chunk: np.ndarray, payload: dict | None = None):
        """Append rows, firing resparsifications at the usual trigger.

        Arbitrary chunk sizes are accepted; internally the chunk is split so
        appends never overshoot the trigger point.
        """
        chunk = np.asarray(chunk, dtype=float)
        if chunk.ndim != 2 or chunk.shape[1] != self.n:
            raise ValueError(f"chunk must be (k, {self.n})")
        pos = 0
        while pos < len(chunk):
            take = min(self.space(), len(chunk) - pos)
            pay = None
            if payload is not None:
                pay = {k: v[pos : pos + take] for k, v in payload.items()}
            self._append(chunk[pos : pos + take], pay)
            pos += take
            if self.count > self.threshold:
                self._resparsify()

    def snapshot(self) -> SparsifierBuffer:
        if self.cfg.assert_space and self.peak_rows > self.threshold + 1:
            raise RuntimeError(
                f"buffer peak {self.peak_rows} exceeded the space bound "
                f"{self.threshold + 1}"
            )
        payload = None
        if self._payload is not None:
            payload = {k: v.copy() for k, v in self._payload.items()}
        return SparsifierBuffer(
            n=self.n,
            rows=self._rows[: self.count].copy(),
            scales=self._scales[: self.count].copy(),
            orig=self._orig[: self.count].copy(),
            payload=payload,
            rows_seen=self.rows_seen,
            peak_rows=self.peak_rows,
            resparsify_count=self.resparsify_count,
            threshold=self.threshold,
            beta=self.beta,
            decisions=list(self.decisions),
        )


def _run_stream(ingest: _Ingest, cfg: StreamConfig) -> SparsifierBuffer:
    state = IncrementalStream(ingest.n, cfg, ingest.payload_names)
    while True:
        chunk, pay = ingest.take(state.space())
        if len(chunk) == 0:
            break
        state.feed(chunk, pay)
    return state.snapshot()


def stream_sparsify(stream, cfg: StreamConfig) -> SparsifierBuffer:
    """Consume a row stream in one pass and return the retained buffer.

    The output satisfies (1-eps) A^T A <= Atilde^T Atilde <= (1+eps) A^T A
    with the configured success probability; peak buffer occupancy stays at
    or below threshold + 1 whenever resparsification shrinks the buffer.
    """
    if isinstance(stream, np.ndarray):
        stream = RowStream.from_matrix(stream)
    if not isinstance(stream, RowStream):
        raise TypeError("stream must be a RowStream or a row matrix")
    return _run_stream(_matrix_ingest(stream), cfg)


def stream_graph_buffer(
    source, cfg: StreamConfig, n: int | None = None
) -> SparsifierBuffer:
    """Graph flavor of stream_sparsify: edges stream in as sqrt(w) b_e rows.

    `source` is a WeightedGraph or an iterable of (u, v, w); the latter needs
    an explicit vertex count n. Edges are never materialized as a graph.
    """
    if isinstance(source, WeightedGraph):
        n = source.n
        edge_iter = iter(source.edges)
    else:
        if n is None:
            raise ValueError("an edge iterable needs an explicit vertex count n")
        edge_iter = iter(source)
    return _run_stream(_edge_ingest(edge_iter, n), cfg)


def stream_sparsify_graph(source, cfg: StreamConfig, n: int | None = None) -> WeightedGraph:
    """One-pass graph sparsifier; output weights are w * scale^2."""
    return stream_graph_buffer(source, cfg, n=n).to_graph()


def resparsify_once(
    buf: SparsifierBuffer, cfg: StreamConfig, seed: int | np.random.Generator | None = None
) -> SparsifierBuffer:
    """Run a single resparsification pass over an existing buffer.

    Leverage upper bounds are recomputed from the buffer matrix; rows with
    beta * tau >= 1 are kept untouched. Expected row count drops to
    sum(min(1, beta * tau)) and the expected outer-product sum is preserved.
    """
    if seed is None:
        rng = np.random.default_rng(cfg.seed)
    elif isinstance(seed, np.random.Generator):
        rng = seed
    else:
        rng = np.random.default_rng(seed)
    beta = cfg.beta(buf.n)
    tau = _leverage_upper(buf.rows, cfg, rng)
    new_rows, new_scales, kept, p, deterministic = _sample_rows(
        buf.rows, buf.scales, beta, tau, rng
    )
    decisions = list(buf.decisions)
    if cfg.record_decisions:
        sampled = ~deterministic
        decisions.append(
            DecisionRecord(
                round=buf.resparsify_count + 1,
                orig=buf.orig[sampled].copy(),
                w_before=buf.scales[sampled] ** 2,
                p=p[sampled],
                kept=kept[sampled],
            )
        )
    payload = None
    if buf.payload is not None:
        payload = {name: arr[kept] for name, arr in buf.payload.items()}
    return SparsifierBuffer(
        n=buf.n,
        rows=new_rows,
        scales=new_scales,
        orig=buf.orig[kept].copy(),
        payload=payload,
        rows_seen=buf.rows_seen,
        peak_rows=max(buf.peak_rows, buf.row_count),
        resparsify_count=buf.resparsify_count + 1,
        threshold=buf.threshold,
        beta=beta,
        decisions=decisions,
    )


def buffer_from_rows(rows, cfg: StreamConfig, payload=None) -> SparsifierBuffer:
    """Wrap a materialized row matrix as a buffer (for frozen-round tests)."""
    rows = np.asarray(rows, dtype=float)
    m, n = rows.shape
    return SparsifierBuffer(
        n=n,
        rows=rows.copy(),
        scales=np.ones(m),
        orig=np.arange(m),
        payload=payload,
        rows_seen=m,
        peak_rows=m,
        resparsify_count=0,
        threshold=cfg.threshold(n),
        beta=cfg.beta(n),
        decisions=[],
    )
