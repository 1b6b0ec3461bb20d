"""Executable weighted-row sampling game.

An adversary repeatedly picks a row index i and a probability p, subject to
the legality rule (w_i / p) * a_i^T M^+ a_i <= 1 / alpha, where M is the
fixed sum of row outer products. With probability p the weight is divided
by p, otherwise it is zeroed. The adversary wins if the reweighted sum ever
leaves the (1 +- epsilon) band around M.

The engine enforces move legality exactly (leverages against M are
precomputed once), supports coupled Exp(1) randomness or fresh per-move
draws, and records the martingale difference sequence together with its
predictable quadratic variation.

Analysis quantities (norm of X_j, the W_k accumulator) are computed on the
rows exactly as given; callers who want the dimension-free bounds of the
analysis should feed isotropic rows (see `isotropic_rows`).
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .graphs import RowStream, WeightedGraph, rows_of

__all__ = [
    "GameResult",
    "GameState",
    "GameTrace",
    "IllegalMoveError",
    "MoveRecord",
    "check_win",
    "epsilon_star",
    "halving_strategy",
    "isotropic_rows",
    "legal_move",
    "new_game",
    "play_move",
    "quadratic_variation_norm",
    "run_strategy",
    "uniform_random_legal_strategy",
]

_LEGALITY_SLACK = 1.0 + 1e-9


class IllegalMoveError(RuntimeError):
    """A move violating the legality rule was submitted to play_move."""


@dataclass
class MoveRecord:
    move: int
    i: int
    p: float
    kept: bool
    x_coeff: float  # X_j = x_coeff * a_i a_i^T
    norm_x: float  # legality bound (w/p or w) * a_i^T a_i
    norm_w: float | None
    epsilon_star: float | None = None


class GameTrace:
    """Difference-sequence log plus the running quadratic variation W_k."""

    def __init__(self, n: int, track_norms: bool = True):
        self.records: list[MoveRecord] = []
        self.W = np.zeros((n, n))
        self.norm_w_history: list[float] = []
        self.track_norms = track_norms

    def append(self, state: "GameState", i: int, p: float, kept: bool):
        a = state.rows[i]
        w = state.w[i]  # weight before the move
        gram = float(a @ a)
        self.W += ((1.0 - p) / p) * w * w * gram * np.outer(a, a)
        norm_w = None
        if self.track_norms:
            norm_w = float(np.linalg.eigvalsh(self.W).max())
            self.norm_w_history.append(norm_w)
        coeff = (1.0 - p) / p * w if kept else -w
        bound = (w / p if kept else w) * gram
        self.records.append(
            MoveRecord(len(self.records) + 1, i, p, kept, coeff, bound, norm_w)
        )

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("move,i,p,kept,norm_X,norm_W,epsilon_star\n")
        for r in self.records:
            eps = "" if r.epsilon_star is None else f"{r.epsilon_star:.17g}"
            w = "" if r.norm_w is None else f"{r.norm_w:.17g}"
            out.write(f"{r.move},{r.i},{r.p:.17g},{int(r.kept)},{r.norm_x:.17g},{w},{eps}\n")
        return out.getvalue()

    def __len__(self) -> int:
        return len(self.records)


class GameState:
    """Mutable game position: fixed rows, live weights, cached matrices."""

    def __init__(
        self,
        rows: np.ndarray,
        epsilon: float,
        alpha: float,
        mode: str,
        rng: np.random.Generator,
        strict_half: bool,
        playable: np.ndarray,
        debug_checks: bool,
        track_norms: bool,
    ):
        self.rows = rows
        self.epsilon = epsilon
        self.alpha = alpha
        self.mode = mode
        self.rng = rng
        self.strict_half = strict_half
        self.playable = playable
        self.debug_checks = debug_checks

        m, n = rows.shape
        self.m, self.n = m, n
        self.w = np.ones(m)
        self.x = None
        if mode == "coupled":
            u = 1.0 - rng.random(m)  # uniform on (0, 1]
            self.x = -np.log(u)
        self.move_count = 0

        self.M = rows.T @ rows
        self.current = self.M.copy()
        vals, vecs = np.linalg.eigh(self.M)
        cutoff = max(vals.max(), 0.0) * 1e-12
        keep = vals > cutoff
        if not keep.any():
            raise ValueError("all rows are zero; the game is undefined")
        self._atilde = rows @ (vecs[:, keep] / np.sqrt(vals[keep]))
        self.lev = np.einsum("ij,ij->i", self._atilde, self._atilde)
        self._kw = self._atilde.T @ self._atilde  # whitened current matrix
        self.trace = GameTrace(n, track_norms=track_norms)

    def copy(self, seed: int | np.random.Generator | None = None) -> "GameState":
        """Duplicate the position; pass a seed to give the copy its own
        randomness (otherwise the generator state is cloned)."""
        dup = object.__new__(GameState)
        dup.__dict__.update(self.__dict__)
        for name in ("w", "current", "_kw"):
            setattr(dup, name, getattr(self, name).copy())
        if self.x is not None:
            dup.x = self.x.copy()
        if seed is None:
            bg = type(self.rng.bit_generator)()
            bg.state = self.rng.bit_generator.state
            dup.rng = np.random.Generator(bg)
        elif isinstance(seed, np.random.Generator):
            dup.rng = seed
        else:
            dup.rng = np.random.default_rng(seed)
        dup.trace = GameTrace(self.n, track_norms=self.trace.track_norms)
        return dup

    def w_bar(self) -> np.ndarray:
        """Coupled-mode ceiling min(e^{x_i}, 1 / (alpha * leverage_i))."""
        if self.x is None:
            raise ValueError("w_bar is defined for coupled mode only")
        with np.errstate(divide="ignore"):
            cap = np.where(self.lev > 0.0, 1.0 / (self.alpha * self.lev), np.inf)
        return np.minimum(np.exp(self.x), cap)

    def _assert_invariants(self):
        recomputed = (self.rows * self.w[:, None]).T @ self.rows
        if np.abs(recomputed - self.current).max() > 1e-10 * max(
            1.0, np.abs(self.M).max()
        ):
            raise AssertionError("cached current matrix drifted from recompute")
        if self.x is not None:
            bar = self.w_bar()
            if (self.w > bar * _LEGALITY_SLACK + 1e-12).any():
                raise AssertionError("coupled-mode invariant w <= w_bar violated")


def isotropic_rows(source: WeightedGraph | np.ndarray | RowStream) -> np.ndarray:
    """Whiten rows so their outer products sum to a projection.

    In this position the legality leverage equals the plain squared norm and
    the quadratic-variation bounds of the analysis are dimension-free.
    """
    if isinstance(source, WeightedGraph):
        B = rows_of(source).take(source.m)
    elif isinstance(source, RowStream):
        B = source.take(10**9)
    else:
        B = np.asarray(source, dtype=float)
    M = B.T @ B
    vals, vecs = np.linalg.eigh(M)
    keep = vals > max(vals.max(), 0.0) * 1e-12
    return B @ (vecs[:, keep] / np.sqrt(vals[keep]))


def new_game(
    rows,
    epsilon: float,
    seed: int | np.random.Generator = 0,
    mode: str = "coupled",
    c_alpha: float = 8.0,
    alpha: float | None = None,
    strict_half: bool = False,
    high_leverage: str = "error",
    debug_checks: bool = False,
    track_norms: bool = True,
) -> GameState:
    """Start a game on the given rows.

    alpha defaults to c_alpha * ln(n) / epsilon^2. Rows whose leverage
    exceeds 1/alpha cannot be played at any p; the `high_leverage` policy
    decides whether their presence is an error (default) or whether they
    are excluded from play with their weight frozen at 1.
    """
    if not (0.0 < epsilon < 0.5):
        raise ValueError("epsilon must lie in (0, 1/2)")
    if mode not in ("coupled", "fresh"):
        raise ValueError("mode must be 'coupled' or 'fresh'")
    if high_leverage not in ("error", "exclude"):
        raise ValueError("high_leverage must be 'error' or 'exclude'")
    if isinstance(rows, WeightedGraph):
        rows = rows_of(rows).take(rows.m)
    elif isinstance(rows, RowStream):
        rows = rows.take(10**9)
    rows = np.ascontiguousarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("rows must form a nonempty (m, n) matrix")
    n = rows.shape[1]
    if alpha is None:
        alpha = c_alpha * math.log(max(n, 2)) / epsilon**2
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    state = GameState(
        rows,
        epsilon,
        float(alpha),
        mode,
        rng,
        strict_half,
        playable=np.ones(rows.shape[0], dtype=bool),
        debug_checks=debug_checks,
        track_norms=track_norms,
    )
    too_high = state.lev > (1.0 / alpha) * _LEGALITY_SLACK
    if too_high.any():
        if high_leverage == "error":
            idx = np.nonzero(too_high)[0]
            shown = ", ".join(map(str, idx[:20]))
            more = "" if len(idx) <= 20 else f" (+{len(idx) - 20} more)"
            raise ValueError(
                f"rows with leverage above 1/alpha={1.0 / alpha:.3g} cannot be "
                f"played: indices {shown}{more}"
            )
        state.playable = ~too_high
    return state


def legal_move(state: GameState, i: int, p: float) -> bool:
    """Exact legality rule, evaluated against leverages on the fixed M."""
    if not (0 <= i < state.m):
        raise IndexError(f"row index {i} out of range")
    if not (0.0 < p <= 1.0):
        raise ValueError("p must lie in (0, 1]")
    if state.w[i] == 0.0 or not state.playable[i]:
        return False
    if state.strict_half and p < 0.5:
        return False
    return (state.w[i] / p) * state.lev[i] <= (1.0 / state.alpha) * _LEGALITY_SLACK


def play_move(
    state: GameState, i: int, p: float, force_outcome: str | None = None
) -> str:
    """Play one move; returns "kept" or "dropped". Illegal moves are
    rejected with the state unchanged.

    force_outcome ("kept"/"dropped") bypasses the randomness; it exists for
    replaying externally sampled runs and for forced-branch tests.
    """
    if not legal_move(state, i, p):
        raise IllegalMoveError(f"move (i={i}, p={p}) is not legal")
    w = state.w[i]
    if force_outcome is not None:
        kept = force_outcome == "kept"
    elif state.mode == "coupled":
        kept = math.log(w) - math.log(p) <= state.x[i]
    else:
        kept = (1.0 - state.rng.random()) <= p

    state.trace.append(state, i, p, kept)
    a = state.rows[i]
    atil = state._atilde[i]
    new_w = w / p if kept else 0.0
    delta = new_w - w
    if delta != 0.0:
        state.current += delta * np.outer(a, a)
        state._kw += delta * np.outer(atil, atil)
    state.w[i] = new_w
    state.move_count += 1
    if state.debug_checks:
        state._assert_invariants()
    return "kept" if kept else "dropped"


def epsilon_star(state: GameState) -> float:
    """Current approximation error of sum(w_i a_i a_i^T) against M."""
    eigs = np.linalg.eigvalsh(state._kw)
    return float(np.abs(eigs - 1.0).max())


def check_win(state: GameState, cap: int | None = None) -> str:
    """"adversary_won" once the (1 +- epsilon) band is left, else "not_yet"."""
    if cap is None:
        cap = linalg.dense_cap()
    if state.n > cap:
        raise linalg.SizeCapError(f"win check on n={state.n} exceeds cap {cap}")
    return "adversary_won" if epsilon_star(state) > state.epsilon else "not_yet"


def quadratic_variation_norm(trace: GameTrace) -> float:
    """Spectral norm of the accumulated predictable quadratic variation."""
    if not trace.records:
        return 0.0
    return float(np.linalg.eigvalsh(trace.W).max())


@dataclass
class GameResult:
    trace: GameTrace
    verdict: str  # adversary_won | adversary_lost | max_moves
    moves: int


def run_strategy(
    state: GameState,
    strategy,
    max_moves: int = 100_000,
    check_every: int | None = 1,
) -> GameResult:
    """Drive a strategy callback until it passes (None), a win is detected,
    or the move cap is hit.

    check_every=k runs the win check every k-th move; None checks only at
    the end. A strategy emitting an illegal move raises IllegalMoveError.
    """
    while state.move_count < max_moves:
        pick = strategy(state)
        if pick is None:
            if check_win(state) == "adversary_won":
                return _finish(state, "adversary_won")
            return _finish(state, "adversary_lost")
        i, p = pick
        play_move(state, i, p)
        if check_every is not None and state.move_count % check_every == 0:
            verdict = check_win(state)
            state.trace.records[-1].epsilon_star = epsilon_star(state)
            if verdict == "adversary_won":
                return _finish(state, "adversary_won")
    if check_win(state) == "adversary_won":
        return _finish(state, "adversary_won")
    return _finish(state, "max_moves")


def _finish(state: GameState, verdict: str) -> GameResult:
    return GameResult(state.trace, verdict, state.move_count)


def halving_strategy():
    """Round-robin p=1/2 moves over all rows while any such move is legal."""
    cursor = {"i": 0, "since_legal": 0}

    def pick(state: GameState):
        m = state.m
        tried = 0
        while tried < m:
            i = cursor["i"]
            cursor["i"] = (i + 1) % m
            tried += 1
            if legal_move(state, i, 0.5):
                return (i, 0.5)
        return None

    return pick


def uniform_random_legal_strategy(seed: int | np.random.Generator = 0):
    """Pick a uniformly random row that admits a legal move, with p drawn
    uniformly from its legal range."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def pick(state: GameState):
        with np.errstate(divide="ignore"):
            p_min = state.alpha * state.w * state.lev
        floor = 0.5 if state.strict_half else 0.0
        p_min = np.maximum(p_min, floor)
        candidates = np.nonzero(
            (state.w > 0.0) & state.playable & (p_min <= 1.0 + 1e-12)
        )[0]
        if len(candidates) == 0:
            return None
        i = int(rng.choice(candidates))
        lo = min(max(p_min[i], 1e-9), 1.0)
        p = float(rng.uniform(lo, 1.0))
        if not legal_move(state, i, p):
            p = min(1.0, lo * _LEGALITY_SLACK)
        return (i, p)

    return pick
