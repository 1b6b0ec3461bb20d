import math

import numpy as np
import pytest

from resparse.game import legal_move, new_game, play_move
from resparse.graphs import WeightedGraph, generate, rows_of
from resparse.linalg import exact_leverage, laplacian, spectral_epsilon
from resparse.parallel import (
    DESK_SCALE,
    ParallelConfig,
    forest_decomposition,
    parallel_sparsify,
)
from resparse.spanner import spanner_estimate_detailed


def support_multiset(g):
    from collections import Counter

    return Counter((min(u, v), max(u, v)) for u, v, _ in g.edges)


def test_below_threshold_returns_input_unchanged():
    g = generate("gnp", 60, seed=0, p=0.3)
    cfg = ParallelConfig(epsilon=0.5, seed=0)  # classical constants
    res = parallel_sparsify(g, cfg)
    assert res.n_rounds == 0
    assert res.graph.edges == g.edges
    with pytest.raises(ValueError, match="no rounds"):
        forest_decomposition(res)


def test_desk_run_mechanics_g200():
    g = generate("gnp", 200, seed=3, p=0.3)
    cfg = ParallelConfig(epsilon=0.5, seed=1, **{**DESK_SCALE, "stop_coeff": 0.06})
    res = parallel_sparsify(g, cfg)
    assert 1 <= res.n_rounds <= cfg.rounds_cap(200)
    assert res.graph.m <= res.stop_threshold
    # monotone support: the output's edges are a sub-multiset of the input's
    assert support_multiset(res.graph) <= support_multiset(g)
    # weights are original weight divided by the product of keep probabilities
    for idx, (u, v, w) in zip(res.orig_indices, res.graph.edges):
        ou, ov, ow = g.edges[idx]
        assert (min(u, v), max(u, v)) == (min(ou, ov), max(ou, ov))
        assert w >= ow - 1e-12  # probabilities <= 1 only increase weight
    mult = {int(i): 1.0 for i in range(g.m)}
    for dec in res.decisions:
        for o, p, kept in zip(dec.orig, dec.p, dec.kept):
            if kept:
                mult[int(o)] /= p
    for idx, (u, v, w) in zip(res.orig_indices, res.graph.edges):
        assert w == pytest.approx(g.edges[idx][2] * mult[int(idx)], rel=1e-9)


def test_spanner_edges_keep_weight_in_single_round():
    g = generate("gnp", 200, seed=5, p=0.3)
    cfg = ParallelConfig(epsilon=0.5, seed=2, **{**DESK_SCALE, "stop_coeff": 0.072})
    res = parallel_sparsify(g, cfg)
    assert res.n_rounds == 1
    tagged = [i for i, t in enumerate(res.forest_tags) if t is not None]
    assert tagged
    for i in tagged:
        orig = res.orig_indices[i]
        assert res.graph.edges[i][2] == pytest.approx(g.edges[orig][2])
    # one-round decomposition fits in the single peel budget
    assert forest_decomposition(res) <= res.peel_k * res.forest_t


def test_round_log_csv_columns():
    g = generate("gnp", 200, seed=5, p=0.3)
    cfg = ParallelConfig(epsilon=0.5, seed=2, **{**DESK_SCALE, "stop_coeff": 0.072})
    res = parallel_sparsify(g, cfg)
    lines = res.round_log_csv().strip().splitlines()
    assert lines[0] == "round,edges_in,edges_out,spanner_edges,epsilon_star,epsilon_kind"
    assert len(lines) == res.n_rounds + 1
    assert lines[1].startswith("1,")


def test_frozen_round_unbiasedness():
    g = generate("complete", 12)
    alpha = 3.0
    est, _ = spanner_estimate_detailed(g, 2.0 * alpha, seed=0, c_k=0.3)
    p = np.minimum(1.0, alpha * est.values)
    assert (p < 1.0).any()
    B = rows_of(g).take(g.m)
    L = laplacian(g)
    trials = 2000
    rng = np.random.default_rng(42)
    keeps = rng.random((trials, g.m)) < p
    scaled = keeps / p
    Ls = np.einsum("tm,mi,mj->tij", scaled, B, B)
    mean = Ls.mean(axis=0)
    se = Ls.std(axis=0, ddof=1) / math.sqrt(trials)
    assert (np.abs(mean - L) <= 3.0 * se + 1e-9).all()


def test_geometric_decrease_and_quality_desk():
    g = generate("gnp", 400, seed=0, p=0.2)
    good = 0
    for seed in range(5):
        cfg = ParallelConfig(epsilon=0.5, seed=seed, **DESK_SCALE)
        res = parallel_sparsify(g, cfg)
        counts = [res.rounds[0].edges_in] + [r.edges_out for r in res.rounds]
        ratios = [b / a for a, b in zip(counts, counts[1:]) if a > res.stop_threshold]
        assert max(ratios) <= 0.93
        if res.rounds[-1].epsilon_star <= cfg.epsilon:
            good += 1
    assert good >= 4


def test_whole_run_replays_as_legal_game():
    # honest-domination configuration: full-depth peeling on a dense graph,
    # so every sampled (p < 1) decision is a legal game move against L_G
    g = generate("complete", 150)
    cfg = ParallelConfig(
        epsilon=0.4,
        alpha_override=2.0,
        estimate_ratio=2.0,
        c_k=3.0,
        stop_coeff=3.9,
        seed=4,
        measure_epsilon=False,
    )
    res = parallel_sparsify(g, cfg)
    assert res.n_rounds >= 1
    exact = exact_leverage(g).values
    est, peel = spanner_estimate_detailed(g, cfg.estimate_ratio * 2.0, seed=0, c_k=3.0)
    assert (est.values >= exact - 1e-12).all()  # domination holds here

    alpha_game = 2.0 / (1.0 + cfg.epsilon)
    state = new_game(
        g,
        epsilon=cfg.epsilon,
        seed=0,
        mode="fresh",
        alpha=alpha_game,
        high_leverage="exclude",
        track_norms=False,
    )
    moves = 0
    for dec in res.decisions:
        for o, wmul, p, kept in zip(dec.orig, dec.w_multiplier, dec.p, dec.kept):
            i = int(o)
            assert state.w[i] == pytest.approx(wmul, rel=1e-9)
            assert legal_move(state, i, float(p))
            play_move(state, i, float(p), force_outcome="kept" if kept else "dropped")
            moves += 1
    assert moves > 0
    # final accumulated weights match the output graph's multipliers
    out_mult = {int(i): None for i in range(g.m)}
    for idx, (u, v, w) in zip(res.orig_indices, res.graph.edges):
        out_mult[int(idx)] = w / g.edges[idx][2]
    for i in range(g.m):
        expected = out_mult[i]
        if expected is None:
            assert state.w[i] in (0.0, 1.0)
        else:
            assert state.w[i] == pytest.approx(expected, rel=1e-9)


def test_misconfigured_constants_raise():
    g = generate("path", 50)  # bridges only: nothing is ever sampled away
    cfg = ParallelConfig(
        epsilon=0.4, alpha_override=1.0, stop_coeff=1e-9, c_k=0.1, max_rounds=3, seed=0
    )
    with pytest.raises(RuntimeError, match="misconfigured"):
        parallel_sparsify(g, cfg)


def test_deterministic_and_thread_invariant():
    g = generate("gnp", 120, seed=7, p=0.35)
    cfg = dict(epsilon=0.5, seed=9, **{**DESK_SCALE, "stop_coeff": 0.09})
    a = parallel_sparsify(g, ParallelConfig(**cfg))
    b = parallel_sparsify(g, ParallelConfig(**cfg))
    c = parallel_sparsify(g, ParallelConfig(**cfg, threads=4))
    assert a.graph.edges == b.graph.edges == c.graph.edges


def test_disconnected_input_handled_per_component():
    blob = generate("gnp", 60, seed=1, p=0.4)
    edges = list(blob.edges) + [(u + 60, v + 60, w) for u, v, w in blob.edges]
    g = WeightedGraph(120, tuple(edges))
    cfg = ParallelConfig(epsilon=0.5, seed=3, **{**DESK_SCALE, "stop_coeff": 0.06})
    res = parallel_sparsify(g, cfg)
    assert support_multiset(res.graph) <= support_multiset(g)
    assert res.graph.m <= g.m


def test_config_validation():
    with pytest.raises(ValueError):
        ParallelConfig(epsilon=0.6)
    with pytest.raises(ValueError):
        ParallelConfig(epsilon=0.4, estimate_ratio=0.5)
    with pytest.raises(ValueError):
        ParallelConfig(epsilon=0.4, stop_coeff=0.0)
