import numpy as np
import pytest

import resparse.streaming as streaming
from resparse.game import legal_move, new_game, play_move
from resparse.graphs import WeightedGraph, generate, is_connected, rows_of
from resparse.linalg import exact_leverage, laplacian, spectral_epsilon
from resparse.streaming import (
    LeverageContractError,
    StreamConfig,
    buffer_from_rows,
    resparsify_once,
    stream_graph_buffer,
    stream_sparsify,
    stream_sparsify_graph,
)


def tiled_complete(n, tiles):
    """Stream of `tiles` unit-weight copies of K_n's edge list."""
    base = generate("complete", n)
    return base, tuple(base.edges) * tiles


def firing_config(epsilon=0.4, beta=16.0, buffer_rows=1200, n=30, **kw):
    """Config whose derived beta/threshold hit the requested values at n."""
    import math

    beta_coeff = beta * epsilon**2 / math.log(n)
    buffer_coeff = buffer_rows / (n * beta)
    return StreamConfig(
        epsilon=epsilon, beta_coeff=beta_coeff, buffer_coeff=buffer_coeff, **kw
    )


def test_sub_threshold_stream_is_identity():
    g = generate("complete", 12)
    cfg = StreamConfig(epsilon=0.3, seed=1)  # classical constants: no firing
    buf = stream_sparsify(rows_of(g).take(g.m), cfg)
    assert buf.resparsify_count == 0
    assert np.array_equal(buf.rows, rows_of(g).take(g.m))
    assert np.array_equal(buf.scales, np.ones(g.m))


def test_tree_streams_through_unchanged():
    g = generate("path", 30)
    out = stream_sparsify_graph(g, StreamConfig(epsilon=0.45, seed=0))
    assert out.edges == g.edges


def test_cycle_with_classical_constants_stays_connected():
    g = generate("cycle", 100)
    for seed in range(5):
        out = stream_sparsify_graph(g, StreamConfig(epsilon=0.45, seed=seed))
        assert out.edges == g.edges
        assert is_connected(out)


def test_single_pass_accounting_and_peak():
    base, edges = tiled_complete(30, 6)
    cfg = firing_config(seed=3)
    buf = stream_graph_buffer(iter(edges), cfg, n=30)
    assert buf.rows_seen == len(edges)
    assert buf.resparsify_count >= 1
    assert buf.peak_rows <= buf.threshold + 1
    assert buf.row_count <= buf.threshold


def test_output_weights_are_scale_squared():
    base, edges = tiled_complete(30, 6)
    cfg = firing_config(seed=5)
    buf = stream_graph_buffer(iter(edges), cfg, n=30)
    out = buf.to_graph()
    assert out.n == 30
    w = np.array([e[2] for e in out.edges])
    assert np.allclose(w, buf.payload["w"] * buf.scales**2)
    # every scale is a product of 1/sqrt(p) factors, so scale^2 * p-chain == 1
    chain = {}
    for rec in buf.decisions:
        for o, p, kept in zip(rec.orig, rec.p, rec.kept):
            if kept:
                chain[o] = chain.get(o, 1.0) * p
    for o, s in zip(buf.orig, buf.scales):
        assert s**2 * chain.get(o, 1.0) == pytest.approx(1.0, rel=1e-12)


def test_bridge_rows_survive_every_resparsification():
    # two dense blobs joined by a bridge; the bridge has leverage 1
    blob = generate("complete", 12)
    edges = []
    for u, v, w in blob.edges:
        edges.append((u, v, w))
        edges.append((u + 12, v + 12, w))
    edges.append((0, 12, 1.0))
    g = WeightedGraph(24, tuple(edges))
    stream_edges = g.edges * 10
    cfg = firing_config(beta=16.0, buffer_rows=800, n=24, seed=7)
    for seed in range(5):
        buf = stream_graph_buffer(
            iter(stream_edges), StreamConfig(**{**cfg.__dict__, "seed": seed}), n=24
        )
        assert buf.resparsify_count >= 1
        out = buf.to_graph()
        assert any((u, v) == (0, 12) for u, v, _ in out.edges)
        assert is_connected(out)


def test_statistical_quality_small():
    base, edges = tiled_complete(30, 10)
    total = laplacian(base) * 10
    good = 0
    for seed in range(10):
        cfg = firing_config(beta=24.0, buffer_rows=1800, seed=seed)
        buf = stream_graph_buffer(iter(edges), cfg, n=30)
        assert buf.resparsify_count >= 1
        eps = spectral_epsilon(total, laplacian(buf.to_graph()))
        if eps <= cfg.epsilon:
            good += 1
    assert good >= 8


def test_resparsify_once_deterministic_keep_branch():
    rows = rows_of(generate("path", 6)).take(5)  # leverage 1 everywhere
    cfg = firing_config(beta=4.0, n=6)
    buf = buffer_from_rows(rows, cfg)
    out = resparsify_once(buf, cfg, seed=0)
    assert np.array_equal(out.rows, rows)
    assert np.array_equal(out.scales, np.ones(5))
    assert out.resparsify_count == 1


def test_resparsify_once_quarter_probability_row():
    # single 1-d row has leverage 1; beta = 0.25 makes p = 0.25, scale 2
    import math

    epsilon = 0.4
    beta_coeff = 0.25 * epsilon**2 / math.log(2)
    cfg = StreamConfig(epsilon=epsilon, beta_coeff=beta_coeff)
    rows = np.array([[1.0]])
    kept = 0
    acc = 0.0
    trials = 10_000
    vals = []
    for seed in range(trials):
        out = resparsify_once(buffer_from_rows(rows, cfg), cfg, seed=seed)
        if out.row_count:
            kept += 1
            assert out.scales[0] == pytest.approx(2.0)
            vals.append(out.rows[0, 0] ** 2)
        else:
            vals.append(0.0)
    assert abs(kept / trials - 0.25) <= 3 * np.sqrt(0.25 * 0.75 / trials)
    vals = np.asarray(vals)
    se = vals.std(ddof=1) / np.sqrt(trials)
    assert abs(vals.mean() - 1.0) <= 3 * se  # unbiased outer product


def test_resparsify_once_expected_row_count_k40():
    g = generate("complete", 40)
    rows = rows_of(g).take(g.m)
    cfg = firing_config(beta=8.0, n=40)
    buf = buffer_from_rows(rows, cfg)
    import math

    beta = cfg.beta(40)
    tau = exact_leverage(g).values
    expect = np.minimum(1.0, beta * tau).sum()
    sigma = math.sqrt((np.minimum(1.0, beta * tau) * (1 - np.minimum(1.0, beta * tau))).sum())
    counts = [resparsify_once(buf, cfg, seed=s).row_count for s in range(200)]
    assert abs(np.mean(counts) - expect) <= 3 * sigma / math.sqrt(200) + 1e-9


def test_leverage_contract_violation_is_hard_error(monkeypatch):
    rows = rows_of(generate("complete", 8)).take(28)
    cfg = firing_config(beta=4.0, n=8)
    buf = buffer_from_rows(rows, cfg)
    monkeypatch.setattr(
        streaming, "row_leverage", lambda r: np.ones(len(r))
    )  # sums to 28 > 2n = 16
    with pytest.raises(LeverageContractError):
        resparsify_once(buf, cfg, seed=0)


def test_livelock_guard_errors_after_three_non_reducing_rounds():
    g = generate("path", 40)  # every edge is a bridge: nothing ever shrinks
    import math

    epsilon = 0.45
    beta_coeff = 1.5 * epsilon**2 / math.log(40)  # beta = 1.5 keeps bridges
    cfg = StreamConfig(
        epsilon=epsilon, beta_coeff=beta_coeff, buffer_coeff=3 / (40 * 1.5), seed=0
    )
    with pytest.raises(RuntimeError, match="shrink"):
        stream_graph_buffer(iter(g.edges), cfg, n=40)


def test_assert_space_flag():
    base, edges = tiled_complete(30, 6)
    cfg = firing_config(seed=0, assert_space=True)
    buf = stream_graph_buffer(iter(edges), cfg, n=30)  # healthy run passes
    assert buf.peak_rows <= buf.threshold + 1


def test_stream_decisions_replay_as_legal_game_moves():
    # every sampling decision must be a legal move of the row game played
    # against the full stream matrix with alpha = beta / (1 + eps)
    n, tiles = 24, 8
    base, edges = tiled_complete(n, tiles)
    cfg = firing_config(beta=24.0, buffer_rows=1200, n=n, seed=2)
    buf = stream_graph_buffer(iter(edges), cfg, n=n)
    assert buf.resparsify_count >= 1

    all_rows = np.concatenate([rows_of(base).take(base.m)] * tiles, axis=0)
    alpha = cfg.beta(n) / (1.0 + cfg.epsilon)
    state = new_game(
        all_rows,
        epsilon=cfg.epsilon,
        seed=0,
        mode="fresh",
        alpha=alpha,
        high_leverage="exclude",
        track_norms=False,
    )
    total = laplacian(base) * tiles
    final_eps = spectral_epsilon(total, laplacian(buf.to_graph()))
    assert final_eps <= cfg.epsilon  # induction hypothesis held on this seed

    for rec in buf.decisions:
        for o, w_before, p, kept in zip(rec.orig, rec.w_before, rec.p, rec.kept):
            i = int(o)
            assert state.w[i] == pytest.approx(w_before, rel=1e-9)
            assert legal_move(state, i, float(p))
            play_move(state, i, float(p), force_outcome="kept" if kept else "dropped")

    # surviving game weights reproduce the buffer's squared scalings
    kept_w = {int(o): s**2 for o, s in zip(buf.orig, buf.scales)}
    for i in range(len(all_rows)):
        if state.w[i] not in (0.0, 1.0):
            assert state.w[i] == pytest.approx(kept_w[i], rel=1e-9)
